use geoflow_core::curve::DiscreteCurve;
use geoflow_core::knots::HomotopyLabel;
use geoflow_core::spectrum::{spectrum_with_seeds, SignatureFilter, SpectrumEntry, SpectrumPolicy, SpectrumReport};
use geoflow_core::surface::SurfaceModel;
use geoflow_core::variational::analyze;
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::io::csv;
use crate::{to_value, Artifact, CliError, CliResult, Outcome};

fn entry_csv(e: &SpectrumEntry) -> Vec<u8> {
    super::geodesic_csv(&e.geodesic)
}

fn lengths_csv(rep: &SpectrumReport) -> Vec<u8> {
    csv(
        &["id", "length", "index", "nullity", "closure_gap", "min_sin_angle"],
        rep.entries.iter().map(|e| vec![e.id as f64, e.length, e.index as f64, e.nullity as f64, e.closure_gap, e.min_sin_angle]),
    )
}

fn policy_with_seed(policy: &SpectrumPolicy, seed: u64) -> SpectrumPolicy {
    SpectrumPolicy { seed, ..policy.clone() }
}

pub fn run_spectrum(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::Spectrum { references, filter, families, policy } = &cfg.experiment else { unreachable!() };
    let surf = super::surface(cfg)?;
    let refs: Vec<DiscreteCurve> = references.iter().map(|r| super::curve(&surf, r, cfg)).collect::<CliResult<_>>()?;
    let rep = spectrum_with_seeds(&surf, &refs, filter, families, &[], &policy_with_seed(policy, cfg.seed))?;
    let passed = !rep.entries.is_empty() && !rep.parity_violation;
    let mut artifacts = vec![Artifact::new("lengths.csv", lengths_csv(&rep))];
    for e in &rep.entries {
        artifacts.push(Artifact::new(&format!("geodesic_{:03}.csv", e.id), entry_csv(e)));
    }
    let verdict = format!("{} distinct closed geodesics", rep.entries.len());
    Ok(Outcome { passed, verdict, result: to_value(&rep), artifacts })
}

pub fn theorem_c_filter() -> SignatureFilter {
    SignatureFilter { self_x: Some(0), ref_x: Some(vec![2, 2]), htpy: Some(HomotopyLabel::Trivial), primitive: Some(true) }
}

pub fn run_theorem_c(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::TheoremC { perturbation, families, policy, extra_seeds, length_window } = &cfg.experiment else { unreachable!() };
    let base = super::surface(cfg)?;
    let (cap, cylinder) = base.model_sphere_parts().ok_or_else(|| CliError::Usage("theorem_c needs a model sphere surface".into()))?;
    let r0 = cap.r0;
    let l = base.sphere_length().expect("model sphere is sphere-type");
    let surf: SurfaceModel = match perturbation {
        Some(f) => base.conformal(f.clone())?,
        None => base.clone(),
    };
    let policy = policy_with_seed(policy, cfg.seed);
    let refs = vec![DiscreteCurve::parallel(&surf, r0, policy.spacing)?, DiscreteCurve::parallel(&surf, r0 + cylinder, policy.spacing)?];
    let extra: Vec<DiscreteCurve> = extra_seeds.iter().map(|s| super::curve(&surf, s, cfg)).collect::<CliResult<_>>()?;
    let filter = theorem_c_filter();
    let rep = spectrum_with_seeds(&surf, &refs, &filter, families, &extra, &policy)?;
    let target = 2.0 * l;
    let best = rep
        .entries
        .iter()
        .filter(|e| ((e.length - target) / target).abs() <= *length_window)
        .min_by(|a, b| (a.length - target).abs().total_cmp(&(b.length - target).abs()));
    let mut artifacts = vec![Artifact::new("lengths.csv", lengths_csv(&rep))];
    let (passed, best_value) = match best {
        Some(e) => {
            let mut g = e.geodesic.clone();
            let idx = analyze(&surf, &mut g, policy.sl_nodes, &policy.broken_ks)?;
            artifacts.push(Artifact::new("geodesic.csv", super::geodesic_csv(&g)));
            let v = json!({
                "id": e.id,
                "length": e.length,
                "relative_length_deviation": (e.length - target) / target,
                "signature": to_value(&e.signature),
                "closure_gap": e.closure_gap,
                "min_sin_angle": e.min_sin_angle,
                "index_report": to_value(&idx),
            });
            (true, v)
        }
        None => (false, serde_json::Value::Null),
    };
    let result = json!({
        "perturbation": to_value(perturbation),
        "unperturbed_meridian_length": target,
        "length_window": length_window,
        "found": best_value,
        "spectrum": to_value(&rep),
    });
    let verdict = if passed { "found simple geodesic meeting each cap equator twice" } else { "no matching geodesic found" };
    Ok(Outcome { passed, verdict: verdict.into(), result, artifacts })
}
