use geoflow_core::closed::{refine_closed, ClosedGeodesic, RefineOptions};
use geoflow_core::knots::signature;
use geoflow_core::spectrum::{geodesic_curve, spectrum, SignatureFilter, SpectrumPolicy};
use geoflow_core::surface::SurfaceModel;
use geoflow_core::variational::analyze;
use serde::Serialize;
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::{to_value, Artifact, CliError, CliResult, Outcome};

/// Relative slack on the conformal length bracket.
pub const BRACKET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub source: String,
    pub length: f64,
    pub signature_matches: bool,
    pub length_change: f64,
    pub within_epsilon: bool,
    pub within_bracket: bool,
}

fn judge(surf: &SurfaceModel, source: &str, h: &ClosedGeodesic, spacing: f64, target: &geoflow_core::knots::FlatKnotSignature, l: f64, eps: f64, delta: f64) -> Candidate {
    let matches = geodesic_curve(surf, h, spacing).and_then(|c| signature(surf, &c, &[])).map_or(false, |s| s == *target);
    let dl = h.length - l;
    let slack = BRACKET_SLACK * l;
    Candidate {
        source: source.into(),
        length: h.length,
        signature_matches: matches,
        length_change: dl,
        within_epsilon: dl.abs() < eps,
        within_bracket: h.length >= l / delta - slack && h.length <= l * delta + slack,
    }
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::Stability { geodesic, perturbation, epsilon, families, policy, refine_nodes } = &cfg.experiment else { unreachable!() };
    if !(*epsilon > 0.0) {
        return Err(CliError::Usage("epsilon must be positive".into()));
    }
    let surf = super::surface(cfg)?;
    let mut g = super::geodesic(&surf, geodesic, &cfg.tolerances)?;
    let g_index = analyze(&surf, &mut g, policy.sl_nodes, &policy.broken_ks)?;
    if g_index.nullity != 1 {
        return Err(CliError::Usage(format!("geodesic is degenerate (nullity {}); stability needs nullity 1", g_index.nullity)));
    }
    let spacing = policy.spacing;
    let sig = signature(&surf, &geodesic_curve(&surf, &g, spacing)?, &[])?;
    let h_surf = surf.conformal(perturbation.clone())?;
    let delta = perturbation.sup_norm().exp();

    let mut candidates = Vec::new();
    let mut best: Option<ClosedGeodesic> = None;
    let mut seed = g.points();
    seed.pop();
    let refined = refine_closed(&h_surf, &seed, *refine_nodes, &RefineOptions::default());
    let mut notes = Vec::new();
    match refined {
        Ok(h) => {
            let c = judge(&h_surf, "continuation", &h, spacing, &sig, g.length, *epsilon, delta);
            if c.signature_matches && c.within_epsilon {
                best = Some(h);
            }
            candidates.push(c);
        }
        Err(e) => notes.push(format!("continuation failed: {e}")),
    }
    if best.is_none() && !families.is_empty() {
        let p = SpectrumPolicy { seed: cfg.seed, ..policy.clone() };
        let rep = spectrum(&h_surf, &[], &SignatureFilter::exact(&sig), families, &p)?;
        for e in rep.entries {
            let c = judge(&h_surf, &format!("search:{}", e.id), &e.geodesic, spacing, &sig, g.length, *epsilon, delta);
            let good = c.signature_matches && c.within_epsilon;
            candidates.push(c);
            if good && best.as_ref().map_or(true, |b| (e.length - g.length).abs() < (b.length - g.length).abs()) {
                best = Some(e.geodesic);
            }
        }
    }
    let mut artifacts = vec![Artifact::new("g.csv", super::geodesic_csv(&g))];
    let found = match best {
        Some(mut h) => {
            let idx = analyze(&h_surf, &mut h, policy.sl_nodes, &policy.broken_ks)?;
            artifacts.push(Artifact::new("h.csv", super::geodesic_csv(&h)));
            Some((h.length, idx))
        }
        None => None,
    };
    let passed = found.is_some() && candidates.iter().any(|c| c.signature_matches && c.within_epsilon && c.within_bracket);
    let result = json!({
        "g": { "length": g.length, "signature": to_value(&sig), "index_report": to_value(&g_index) },
        "perturbation": to_value(perturbation),
        "sup_abs_f": perturbation.sup_norm(),
        "delta": delta,
        "epsilon": epsilon,
        "length_bracket": [g.length / delta, g.length * delta],
        "candidates": to_value(&candidates),
        "h": found.map(|(l, idx)| json!({ "length": l, "length_change": l - g.length, "index_report": to_value(&idx) })),
        "notes": notes,
    });
    let verdict = if passed { "persisting geodesic found" } else { "no persisting geodesic found" };
    Ok(Outcome { passed, verdict: verdict.into(), result, artifacts })
}
