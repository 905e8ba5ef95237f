//! Length spectrum of one flat-knot signature: seed curves are flowed by
//! curve shortening, refined to closed geodesics, filtered and deduplicated.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed::{refine_closed, ClosedGeodesic, Floquet, RefineOptions};
use crate::csf::{run, Fate, RunPolicy, StepPolicy};
use crate::curve::DiscreteCurve;
use crate::error::{GeoError, Result};
use crate::knots::{parity_consistent, signature_detail, FlatKnotSignature, HomotopyLabel};
use crate::surface::SurfaceModel;
use crate::variational::{analyze, CriticalSetKind};

/// Random smooth seed curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedFamily {
    /// Pole-to-pole loops invariant under the half turn `theta -> theta + pi`
    /// (sphere-type surfaces).
    HalfTurnMeridian { amplitude: f64, modes: usize },
    /// Perturbed straight loops in a torus homology class. `class` is the
    /// homotopy label `(m, n)`. With `symmetry = s > 0` only harmonics
    /// `s (2j + 1)` are used, so the seed is invariant under a shift by `1/(2s)`
    /// of its period combined with the reflection across the unperturbed line.
    Homology {
        class: [i64; 2],
        amplitude: f64,
        modes: usize,
        #[serde(default)]
        symmetry: usize,
    },
    /// Perturbed coordinate circles with random center.
    Loop { radius: [f64; 2], amplitude: f64, modes: usize },
}

/// Partial signature; `None` fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignatureFilter {
    pub self_x: Option<usize>,
    pub ref_x: Option<Vec<usize>>,
    pub htpy: Option<HomotopyLabel>,
    pub primitive: Option<bool>,
}

impl SignatureFilter {
    pub fn exact(sig: &FlatKnotSignature) -> Self {
        Self { self_x: Some(sig.self_x), ref_x: Some(sig.ref_x.clone()), htpy: Some(sig.htpy), primitive: Some(sig.primitive) }
    }

    pub fn matches(&self, sig: &FlatKnotSignature) -> bool {
        self.self_x.map_or(true, |x| x == sig.self_x)
            && self.ref_x.as_ref().map_or(true, |x| *x == sig.ref_x)
            && self.htpy.map_or(true, |x| x == sig.htpy)
            && self.primitive.map_or(true, |x| x == sig.primitive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumPolicy {
    pub seeds: usize,
    pub seed: u64,
    /// Vertex spacing of seed curves; also the deduplication scale.
    pub spacing: f64,
    pub flow: RunPolicy,
    pub refine_nodes: usize,
    pub sl_nodes: usize,
    pub broken_ks: Vec<usize>,
    /// Unconverged runs are refined from their calmest frame if its
    /// `max|kappa|` is below this.
    pub refine_kappa: f64,
}

impl Default for SpectrumPolicy {
    fn default() -> Self {
        Self {
            seeds: 64,
            seed: 1,
            spacing: 0.05,
            flow: RunPolicy { step: StepPolicy::semi_implicit(), t_max: 400.0, frame_every: 50, ..RunPolicy::default() },
            refine_nodes: 32,
            sl_nodes: 256,
            broken_ks: vec![16, 32],
            refine_kappa: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Isolated,
    /// One member of a continuous family (orthogonal Jacobi field present).
    Circle,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEntry {
    pub id: usize,
    pub length: f64,
    pub index: usize,
    pub nullity: usize,
    pub orth_nullity: usize,
    pub floquet: Floquet,
    pub family: Family,
    pub signature: FlatKnotSignature,
    pub min_sin_angle: f64,
    pub closure_gap: f64,
    #[serde(skip)]
    pub geodesic: ClosedGeodesic,
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthValue {
    pub length: f64,
    pub multiplicity: usize,
    pub family: Family,
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseRow {
    pub id: usize,
    pub length: f64,
    pub kind: CriticalSetKind,
    /// `(degree, rank)` pairs of the local homology.
    pub ranks: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub id: usize,
    pub fate: String,
    pub steps: usize,
    pub refined: bool,
    pub matched: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub filter: SignatureFilter,
    pub metric: serde_json::Value,
    pub entries: Vec<SpectrumEntry>,
    pub lengths: Vec<LengthValue>,
    pub morse_table: Vec<MorseRow>,
    pub seeds: Vec<SeedOutcome>,
    pub parity_violation: bool,
    pub diagnostics: Vec<String>,
}

fn fourier(rng: &mut ChaCha8Rng, amplitude: f64, modes: usize) -> Vec<(f64, f64)> {
    (1..=modes).map(|k| (amplitude * rng.gen_range(-1.0..1.0) / (k * k) as f64, rng.gen_range(0.0..TAU))).collect()
}

fn eval_fourier(c: &[(f64, f64)], x: f64) -> f64 {
    c.iter().enumerate().map(|(k, (a, p))| a * ((k + 1) as f64 * x + p).sin()).sum()
}

/// Seed number `id`; every seed has its own stream so batches are order-independent.
pub fn seed_curve(surf: &SurfaceModel, family: &SeedFamily, spacing: f64, seed: u64, id: usize) -> Result<DiscreteCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    match family {
        SeedFamily::HalfTurnMeridian { amplitude, modes } => {
            let l = surf.sphere_length().ok_or_else(|| GeoError::Unsupported("meridian seeds need a sphere-type surface".into()))?;
            let theta0 = rng.gen_range(0.0..TAU);
            let coef = fourier(&mut rng, *amplitude, *modes);
            let n = ((2.0 * l / spacing).round() as usize).max(32) & !1;
            DiscreteCurve::from_fn(surf, n, spacing, |u| {
                let s = 2.0 * l * u;
                let r = if s <= l { s } else { 2.0 * l - s };
                let bump = (PI * r / l).sin() * eval_fourier(&coef, PI * r / l);
                let side = if s <= l { 0.0 } else { PI };
                [r, theta0 + side + bump]
            })
        }
        SeedFamily::Homology { class, amplitude, modes, symmetry } => {
            if surf.genus() != 1 {
                return Err(GeoError::Unsupported("homology seeds need a torus".into()));
            }
            let per = surf.canonical_periods();
            let (p0, p1) = (per[0].unwrap_or(TAU), per[1].unwrap_or(TAU));
            let (w0, w1) = if crate::knots::revolution_torus(surf) { (class[1], class[0]) } else { (class[0], class[1]) };
            let d = [w0 as f64 * p0, w1 as f64 * p1];
            let dl = d[0].hypot(d[1]);
            if dl == 0.0 {
                return Err(GeoError::Config("homology seeds need a nonzero class".into()));
            }
            let nu = [-d[1] / dl, d[0] / dl];
            let mut base = [rng.gen_range(0.0..p0), rng.gen_range(0.0..p1)];
            if *symmetry > 0 && crate::knots::revolution_torus(surf) {
                // the reflection line must be an equator
                base[0] = if rng.gen_bool(0.5) { 0.0 } else { 0.5 * p0 };
            }
            let coef = fourier(&mut rng, *amplitude, *modes);
            let harmonic = |j: usize| if *symmetry > 0 { symmetry * (2 * j + 1) } else { j + 1 };
            let f = |u: f64| {
                let o: f64 = coef.iter().enumerate().map(|(j, (a, p))| a * (harmonic(j) as f64 * TAU * u + p).sin()).sum();
                [base[0] + u * d[0] + o * nu[0], base[1] + u * d[1] + o * nu[1]]
            };
            if *symmetry > 0 {
                let m = 2 * symmetry;
                let len = DiscreteCurve::from_fn(surf, 512, spacing, f)?.length(surf);
                let n = ((len / spacing / m as f64).round() as usize).max(16usize.div_ceil(m)) * m;
                DiscreteCurve::from_fn(surf, n, spacing, f)
            } else {
                DiscreteCurve::sampled(surf, spacing, f)
            }
        }
        SeedFamily::Loop { radius, amplitude, modes } => {
            let per = surf.canonical_periods();
            let c0 = match surf.sphere_length() {
                Some(l) => rng.gen_range(0.3 * l..0.7 * l),
                None => rng.gen_range(0.0..per[0].unwrap_or(1.0)),
            };
            let c1 = rng.gen_range(0.0..per[1].unwrap_or(TAU));
            let r = rng.gen_range(radius[0]..radius[1]);
            let coef = fourier(&mut rng, *amplitude, *modes);
            DiscreteCurve::sampled(surf, spacing, |u| {
                let a = TAU * u;
                let rr = r * (1.0 + eval_fourier(&coef, a));
                [c0 + rr * a.cos(), c1 + rr * a.sin()]
            })
        }
    }
}

/// Polygon through the samples of a closed geodesic.
pub fn geodesic_curve(surf: &SurfaceModel, gamma: &ClosedGeodesic, spacing: f64) -> Result<DiscreteCurve> {
    let mut pts = gamma.points();
    pts.pop();
    DiscreteCurve::new(surf, pts, spacing)
}

/// Symmetric Hausdorff distance between two closed geodesics, measured in
/// locator coordinates on up to 256 samples each.
pub fn hausdorff(surf: &SurfaceModel, a: &ClosedGeodesic, b: &ClosedGeodesic) -> f64 {
    let pick = |g: &ClosedGeodesic| -> Vec<[f64; 3]> {
        let stride = (g.samples.len() / 256).max(1);
        g.samples.iter().step_by(stride).map(|s| surf.locator(&s.state.base)).collect()
    };
    let (pa, pb) = (pick(a), pick(b));
    let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(&pa, &pb).max(one(&pb, &pa))
}

struct Found {
    entry: SpectrumEntry,
    morse: Option<MorseRow>,
}

fn family_seed(surf: &SurfaceModel, family: &SeedFamily, policy: &SpectrumPolicy, id: usize) -> (Result<DiscreteCurve>, RunPolicy) {
    let mut flow_policy = policy.flow;
    if let SeedFamily::Homology { symmetry, .. } = family {
        if *symmetry > 0 {
            flow_policy.step.vertex_multiple = 2 * symmetry;
        }
    }
    (seed_curve(surf, family, policy.spacing, policy.seed, id), flow_policy)
}

fn process_seed(
    surf: &SurfaceModel,
    refs: &[DiscreteCurve],
    filter: &SignatureFilter,
    seed: Result<DiscreteCurve>,
    flow_policy: RunPolicy,
    policy: &SpectrumPolicy,
    id: usize,
) -> (SeedOutcome, Option<Found>) {
    let mut out = SeedOutcome { id, fate: String::new(), steps: 0, refined: false, matched: false, note: None };
    let seed = match seed {
        Ok(c) => c,
        Err(e) => {
            out.fate = "seed_failed".into();
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    // the flow keeps the flat knot type until a singularity, after which
    // nothing is refined, so a mismatched seed can be dropped up front
    match signature_detail(surf, &seed, refs) {
        Ok((sig, _)) if !filter.matches(&sig) => {
            out.fate = "rejected_by_signature".into();
            out.note = Some(format!("seed signature {sig:?}"));
            return (out, None);
        }
        Ok(_) => {}
        Err(e) => out.note = Some(format!("seed signature unavailable: {e}")),
    }
    let flow = match run(surf, &seed, &flow_policy) {
        Ok(f) => f,
        Err(e) => {
            out.fate = "flow_failed".into();
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    out.fate = flow.fate.name().into();
    out.steps = flow.steps;
    let start = match flow.fate {
        Fate::ConvergedToGeodesic { .. } => flow.final_curve().clone(),
        Fate::Truncated { .. } => {
            let best = flow.frames.iter().min_by(|a, b| a.max_kappa.total_cmp(&b.max_kappa)).expect("frames");
            if best.max_kappa > policy.refine_kappa {
                return (out, None);
            }
            out.note = Some(format!("refined from frame at step {}", best.step));
            best.curve.clone()
        }
        _ => return (out, None),
    };
    let mut gamma = match refine_closed(surf, &start.vertices, policy.refine_nodes, &RefineOptions::default()) {
        Ok(g) => g,
        Err(e) => {
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    out.refined = true;
    let curve = match geodesic_curve(surf, &gamma, policy.spacing) {
        Ok(c) => c,
        Err(e) => {
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    let (sig, min_sin) = match signature_detail(surf, &curve, refs) {
        Ok(s) => s,
        Err(e) => {
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    if !filter.matches(&sig) {
        return (out, None);
    }
    out.matched = true;
    let rep = match analyze(surf, &mut gamma, policy.sl_nodes, &policy.broken_ks) {
        Ok(r) => r,
        Err(e) => {
            out.note = Some(e.to_string());
            return (out, None);
        }
    };
    gamma.signature = Some(sig.clone());
    let family = if rep.orth_nullity >= 1 { Family::Circle } else { Family::Isolated };
    let morse = rep.local_homology.clone().map(|ranks| MorseRow {
        id,
        length: gamma.length,
        kind: if rep.nullity == 1 { CriticalSetKind::Point } else { CriticalSetKind::CircleOrientable },
        ranks,
    });
    let entry = SpectrumEntry {
        id,
        length: gamma.length,
        index: rep.index,
        nullity: rep.nullity,
        orth_nullity: rep.orth_nullity,
        floquet: rep.monodromy.floquet,
        family,
        signature: sig,
        min_sin_angle: min_sin,
        closure_gap: gamma.diagnostics.closure_gap,
        geodesic: gamma,
    };
    (out, Some(Found { entry, morse }))
}

/// Seeds, flows, refines and filters; entries are distinct geodesics sorted by
/// length. Seed `i` is drawn from `families[i % families.len()]`.
pub fn spectrum(
    surf: &SurfaceModel,
    refs: &[DiscreteCurve],
    filter: &SignatureFilter,
    families: &[SeedFamily],
    policy: &SpectrumPolicy,
) -> Result<SpectrumReport> {
    spectrum_with_seeds(surf, refs, filter, families, &[], policy)
}

/// [`spectrum`] with additional explicit seed curves, numbered after the
/// family seeds and flowed with `policy.flow`.
pub fn spectrum_with_seeds(
    surf: &SurfaceModel,
    refs: &[DiscreteCurve],
    filter: &SignatureFilter,
    families: &[SeedFamily],
    extra: &[DiscreteCurve],
    policy: &SpectrumPolicy,
) -> Result<SpectrumReport> {
    if families.is_empty() && extra.is_empty() {
        return Err(GeoError::Config("spectrum needs at least one seed family".into()));
    }
    let metric = serde_json::to_value(surf.spec()).map_err(|e| GeoError::Config(e.to_string()))?;
    let mut report = SpectrumReport {
        filter: filter.clone(),
        metric,
        entries: Vec::new(),
        lengths: Vec::new(),
        morse_table: Vec::new(),
        seeds: Vec::new(),
        parity_violation: false,
        diagnostics: Vec::new(),
    };
    // ref_x parities are fixed by homology
    if let Some(rx) = &filter.ref_x {
        let htpy = filter.htpy.or(if surf.genus() == 0 { Some(HomotopyLabel::Trivial) } else { None });
        if let Some(htpy) = htpy {
            let labels: Vec<HomotopyLabel> =
                refs.iter().map(|r| crate::knots::homotopy_label(surf, r).map(|l| l.0)).collect::<Result<_>>()?;
            let probe = FlatKnotSignature { self_x: 0, ref_x: rx.clone(), htpy, primitive: true };
            if !parity_consistent(&probe, &labels) {
                report.parity_violation = true;
                report.diagnostics.push(format!("filter ref_x {rx:?} violates the intersection parity of class {htpy:?}"));
                return Ok(report);
            }
        }
    }
    let n_family = if families.is_empty() { 0 } else { policy.seeds };
    let results: Vec<(SeedOutcome, Option<Found>)> = (0..n_family + extra.len())
        .into_par_iter()
        .map(|id| {
            let (seed, flow) = if id < n_family {
                family_seed(surf, &families[id % families.len()], policy, id)
            } else {
                (Ok(extra[id - n_family].clone()), policy.flow)
            };
            process_seed(surf, refs, filter, seed, flow, policy, id)
        })
        .collect();
    let mut found = Vec::new();
    for (o, f) in results {
        report.seeds.push(o);
        if let Some(f) = f {
            found.push(f);
        }
    }
    if !report.seeds.iter().any(|s| s.fate == "converged_to_geodesic") {
        report.diagnostics.push("no seed converged".into());
    }
    found.sort_by(|a, b| a.entry.length.total_cmp(&b.entry.length).then(a.entry.id.cmp(&b.entry.id)));
    let mut kept: Vec<Found> = Vec::new();
    for f in found {
        let thr = policy.spacing.max(1e-6 * f.entry.length);
        let dup = kept.iter().any(|k| {
            (k.entry.length - f.entry.length).abs() < thr && hausdorff(surf, &k.entry.geodesic, &f.entry.geodesic) <= thr
        });
        if !dup {
            kept.push(f);
        }
    }
    for f in &kept {
        let tol = 1e-7 * f.entry.length.max(1.0);
        match report.lengths.last_mut() {
            Some(v) if (v.length - f.entry.length).abs() <= tol => v.multiplicity += 1,
            _ => report.lengths.push(LengthValue { length: f.entry.length, multiplicity: 1, family: f.entry.family.clone() }),
        }
    }
    for f in kept {
        if let Some(m) = f.morse {
            report.morse_table.push(m);
        }
        report.entries.push(f.entry);
    }
    Ok(report)
}
