//! Birkhoff annuli over closed geodesics, hitting-time scans of the unit
//! tangent bundle and face audits of geodesic arrangements.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed::ClosedGeodesic;
use crate::error::{GeoError, Result};
use crate::geodesic::{hitting_time, propagate, CapRotor, FlowOptions, SampledCurve, Target, UnitTangent};
use crate::ode::Tolerance;
use crate::surface::{wrap, ChartPoint, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Half of the unit normal bundle over a closed geodesic: vectors `v` at
/// `gamma(t)` with `+-g(n(t), v) >= 0`.
#[derive(Debug, Clone)]
pub struct BirkhoffAnnulus {
    pub geodesic: usize,
    pub side: Side,
    pub length: f64,
    start: UnitTangent,
    opts: FlowOptions,
}

/// Annuli `A^+` and `A^-` for every geodesic.
pub fn annuli_of(geodesics: &[ClosedGeodesic]) -> Vec<BirkhoffAnnulus> {
    let opts = FlowOptions { tol: Tolerance::new(1e-12, 1e-13), ..FlowOptions::default() };
    geodesics
        .iter()
        .enumerate()
        .flat_map(|(i, g)| {
            [Side::Plus, Side::Minus].map(|side| BirkhoffAnnulus { geodesic: i, side, length: g.length, start: g.start, opts })
        })
        .collect()
}

/// Boundary circles `+-gamma'` of the annuli.
pub fn boundary_circle_count(annuli: &[BirkhoffAnnulus]) -> usize {
    2 * annuli.len()
}

impl BirkhoffAnnulus {
    fn base(&self, surf: &SurfaceModel, t: f64) -> Result<UnitTangent> {
        propagate(surf, &self.start, t.rem_euclid(self.length), &self.opts)
    }

    /// The vector at `gamma(t)` rotated by `xi` in `[0, pi]` toward this side.
    pub fn at(&self, surf: &SurfaceModel, t: f64, xi: f64) -> Result<UnitTangent> {
        let b = self.base(surf, t)?;
        Ok(UnitTangent::new(b.base, b.angle + self.side.sign() * xi))
    }

    /// Inverse of [`BirkhoffAnnulus::at`] for vectors based on the geodesic
    /// within `h`; `None` off the geodesic or on the other side.
    pub fn param_of(&self, surf: &SurfaceModel, v: &UnitTangent, h: f64) -> Result<Option<(f64, f64)>> {
        let n = ((self.length / 0.01).ceil() as usize).max(64);
        let q = v.base;
        let dist = |t: f64| -> Result<f64> {
            let b = self.base(surf, t)?;
            let p = surf.to_chart(&b.base, q.chart, Some(q.coords));
            Ok(surf.metric_unchecked(&q).norm([p.coords[0] - q.coords[0], p.coords[1] - q.coords[1]]))
        };
        // coarse scan then golden section
        let mut best = (f64::INFINITY, 0.0);
        let states = crate::geodesic::propagate_through(
            surf,
            &self.start,
            &(0..n).map(|i| self.length * i as f64 / n as f64).collect::<Vec<_>>(),
            &self.opts,
        )?;
        for (i, s) in states.iter().enumerate() {
            let p = surf.to_chart(&s.base, q.chart, Some(q.coords));
            let d = surf.metric_unchecked(&q).norm([p.coords[0] - q.coords[0], p.coords[1] - q.coords[1]]);
            if d < best.0 {
                best = (d, self.length * i as f64 / n as f64);
            }
        }
        let step = self.length / n as f64;
        let (mut a, mut b) = (best.1 - step, best.1 + step);
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - gr * (b - a);
        let mut d = a + gr * (b - a);
        let (mut fc, mut fd) = (dist(c)?, dist(d)?);
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = dist(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = dist(d)?;
            }
        }
        let t = 0.5 * (a + b);
        if dist(t)? > h {
            return Ok(None);
        }
        let b = self.base(surf, t)?.in_chart(surf, q.chart, Some(q.coords));
        let rel = wrap(v.angle - b.angle, TAU) * self.side.sign();
        let tol = 1e-12;
        if rel < -tol {
            return Ok(None);
        }
        Ok(Some((t.rem_euclid(self.length), rel.clamp(0.0, PI))))
    }

    /// Membership in the closed half fan.
    pub fn contains(&self, surf: &SurfaceModel, v: &UnitTangent, h: f64) -> Result<bool> {
        Ok(self.param_of(surf, v, h)?.is_some())
    }
}

/// Crossing target for a closed geodesic: exact level sets for parallels,
/// meridians and coordinate circles, otherwise its sampled image.
pub fn target_of(surf: &SurfaceModel, g: &ClosedGeodesic) -> Result<Target> {
    let cs: Vec<[f64; 2]> = g.samples.iter().map(|s| surf.canonical(&s.state.base)).collect();
    let tol = 1e-7;
    let flat_or_rev = surf.factor().is_none();
    if flat_or_rev {
        let r0 = cs[0][0];
        if cs.iter().all(|c| (c[0] - r0).abs() < tol) {
            return Ok(Target::Parallel { r: r0 });
        }
        if let Some(l) = surf.sphere_length() {
            // a meridian keeps theta modulo pi away from the poles
            let away: Vec<&[f64; 2]> = cs.iter().filter(|c| c[0] > 1e-3 * l && c[0] < l - 1e-3 * l).collect();
            if let Some(first) = away.first() {
                let th = first[1];
                if away.iter().all(|c| (c[1] - th).sin().abs() < tol) {
                    return Ok(Target::Meridian { theta: th });
                }
            }
        } else {
            let per = surf.canonical_periods()[1].unwrap_or(TAU);
            let v = cs[0][1];
            if cs.iter().all(|c| wrap(c[1] - v, per).abs() < tol) {
                return Ok(Target::CoordinateLine { axis: 1, value: v });
            }
        }
    }
    let mut pts = g.points();
    pts.pop();
    Ok(Target::Sampled(Arc::new(SampledCurve::new(surf, pts)?)))
}

fn side_differential(surf: &SurfaceModel, t: &Target, p: &ChartPoint) -> [f64; 2] {
    let h = 1e-6;
    let mut d = [0.0; 2];
    for (a, out) in d.iter_mut().enumerate() {
        let (mut qp, mut qm) = (*p, *p);
        qp.coords[a] += h;
        qm.coords[a] -= h;
        *out = (t.side(surf, &qp) - t.side(surf, &qm)) / (2.0 * h);
    }
    d
}

/// `+1` when the side function grows along the geodesic's normal `J gamma'`.
fn orientation_of(surf: &SurfaceModel, t: &Target, g: &ClosedGeodesic) -> f64 {
    let v = g.start.velocity(surf);
    let n = surf.metric_unchecked(&g.start.base).rotate(v);
    let d = side_differential(surf, t, &g.start.base);
    if d[0] * n[0] + d[1] * n[1] >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Points of the unit tangent bundle: low-discrepancy base points weighted by
/// the base area form, uniform directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub count: usize,
    /// Seeds the random shift applied to the Halton points.
    pub seed: u64,
}

fn invert_monotone(f: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if f(m) < target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Sample `i` of the shifted Halton sequence in bases 2, 3, 5.
pub fn sample_tangent(surf: &SurfaceModel, shift: [f64; 3], i: usize) -> UnitTangent {
    let u = [
        (halton::number(2, i + 1) + shift[0]).fract(),
        (halton::number(3, i + 1) + shift[1]).fract(),
        (halton::number(5, i + 1) + shift[2]).fract(),
    ];
    let per = surf.canonical_periods();
    let r = match (surf.sphere_length(), surf.base_profile()) {
        (Some(l), Some(pr)) => {
            let total = pr.rho_integral(l);
            invert_monotone(|r| pr.rho_integral(r), u[0] * total, 0.0, l)
        }
        (None, Some(pr)) => {
            let p0 = per[0].unwrap_or(1.0);
            let total = pr.rho_integral(p0);
            invert_monotone(|r| pr.rho_integral(r), u[0] * total, 0.0, p0)
        }
        (Some(l), None) => u[0] * l,
        (None, None) => u[0] * per[0].unwrap_or(1.0),
    };
    let c = [r, u[1] * per[1].unwrap_or(TAU)];
    UnitTangent::new(surf.point(c), TAU * u[2])
}

fn cp_shift(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [rng.gen(), rng.gen(), rng.gen()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    pub t_cap: f64,
    pub tol: f64,
    /// Scan `-v` instead of `v`.
    pub reversed: bool,
    /// Witnesses kept in the report.
    pub max_witnesses: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { t_cap: 50.0, tol: 1e-9, reversed: false, max_witnesses: 32 }
    }
}

pub const HISTOGRAM_BINS: usize = 64;

/// Log-spaced bins over `(t_cap 1e-4, t_cap]`; the first bin absorbs shorter times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(t_cap: f64) -> Self {
        let lo = t_cap * 1e-4;
        let edges = (0..=HISTOGRAM_BINS).map(|k| lo * (t_cap / lo).powf(k as f64 / HISTOGRAM_BINS as f64)).collect();
        Self { edges, counts: vec![0; HISTOGRAM_BINS] }
    }

    fn add(&mut self, t: f64) {
        let k = self.edges.partition_point(|e| *e < t).saturating_sub(1).min(HISTOGRAM_BINS - 1);
        self.counts[k] += 1;
    }

    fn merge(&mut self, o: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub sample: usize,
    pub state: UnitTangent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Certificate {
    /// Every sample crossed some base geodesic before `t_cap`. Empirical: finite horizon and sample.
    CertifiedNontrapping { t_cap: f64, samples: usize },
    Refuted { witness: Witness },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnulusShare {
    pub geodesic: usize,
    pub side: Side,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffScanReport {
    pub samples: usize,
    pub t_cap: f64,
    pub hits: usize,
    pub max_hit_time: f64,
    pub mean_hit_time: f64,
    /// Sample achieving the largest hit time.
    pub argmax: Option<usize>,
    pub histogram: Histogram,
    pub grazing_hits: usize,
    /// Misses that hit after the tighter recheck.
    pub rescued: usize,
    pub trapped: Vec<Witness>,
    pub trapped_count: usize,
    pub shares: Vec<AnnulusShare>,
    pub certificate: Certificate,
}

#[derive(Debug, Clone)]
struct Chunk {
    hits: usize,
    sum: f64,
    max: (f64, Option<usize>),
    hist: Histogram,
    grazing: usize,
    rescued: usize,
    trapped: Vec<Witness>,
    trapped_count: usize,
    shares: Vec<usize>,
}

const CHUNK: usize = 256;

/// Hitting-time scan against the union of the base geodesics of `annuli`.
pub fn scan(
    surf: &SurfaceModel,
    geodesics: &[ClosedGeodesic],
    annuli: &[BirkhoffAnnulus],
    sampling: &Sampling,
    opts: &ScanOptions,
) -> Result<BirkhoffScanReport> {
    if !(opts.t_cap > 0.0) {
        return Err(GeoError::Precondition("T_cap must be positive".into()));
    }
    let mut used: Vec<usize> = annuli.iter().map(|a| a.geodesic).collect();
    used.sort_unstable();
    used.dedup();
    let targets: Vec<Target> = used.iter().map(|&i| target_of(surf, &geodesics[i])).collect::<Result<_>>()?;
    let orient: Vec<f64> = used.iter().zip(&targets).map(|(&i, t)| orientation_of(surf, t, &geodesics[i])).collect();
    let flow = FlowOptions::with_tol(opts.tol);
    let fine = FlowOptions::with_tol(opts.tol * 0.1);
    let shift = cp_shift(sampling.seed);
    let share_slot = |k: usize, plus: bool| 2 * k + usize::from(!plus);
    let n = sampling.count;
    let chunks: Vec<Result<Chunk>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut ch = Chunk {
                hits: 0,
                sum: 0.0,
                max: (0.0, None),
                hist: Histogram::new(opts.t_cap),
                grazing: 0,
                rescued: 0,
                trapped: Vec::new(),
                trapped_count: 0,
                shares: vec![0; 2 * targets.len()],
            };
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut v = sample_tangent(surf, shift, i);
                if opts.reversed {
                    v = v.reversed();
                }
                let mut hit = hitting_time(surf, &v, &targets, opts.t_cap, &flow)?;
                if hit.is_none() {
                    hit = hitting_time(surf, &v, &targets, opts.t_cap, &fine)?;
                    if hit.is_some() {
                        ch.rescued += 1;
                    }
                }
                match hit {
                    Some(h) => {
                        ch.hits += 1;
                        ch.sum += h.t;
                        if h.t > ch.max.0 {
                            ch.max = (h.t, Some(i));
                        }
                        ch.hist.add(h.t);
                        if h.grazing {
                            ch.grazing += 1;
                        }
                        let d = side_differential(surf, &targets[h.target], &h.state.base);
                        let w = h.state.velocity(surf);
                        let plus = orient[h.target] * (d[0] * w[0] + d[1] * w[1]) >= 0.0;
                        ch.shares[share_slot(h.target, plus)] += 1;
                    }
                    None => {
                        ch.trapped_count += 1;
                        if ch.trapped.len() < opts.max_witnesses {
                            ch.trapped.push(Witness { sample: i, state: v });
                        }
                    }
                }
            }
            Ok(ch)
        })
        .collect();
    // ordered merge keeps the report bitwise reproducible
    let mut hits = 0;
    let mut sum = 0.0;
    let mut max = (0.0, None);
    let mut hist = Histogram::new(opts.t_cap);
    let (mut grazing, mut rescued, mut trapped_count) = (0, 0, 0);
    let mut trapped = Vec::new();
    let mut shares = vec![0; 2 * targets.len()];
    for ch in chunks {
        let ch = ch?;
        hits += ch.hits;
        sum += ch.sum;
        if ch.max.0 > max.0 {
            max = ch.max;
        }
        hist.merge(&ch.hist);
        grazing += ch.grazing;
        rescued += ch.rescued;
        trapped_count += ch.trapped_count;
        for w in ch.trapped {
            if trapped.len() < opts.max_witnesses {
                trapped.push(w);
            }
        }
        for (a, b) in shares.iter_mut().zip(&ch.shares) {
            *a += b;
        }
    }
    let certificate = if let Some(w) = trapped.first() {
        Certificate::Refuted { witness: w.clone() }
    } else if n < 1000 {
        Certificate::Inconclusive { reason: format!("{n} samples; certification needs at least 1000") }
    } else {
        Certificate::CertifiedNontrapping { t_cap: opts.t_cap, samples: n }
    };
    let shares = used
        .iter()
        .enumerate()
        .flat_map(|(k, &g)| {
            [(Side::Plus, true), (Side::Minus, false)].map(|(side, plus)| AnnulusShare { geodesic: g, side, hits: shares[share_slot(k, plus)] })
        })
        .collect();
    Ok(BirkhoffScanReport {
        samples: n,
        t_cap: opts.t_cap,
        hits,
        max_hit_time: max.0,
        mean_hit_time: if hits > 0 { sum / hits as f64 } else { f64::NAN },
        argmax: max.1,
        histogram: hist,
        grazing_hits: grazing,
        rescued,
        trapped,
        trapped_count,
        shares,
        certificate,
    })
}

/// Exit times of geodesics entering a focusing cap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapExitScan {
    pub samples: usize,
    pub xi_min: f64,
    pub all_exit: bool,
    pub max_exit: f64,
    pub mean_exit: f64,
    pub argmax_xi: f64,
    /// Largest exit time over a uniform `xi` grid, for comparison.
    pub grid_max_exit: f64,
    pub grid_points: usize,
}

/// Entry angles from a shifted van der Corput sequence on `[xi_min, pi - xi_min]`.
/// Exit times grow without bound as the entry turns tangent to the equator,
/// so the grid spans the same closed range, endpoints included.
pub fn cap_exit_scan(rotor: &CapRotor, samples: usize, grid_points: usize, xi_min: f64, seed: u64) -> Result<CapExitScan> {
    if !(xi_min > 0.0 && xi_min < FRAC_PI_2) || grid_points < 2 {
        return Err(GeoError::Precondition(format!("xi_min = {xi_min}, grid of {grid_points}")));
    }
    let shift = cp_shift(seed)[0];
    let span = PI - 2.0 * xi_min;
    let xis: Vec<f64> = (0..samples).map(|i| xi_min + span * (halton::number(2, i + 1) + shift).fract()).collect();
    let times: Vec<Result<f64>> = xis.par_iter().map(|&xi| rotor.rotation(xi).map(|r| r.t_exit)).collect();
    let mut max = (0.0, 0.0);
    let mut sum = 0.0;
    let mut all_exit = true;
    for (xi, t) in xis.iter().zip(times) {
        match t {
            Ok(t) if t.is_finite() => {
                sum += t;
                if t > max.0 {
                    max = (t, *xi);
                }
            }
            Ok(_) | Err(GeoError::Trapped(_)) => all_exit = false,
            Err(e) => return Err(e),
        }
    }
    let grid: Vec<Result<f64>> =
        (0..grid_points).into_par_iter().map(|k| rotor.rotation(xi_min + span * k as f64 / (grid_points - 1) as f64).map(|r| r.t_exit)).collect();
    let mut grid_max: f64 = 0.0;
    for t in grid {
        grid_max = grid_max.max(t?);
    }
    Ok(CapExitScan {
        samples,
        xi_min,
        all_exit,
        max_exit: max.0,
        mean_exit: sum / samples as f64,
        argmax_xi: max.1,
        grid_max_exit: grid_max,
        grid_points,
    })
}

/// Boundary components of the surface of section and the curvature bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryBudget {
    pub geodesics: usize,
    pub components: usize,
    pub bound: f64,
    pub genus_term: f64,
    pub curvature_term: f64,
    pub area: f64,
    pub max_positive_curvature: f64,
    /// `max R <= 0`: the curvature term carries no information.
    pub curvature_term_vacuous: bool,
    pub within_bound: bool,
}

pub fn boundary_budget(surf: &SurfaceModel, n: usize) -> BoundaryBudget {
    let b = 4 * n;
    let genus_term = 8.0 * f64::from(surf.genus().max(1));
    let area = surf.area();
    let rmax = surf.max_curvature();
    let vacuous = !(rmax > 0.0);
    let curvature_term = if vacuous { 0.0 } else { 4.0 / PI * area * rmax };
    let bound = genus_term + curvature_term;
    BoundaryBudget {
        geodesics: n,
        components: b,
        bound,
        genus_term,
        curvature_term,
        area,
        max_positive_curvature: rmax.max(0.0),
        curvature_term_vacuous: vacuous,
        within_bound: b as f64 <= bound,
    }
}

/// Corner and area verdict for one face of a geodesic arrangement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceVerdict {
    pub id: usize,
    /// Interior angles at genuine crossings, in boundary order.
    pub angles: Vec<f64>,
    pub has_corner: bool,
    pub all_angles_below_pi: bool,
    /// `None` when neither the combinatorics nor the curvature integral decides it.
    pub simply_connected: Option<bool>,
    pub convex: bool,
    pub area: Option<f64>,
    pub curvature_integral: Option<f64>,
    /// Euler characteristic read off the boundary: `(int K + sum(pi - angle)) / 2 pi`.
    pub euler_from_curvature: Option<f64>,
    pub gauss_bonnet_residual: Option<f64>,
    /// Area below `2 pi / max R^+`: no simple closed geodesic fits inside.
    pub below_area_bound: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolygonAudit {
    pub vertices: usize,
    pub edges: usize,
    pub connected: bool,
    pub euler_characteristic: i64,
    pub faces: Vec<FaceVerdict>,
    pub all_convex: bool,
    pub area_bound: Option<f64>,
    pub total_area: Option<f64>,
}

const TRANSVERSE_MIN: f64 = 1e-6;
const VERTEX_MERGE: f64 = 1e-7;
const ARC_STEP: f64 = 0.002;

struct Occurrence {
    curve: usize,
    t: f64,
    vertex: usize,
}

struct Arc2 {
    span: f64,
    from: usize,
    to: usize,
    states: Vec<UnitTangent>,
}

struct HalfEdge {
    arc: usize,
    forward: bool,
    origin: usize,
    angle: f64,
}

fn refine_crossing(surf: &SurfaceModel, ga: &ClosedGeodesic, gb: &ClosedGeodesic, mut ta: f64, mut tb: f64, opts: &FlowOptions) -> Result<(f64, f64, ChartPoint, f64)> {
    for _ in 0..12 {
        let a = propagate(surf, &ga.start, ta, opts)?;
        let b = propagate(surf, &gb.start, tb, opts)?.in_chart(surf, a.base.chart, Some(a.base.coords));
        let va = a.velocity(surf);
        let vb = b.velocity(surf);
        let f = [a.base.coords[0] - b.base.coords[0], a.base.coords[1] - b.base.coords[1]];
        // solve [va, -vb] (dta, dtb) = -f
        let det = -va[0] * vb[1] + va[1] * vb[0];
        if det.abs() < 1e-14 {
            return Err(GeoError::Precondition("tangential crossing".into()));
        }
        let dta = (-f[0] * -vb[1] - -vb[0] * -f[1]) / det;
        let dtb = (va[0] * -f[1] - va[1] * -f[0]) / det;
        ta += dta;
        tb += dtb;
        if dta.abs().max(dtb.abs()) < 1e-13 {
            break;
        }
    }
    let a = propagate(surf, &ga.start, ta, opts)?;
    let b = propagate(surf, &gb.start, tb, opts)?.in_chart(surf, a.base.chart, Some(a.base.coords));
    let g = surf.metric_unchecked(&a.base);
    let (va, vb) = (a.velocity(surf), b.velocity(surf));
    let sin = g.cross(va, vb) / (g.norm(va) * g.norm(vb));
    Ok((ta.rem_euclid(ga.length), tb.rem_euclid(gb.length), a.base, sin))
}

fn sample_time(g: &ClosedGeodesic, seg: usize, u: f64) -> f64 {
    let n = g.samples.len() - 1;
    let (a, b) = (g.samples[seg % n].t, g.samples[seg % n + 1].t);
    a + u * (b - a)
}

fn point_distance(surf: &SurfaceModel, p: &ChartPoint, q: &ChartPoint) -> f64 {
    let q = surf.to_chart(q, p.chart, Some(p.coords));
    surf.metric_unchecked(p).norm([q.coords[0] - p.coords[0], q.coords[1] - p.coords[1]])
}

/// One-forms integrated along face boundaries: curvature primitive and area
/// primitive, both smooth at the chosen pole.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Gauge {
    North,
    South,
}

fn forms(surf: &SurfaceModel, s: &UnitTangent, gauge: Gauge, r_lift: f64) -> (f64, f64) {
    let v = s.velocity(surf);
    let [x, y] = s.base.coords;
    let Some(pr) = surf.base_profile() else {
        // flat: K = 0, area form d(x dy)
        return (0.0, r_lift * v[1]);
    };
    let Some(l) = surf.sphere_length() else {
        let per = surf.canonical_periods()[0].unwrap_or(TAU);
        let k = (r_lift / per).floor();
        let p = pr.rho_integral(r_lift - k * per) + k * pr.rho_integral(per);
        return (-pr.eval(r_lift).drho * v[1], p * v[1]);
    };
    let (pole, shift) = match gauge {
        Gauge::North => (1.0, 0.0),
        Gauge::South => (-1.0, pr.rho_integral(l)),
    };
    match s.base.chart {
        crate::surface::NORTH | crate::surface::SOUTH => {
            let south = s.base.chart == crate::surface::SOUTH;
            let q = x.hypot(y);
            let r = if south { l - q } else { q };
            let pv = pr.eval(r);
            let w = x * v[1] - y * v[0];
            let dtheta = if south { -w } else { w };
            let own = (gauge == Gauge::South) == south;
            let (kq, aq) = if own && q < 1e-4 {
                if south {
                    (-0.5 * pv.curvature, -0.5)
                } else {
                    (0.5 * pv.curvature, 0.5)
                }
            } else {
                ((pole - pv.drho) / (q * q), (pr.rho_integral(r) - shift) / (q * q))
            };
            (kq * dtheta, aq * dtheta)
        }
        _ => {
            let pv = pr.eval(x);
            ((pole - pv.drho) * v[1], (pr.rho_integral(x) - shift) * v[1])
        }
    }
}

fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    let mut s = f[0] + f[n];
    for (i, v) in f.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Arrangement of the images of `geodesics`: faces, corner angles, and
/// curvature and area integrals on metrics of revolution.
pub fn polygon_audit(surf: &SurfaceModel, geodesics: &[ClosedGeodesic]) -> Result<PolygonAudit> {
    let opts = FlowOptions { tol: Tolerance::new(1e-12, 1e-13), ..FlowOptions::default() };
    let curves: Vec<crate::curve::DiscreteCurve> = geodesics
        .iter()
        .map(|g| {
            let mut p = g.points();
            p.pop();
            let h = g.length / p.len() as f64;
            crate::curve::DiscreteCurve::new(surf, p, h)
        })
        .collect::<Result<_>>()?;
    // crossings, refined on the flow
    let mut vertices: Vec<ChartPoint> = Vec::new();
    let mut real: Vec<bool> = Vec::new();
    let mut occ: Vec<Occurrence> = Vec::new();
    let add = |surf: &SurfaceModel, p: ChartPoint, hits: [(usize, f64); 2], vertices: &mut Vec<ChartPoint>, real: &mut Vec<bool>, occ: &mut Vec<Occurrence>| {
        let v = match vertices.iter().position(|q| point_distance(surf, q, &p) < VERTEX_MERGE) {
            Some(v) => v,
            None => {
                vertices.push(p);
                real.push(true);
                vertices.len() - 1
            }
        };
        for (c, t) in hits {
            let len = geodesics[c].length;
            if !occ.iter().any(|o| o.curve == c && o.vertex == v && wrap(o.t - t, len).abs() < VERTEX_MERGE) {
                occ.push(Occurrence { curve: c, t, vertex: v });
            }
        }
    };
    for i in 0..geodesics.len() {
        let own = crate::knots::self_intersections(surf, &curves[i])?;
        let mut pairs: Vec<(usize, Vec<crate::knots::Crossing>)> = vec![(i, own.crossings)];
        if i + 1 < geodesics.len() {
            for (k, rep) in crate::knots::link_intersections(surf, &curves[i], &curves[i + 1..])?.into_iter().enumerate() {
                pairs.push((i + 1 + k, rep.crossings));
            }
        }
        for (j, xs) in pairs {
            for x in xs {
                if x.sin_angle.abs() < TRANSVERSE_MIN {
                    return Err(GeoError::Precondition(format!("geodesics {i} and {j} are not transverse")));
                }
                let (ta, tb) = (sample_time(&geodesics[i], x.seg_a, x.t), sample_time(&geodesics[j], x.seg_b, x.u));
                let (ta, tb, p, sin) = refine_crossing(surf, &geodesics[i], &geodesics[j], ta, tb, &opts)?;
                if sin.abs() < TRANSVERSE_MIN {
                    return Err(GeoError::Precondition(format!("geodesics {i} and {j} are not transverse")));
                }
                add(surf, p, [(i, ta), (j, tb)], &mut vertices, &mut real, &mut occ);
            }
        }
    }
    // a curve without crossings gets a marker vertex
    for (c, g) in geodesics.iter().enumerate() {
        if !occ.iter().any(|o| o.curve == c) {
            vertices.push(g.start.base);
            real.push(false);
            occ.push(Occurrence { curve: c, t: 0.0, vertex: vertices.len() - 1 });
        }
    }
    // arcs between consecutive occurrences along each curve
    let mut arcs: Vec<Arc2> = Vec::new();
    let mut halves: Vec<HalfEdge> = Vec::new();
    for (c, g) in geodesics.iter().enumerate() {
        let mut mine: Vec<&Occurrence> = occ.iter().filter(|o| o.curve == c).collect();
        mine.sort_by(|a, b| a.t.total_cmp(&b.t));
        for k in 0..mine.len() {
            let (a, b) = (mine[k], mine[(k + 1) % mine.len()]);
            let t1 = if k + 1 == mine.len() { b.t + g.length } else { b.t };
            let n = (((t1 - a.t) / ARC_STEP).ceil() as usize).max(8).next_multiple_of(2);
            let times: Vec<f64> = (0..=n).map(|m| a.t + (t1 - a.t) * m as f64 / n as f64).collect();
            let states = crate::geodesic::propagate_through(surf, &g.start, &times, &opts)?;
            let id = arcs.len();
            let vs = vertices[a.vertex];
            let ve = vertices[b.vertex];
            let s0 = states[0].in_chart(surf, vs.chart, Some(vs.coords));
            let s1 = states[n].in_chart(surf, ve.chart, Some(ve.coords));
            halves.push(HalfEdge { arc: id, forward: true, origin: a.vertex, angle: s0.angle.rem_euclid(TAU) });
            halves.push(HalfEdge { arc: id, forward: false, origin: b.vertex, angle: (s1.angle + PI).rem_euclid(TAU) });
            arcs.push(Arc2 { span: t1 - a.t, from: a.vertex, to: b.vertex, states });
        }
    }
    let twin = |h: usize| h ^ 1;
    // outgoing half-edges counterclockwise at each vertex
    let mut around: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for (h, e) in halves.iter().enumerate() {
        around[e.origin].push(h);
    }
    for list in &mut around {
        list.sort_by(|a, b| halves[*a].angle.total_cmp(&halves[*b].angle));
    }
    let next = |h: usize| -> usize {
        let t = twin(h);
        let list = &around[halves[t].origin];
        let k = list.iter().position(|&x| x == t).unwrap_or(0);
        list[(k + list.len() - 1) % list.len()]
    };
    let mut face_of = vec![usize::MAX; halves.len()];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for h0 in 0..halves.len() {
        if face_of[h0] != usize::MAX {
            continue;
        }
        let mut cyc = Vec::new();
        let mut h = h0;
        while face_of[h] == usize::MAX {
            face_of[h] = cycles.len();
            cyc.push(h);
            h = next(h);
        }
        cycles.push(cyc);
    }
    // connectivity by union-find over arcs
    let mut parent: Vec<usize> = (0..vertices.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for a in &arcs {
        let (x, y) = (find(&mut parent, a.from), find(&mut parent, a.to));
        parent[x] = y;
    }
    let roots = (0..vertices.len()).filter(|&v| find(&mut parent, v) == v).count();
    let connected = roots == 1;
    let chi = 2 - 2 * i64::from(surf.genus());
    let euler = vertices.len() as i64 - arcs.len() as i64 + cycles.len() as i64;
    let all_disks = connected && euler == chi;
    let faces_n = cycles.len();

    // poles: on an arc, or inside exactly one face
    let sphere = surf.sphere_length();
    let integrable = surf.factor().is_none();
    let mut pole_face: [Option<usize>; 2] = [None, None];
    let mut pole_on: [Vec<bool>; 2] = [vec![false; faces_n], vec![false; faces_n]];
    if let (Some(l), true) = (sphere, integrable) {
        for (pi_, toward_north) in [(0usize, true), (1usize, false)] {
            let key = |s: &UnitTangent| {
                let r = surf.radius_of(&s.base);
                if toward_north {
                    r
                } else {
                    l - r
                }
            };
            let mut best = (f64::INFINITY, 0usize, 0usize);
            for (ai, a) in arcs.iter().enumerate() {
                for (k, st) in a.states.iter().enumerate() {
                    let d = key(st);
                    if d < best.0 {
                        best = (d, ai, k);
                    }
                }
            }
            let (d, ai, k) = best;
            let end = k == 0 || k + 1 == arcs[ai].states.len();
            if d < 1e-6 {
                pole_on[pi_][face_of[2 * ai]] = true;
                pole_on[pi_][face_of[2 * ai + 1]] = true;
                if end {
                    let v = if k == 0 { arcs[ai].from } else { arcs[ai].to };
                    for &h in &around[v] {
                        pole_on[pi_][face_of[h]] = true;
                    }
                }
                continue;
            }
            if end {
                let v = if k == 0 { arcs[ai].from } else { arcs[ai].to };
                let p = vertices[v];
                let toward = match p.chart {
                    crate::surface::NORTH => [-p.coords[0], -p.coords[1]],
                    crate::surface::SOUTH => [p.coords[0], p.coords[1]],
                    _ => [-1.0, 0.0],
                };
                let toward = if toward_north { toward } else { [-toward[0], -toward[1]] };
                let phi = UnitTangent::from_velocity(surf, p, toward).angle.rem_euclid(TAU);
                let list = &around[v];
                let kk = list.iter().rposition(|&h| halves[h].angle <= phi).unwrap_or(list.len() - 1);
                pole_face[pi_] = Some(face_of[list[kk]]);
            } else {
                let c0 = surf.canonical(&arcs[ai].states[k - 1].base)[1];
                let c1 = surf.canonical(&arcs[ai].states[k + 1].base)[1];
                let increasing = wrap(c1 - c0, TAU) > 0.0;
                let left = increasing == toward_north;
                pole_face[pi_] = Some(face_of[2 * ai + usize::from(!left)]);
            }
        }
    }
    let total_area = integrable.then(|| surf.area());
    let rmax = surf.max_curvature();
    let area_bound = (rmax > 0.0).then(|| TAU / rmax);
    let per0 = if sphere.is_none() { surf.canonical_periods()[0] } else { None };

    let mut faces = Vec::with_capacity(faces_n);
    for (fi, cyc) in cycles.iter().enumerate() {
        let mut angles = Vec::new();
        let mut turning = 0.0;
        for &h in cyc {
            let (t, n) = (twin(h), next(h));
            let v = halves[t].origin;
            if real[v] {
                let a = (halves[t].angle - halves[n].angle).rem_euclid(TAU);
                angles.push(a);
                turning += PI - a;
            }
        }
        let has_corner = !angles.is_empty();
        let below_pi = angles.iter().all(|a| *a < PI);
        let gauge_ok = !(pole_on[0][fi] && pole_on[1][fi]);
        let (curv, area) = if integrable && gauge_ok {
            let gauge = if pole_on[1][fi] { Gauge::South } else { Gauge::North };
            let mut k_int = 0.0;
            let mut a_int = 0.0;
            let mut prev: Option<f64> = None;
            for &h in cyc {
                let arc = &arcs[halves[h].arc];
                let fwd = halves[h].forward;
                // lift the periodic radial coordinate along the boundary walk
                let raw: Vec<f64> = arc.states.iter().map(|s| s.base.coords[0]).collect();
                let mut lifted = raw.clone();
                if let Some(per) = per0 {
                    for m in 1..lifted.len() {
                        lifted[m] = lifted[m - 1] + wrap(raw[m] - raw[m - 1], per);
                    }
                    let entry = if fwd { lifted[0] } else { lifted[lifted.len() - 1] };
                    let off = prev.map_or(0.0, |p| per * ((p - entry) / per).round());
                    for x in &mut lifted {
                        *x += off;
                    }
                    prev = Some(if fwd { lifted[lifted.len() - 1] } else { lifted[0] });
                }
                let (kv, av): (Vec<f64>, Vec<f64>) = arc.states.iter().zip(&lifted).map(|(s, r)| forms(surf, s, gauge, *r)).unzip();
                let h_t = arc.span / (arc.states.len() - 1) as f64;
                let sgn = if fwd { 1.0 } else { -1.0 };
                k_int += sgn * simpson(&kv, h_t);
                a_int += sgn * simpson(&av, h_t);
            }
            let other = match gauge {
                Gauge::North => pole_face[1] == Some(fi),
                Gauge::South => pole_face[0] == Some(fi),
            };
            if other {
                k_int += 2.0 * TAU;
                a_int += total_area.unwrap_or(0.0);
            }
            (Some(k_int), Some(a_int))
        } else {
            (None, None)
        };
        let euler_curv = curv.map(|k| (k + turning) / TAU);
        let simply = if all_disks { Some(true) } else { euler_curv.map(|e| e.round() == 1.0) };
        let target = if all_disks { euler_curv.map(|_| 1.0) } else { euler_curv.map(f64::round) };
        let residual = euler_curv.zip(target).map(|(e, t)| TAU * (e - t).abs());
        faces.push(FaceVerdict {
            id: fi,
            angles,
            has_corner,
            all_angles_below_pi: below_pi,
            simply_connected: simply,
            convex: simply == Some(true) && has_corner && below_pi,
            area,
            curvature_integral: curv,
            euler_from_curvature: euler_curv,
            gauss_bonnet_residual: residual,
            below_area_bound: area.zip(area_bound).map(|(a, b)| a < b),
        });
    }
    Ok(PolygonAudit {
        vertices: vertices.len(),
        edges: arcs.len(),
        connected,
        euler_characteristic: euler,
        all_convex: faces.iter().all(|f| f.convex),
        faces,
        area_bound,
        total_area,
    })
}
