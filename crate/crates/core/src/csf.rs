//! Discrete curve shortening flow.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::curve::{normal_of, settle_point, DiscreteCurve};
use crate::error::{GeoError, Result};
use crate::geodesic::cell_of;
use crate::knots::{self_intersections, Crossing};
use crate::surface::{ChartPoint, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    SemiImplicit,
}

/// Local quantities of the polygon at one vertex.
#[derive(Debug, Clone, Copy)]
pub struct VertexGeometry {
    /// Signed geodesic curvature with respect to `normal`.
    pub kappa: f64,
    /// Unit normal `J T` in the vertex chart.
    pub normal: [f64; 2],
    /// Unit tangent in the vertex chart.
    pub tangent: [f64; 2],
    /// Chords to the previous and next vertex.
    pub h_minus: f64,
    pub h_plus: f64,
}

impl VertexGeometry {
    /// Arclength weight of the vertex.
    pub fn weight(&self) -> f64 {
        0.5 * (self.h_minus + self.h_plus)
    }
}

fn chord_at(surf: &SurfaceModel, chart: usize, a: [f64; 2], b: [f64; 2]) -> f64 {
    let mid = ChartPoint::new(chart, [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    surf.metric_unchecked(&mid).norm([b[0] - a[0], b[1] - a[1]])
}

/// Three-point covariant stencil on a non-uniform polygon.
pub fn vertex_geometry(surf: &SurfaceModel, c: &DiscreteCurve, i: usize) -> VertexGeometry {
    let v = c.vertices[i];
    let x = v.coords;
    let p = c.vertex_in(surf, c.prev(i), i);
    let q = c.vertex_in(surf, c.next(i), i);
    let hm = chord_at(surf, v.chart, p, x);
    let hp = chord_at(surf, v.chart, x, q);
    let s = hm + hp;
    let mut d1 = [0.0; 2];
    let mut d2 = [0.0; 2];
    for k in 0..2 {
        let a = q[k] - x[k];
        let b = p[k] - x[k];
        d1[k] = hm / (hp * s) * a - hp / (hm * s) * b;
        d2[k] = 2.0 * (a / hp + b / hm) / s;
    }
    let g = surf.metric_unchecked(&v);
    let acc = surf.christoffel_unchecked(&v).accel(d1);
    let cov = [d2[0] - acc[0], d2[1] - acc[1]];
    let speed = g.norm(d1);
    let kappa = g.cross(d1, cov) / speed.powi(3);
    VertexGeometry {
        kappa,
        normal: normal_of(&g, d1),
        tangent: [d1[0] / speed, d1[1] / speed],
        h_minus: hm,
        h_plus: hp,
    }
}

pub fn curve_geometry(surf: &SurfaceModel, c: &DiscreteCurve) -> Vec<VertexGeometry> {
    (0..c.len()).map(|i| vertex_geometry(surf, c, i)).collect()
}

pub fn curvatures(surf: &SurfaceModel, c: &DiscreteCurve) -> Vec<f64> {
    (0..c.len()).map(|i| vertex_geometry(surf, c, i).kappa).collect()
}

pub fn max_abs_curvature(geo: &[VertexGeometry]) -> f64 {
    geo.iter().map(|v| v.kappa.abs()).fold(0.0, f64::max)
}

/// `int kappa^2 ds` with vertex weights.
pub fn total_squared_curvature(geo: &[VertexGeometry]) -> f64 {
    geo.iter().map(|v| v.kappa * v.kappa * v.weight()).sum()
}

/// Solves the cyclic tridiagonal system `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
pub fn solve_cyclic_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 3);
    // Sherman-Morrison on the corner entries
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= lower[0] * upper[n - 1] / gamma;
    let thomas = |d: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = upper[0] / b[0];
        dp[0] = d[0] / b[0];
        for i in 1..n {
            let m = b[i] - lower[i] * cp[i - 1];
            cp[i] = if i < n - 1 { upper[i] / m } else { 0.0 };
            dp[i] = (d[i] - lower[i] * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    };
    let y = thomas(rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let z = thomas(&u);
    let vy = y[0] + lower[0] * y[n - 1] / gamma;
    let vz = z[0] + lower[0] * z[n - 1] / gamma;
    let f = vy / (1.0 + vz);
    y.iter().zip(&z).map(|(a, b)| a - f * b).collect()
}

/// Normal displacements for one step.
pub fn normal_speeds(geo: &[VertexGeometry], dt: f64, scheme: Scheme) -> Vec<f64> {
    let n = geo.len();
    match scheme {
        Scheme::Explicit => geo.iter().map(|v| dt * v.kappa).collect(),
        Scheme::SemiImplicit => {
            // (I - dt D_s^2) w = dt kappa
            let mut lo = vec![0.0; n];
            let mut di = vec![0.0; n];
            let mut up = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for (i, v) in geo.iter().enumerate() {
                let s = v.h_minus + v.h_plus;
                let a = 2.0 * dt / (v.h_minus * s);
                let b = 2.0 * dt / (v.h_plus * s);
                lo[i] = -a;
                up[i] = -b;
                di[i] = 1.0 + a + b;
                rhs[i] = dt * v.kappa;
            }
            solve_cyclic_tridiagonal(&lo, &di, &up, &rhs)
        }
    }
}

/// Moves every vertex by `w[i]` along its normal, without resampling.
pub fn displace(surf: &SurfaceModel, c: &DiscreteCurve, geo: &[VertexGeometry], w: &[f64]) -> Result<DiscreteCurve> {
    let mut out = Vec::with_capacity(c.len());
    for (i, v) in c.vertices.iter().enumerate() {
        let n = geo[i].normal;
        let p = ChartPoint::new(v.chart, [v.coords[0] + w[i] * n[0], v.coords[1] + w[i] * n[1]]);
        if !(p.coords[0].is_finite() && p.coords[1].is_finite()) {
            return Err(GeoError::BlowUp { step: 0, detail: format!("non-finite vertex {i}") });
        }
        out.push(settle_point(surf, p));
    }
    Ok(DiscreteCurve { vertices: out, orientation: c.orientation, spacing: c.spacing })
}

/// Pairs of non-adjacent vertices closer than `threshold` whose normals point
/// toward each other.
pub fn near_contacts(surf: &SurfaceModel, c: &DiscreteCurve, geo: &[VertexGeometry], threshold: f64) -> Vec<(usize, usize, f64)> {
    let n = c.len();
    let locs: Vec<[f64; 3]> = c.vertices.iter().map(|p| surf.locator(p)).collect();
    let step = (0..n)
        .map(|i| {
            let (a, b) = (locs[i], locs[(i + 1) % n]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    let cell = (2.0 * step).max(1e-9);
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, l) in locs.iter().enumerate() {
        buckets.entry(cell_of(*l, cell)).or_default().push(i);
    }
    let gap = 4.max(n / 8);
    let mut out = Vec::new();
    for i in 0..n {
        let ci = cell_of(locs[i], cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = buckets.get(&[ci[0] + dx, ci[1] + dy, ci[2] + dz]) else { continue };
                    for &j in list {
                        let sep = (j + n - i) % n;
                        if j <= i || sep.min(n - sep) < gap {
                            continue;
                        }
                        let q = c.vertex_in(surf, j, i);
                        let x = c.vertices[i].coords;
                        let dist = chord_at(surf, c.vertices[i].chart, x, q);
                        if dist >= threshold {
                            continue;
                        }
                        let g = surf.metric_unchecked(&c.vertices[i]);
                        let nj = surf
                            .transition_jacobian(&c.vertices[j], c.vertices[i].chart)
                            .iter()
                            .map(|row| row[0] * geo[j].normal[0] + row[1] * geo[j].normal[1])
                            .collect::<Vec<_>>();
                        if g.dot(geo[i].normal, [nj[0], nj[1]]) < 0.0 {
                            out.push((i, j, dist));
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepPolicy {
    pub scheme: Scheme,
    /// Stability bound `dt <= cfl h_min^2` for the explicit scheme.
    pub cfl: f64,
    /// Fraction of the CFL bound used by explicit runs.
    pub dt_fraction: f64,
    /// Semi-implicit step `dt = implicit_factor * h_min`.
    pub implicit_factor: f64,
    /// Bound on `dt |kappa| / h_min`.
    pub max_displacement: f64,
    /// Check for near self-contact every step.
    pub contact_check: bool,
    /// Resampled vertex counts are rounded to a multiple of this, which keeps
    /// discrete rotational symmetry of the seed.
    pub vertex_multiple: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { scheme: Scheme::Explicit, cfl: 0.5, dt_fraction: 0.25, implicit_factor: 0.5, max_displacement: 0.2, contact_check: true, vertex_multiple: 1 }
    }
}

impl StepPolicy {
    pub fn semi_implicit() -> Self {
        Self { scheme: Scheme::SemiImplicit, ..Self::default() }
    }

    /// Adaptive step size for the current polygon.
    pub fn dt(&self, geo: &[VertexGeometry]) -> f64 {
        let hmin = geo.iter().map(|v| v.h_plus).fold(f64::INFINITY, f64::min);
        let kmax = max_abs_curvature(geo);
        let base = match self.scheme {
            Scheme::Explicit => self.dt_fraction * self.cfl * hmin * hmin,
            Scheme::SemiImplicit => self.implicit_factor * hmin,
        };
        if kmax > 0.0 {
            base.min(self.max_displacement * hmin / kmax)
        } else {
            base
        }
    }
}

/// Result of one flow step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub curve: DiscreteCurve,
    pub dt: f64,
    /// Geometry of the input curve.
    pub max_kappa: f64,
    pub squared_curvature: f64,
    /// Non-adjacent vertices closer than `h/10` with opposing normals.
    pub contact: Option<(usize, usize, f64)>,
}

/// One step of the flow followed by arclength resampling.
pub fn step(surf: &SurfaceModel, c: &DiscreteCurve, dt: f64, policy: &StepPolicy) -> Result<StepOutcome> {
    let geo = curve_geometry(surf, c);
    step_with(surf, c, &geo, dt, policy)
}

pub fn step_with(surf: &SurfaceModel, c: &DiscreteCurve, geo: &[VertexGeometry], dt: f64, policy: &StepPolicy) -> Result<StepOutcome> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GeoError::Precondition(format!("step size {dt} must be positive")));
    }
    let hmin = geo.iter().map(|v| v.h_plus).fold(f64::INFINITY, f64::min);
    if policy.scheme == Scheme::Explicit && dt > policy.cfl * hmin * hmin * (1.0 + 1e-12) {
        return Err(GeoError::Precondition(format!(
            "explicit step {dt:e} exceeds CFL bound {:e}",
            policy.cfl * hmin * hmin
        )));
    }
    if let Some(bad) = geo.iter().position(|v| !v.kappa.is_finite()) {
        return Err(GeoError::BlowUp { step: 0, detail: format!("non-finite curvature at vertex {bad}") });
    }
    let contact = if policy.contact_check {
        near_contacts(surf, c, geo, 0.1 * c.spacing).into_iter().min_by(|a, b| a.2.total_cmp(&b.2))
    } else {
        None
    };
    let w = normal_speeds(geo, dt, policy.scheme);
    let moved = displace(surf, c, geo, &w)?;
    let count = (policy.vertex_multiple > 1).then(|| {
        let m = policy.vertex_multiple;
        let raw = moved.length(surf) / moved.spacing / m as f64;
        (raw.round() as usize).max(16usize.div_ceil(m)) * m
    });
    let curve = moved.resample(surf, count)?;
    Ok(StepOutcome {
        curve,
        dt,
        max_kappa: max_abs_curvature(geo),
        squared_curvature: total_squared_curvature(geo),
        contact,
    })
}

/// A loop cut off at a transverse self-crossing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subloop {
    /// First and last vertex of the loop arc.
    pub first: usize,
    pub last: usize,
    pub area: f64,
    pub point: ChartPoint,
}

fn crossing_loop(surf: &SurfaceModel, c: &DiscreteCurve, x: &Crossing, first: usize, last: usize) -> Vec<[f64; 2]> {
    let chart = x.point.chart;
    let mut pts = vec![x.point.coords];
    let mut near = x.point.coords;
    let mut i = first;
    loop {
        let q = surf.to_chart(&c.vertices[i], chart, Some(near)).coords;
        pts.push(q);
        near = q;
        if i == last {
            break;
        }
        i = c.next(i);
    }
    pts
}

fn winding(pts: &[[f64; 2]], q: [f64; 2]) -> f64 {
    let n = pts.len();
    let mut w = 0.0;
    for i in 0..n {
        let a = [pts[i][0] - q[0], pts[i][1] - q[1]];
        let b = [pts[(i + 1) % n][0] - q[0], pts[(i + 1) % n][1] - q[1]];
        w += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
    }
    w / std::f64::consts::TAU
}

/// Embedded loops bounded by one self-crossing whose enclosed area is at most `rho`
/// and whose continuing arc leaves the enclosed disk.
pub fn detect_subloops(surf: &SurfaceModel, c: &DiscreteCurve, rho: f64) -> Result<Vec<Subloop>> {
    let rep = self_intersections(surf, c)?;
    if rep.grazing > 0 {
        return Err(GeoError::Tangency { sin_angle: rep.min_sin_angle });
    }
    let n = c.len();
    let mut out = Vec::new();
    let inside = |a: usize, b: usize, k: usize| {
        // is edge k strictly between edges a and b going forward
        let span = (b + n - a) % n;
        let off = (k + n - a) % n;
        off > 0 && off < span
    };
    for x in &rep.crossings {
        for (ea, eb) in [(x.seg_a, x.seg_b), (x.seg_b, x.seg_a)] {
            let nested = rep.crossings.iter().any(|y| {
                !std::ptr::eq(x, y) && (inside(ea, eb, y.seg_a) || inside(ea, eb, y.seg_b) || (y.seg_a == ea && y.seg_b == eb))
            });
            if nested {
                continue;
            }
            let first = c.next(ea);
            let last = eb;
            if (eb + n - ea) % n < 2 {
                continue;
            }
            let pts = crossing_loop(surf, c, x, first, last);
            let area = crate::curve::polygon_area(surf, x.point.chart, &pts).abs();
            if area > rho {
                continue;
            }
            // the arc after the loop must leave the disk
            let probe = surf.to_chart(&c.vertices[c.next(eb)], x.point.chart, Some(x.point.coords)).coords;
            if winding(&pts, probe).abs() > 0.5 {
                continue;
            }
            out.push(Subloop { first, last, area, point: x.point });
        }
    }
    out.sort_by(|a, b| a.area.total_cmp(&b.area));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fate {
    ConvergedToGeodesic { residual: f64 },
    ShrankToPoint { final_length: f64 },
    SubloopSingularity { area: f64 },
    Truncated { time: f64 },
    /// Non-finite state; the last frame is the final finite curve.
    Aborted { step: usize, detail: String },
}

impl Fate {
    pub fn name(&self) -> &'static str {
        match self {
            Fate::ConvergedToGeodesic { .. } => "converged_to_geodesic",
            Fate::ShrankToPoint { .. } => "shrank_to_point",
            Fate::SubloopSingularity { .. } => "subloop_singularity",
            Fate::Truncated { .. } => "truncated",
            Fate::Aborted { .. } => "aborted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPolicy {
    pub step: StepPolicy,
    pub t_max: f64,
    pub max_steps: usize,
    pub kappa_tol: f64,
    pub dwell: usize,
    /// Shrinking stops below `l_min_factor * h`.
    pub l_min_factor: f64,
    /// Subloop area threshold; defaults to `1e-3` of the surface area.
    pub rho_stop: Option<f64>,
    /// Curvature blow-up marker `max|kappa| h`.
    pub blowup_kappa_h: f64,
    /// Keep every `frame_every`-th curve (the first and last are always kept).
    pub frame_every: usize,
}

impl Default for RunPolicy {
    fn default() -> Self {
        Self {
            step: StepPolicy::default(),
            t_max: 10.0,
            max_steps: 200_000,
            kappa_tol: 1e-5,
            dwell: 50,
            l_min_factor: 20.0,
            rho_stop: None,
            blowup_kappa_h: 0.25,
            frame_every: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowFrame {
    pub step: usize,
    pub t: f64,
    pub length: f64,
    pub max_kappa: f64,
    pub curve: DiscreteCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowRun {
    pub frames: Vec<FlowFrame>,
    /// Length after each step, starting with the seed.
    pub lengths: Vec<f64>,
    pub times: Vec<f64>,
    pub fate: Fate,
    pub steps: usize,
    /// Largest per-step length increase.
    pub max_length_increase: f64,
}

impl FlowRun {
    pub fn final_curve(&self) -> &DiscreteCurve {
        &self.frames.last().expect("runs keep at least one frame").curve
    }

    /// One JSON object per frame.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            let verts: Vec<(usize, f64, f64)> = f.curve.vertices.iter().map(|v| (v.chart, v.coords[0], v.coords[1])).collect();
            let line = serde_json::json!({
                "step": f.step,
                "t": f.t,
                "length": f.length,
                "max_kappa": f.max_kappa,
                "vertices": verts,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn lengths_csv(&self) -> String {
        let mut s = String::from("t,length\n");
        for (t, l) in self.times.iter().zip(&self.lengths) {
            s.push_str(&format!("{t:.16e},{l:.16e}\n"));
        }
        s
    }
}

/// Flows `c0` until one of the fates applies.
pub fn run(surf: &SurfaceModel, c0: &DiscreteCurve, policy: &RunPolicy) -> Result<FlowRun> {
    let h = c0.spacing;
    let rho_stop = policy.rho_stop.unwrap_or(1e-3 * surf.area());
    let l_min = policy.l_min_factor * h;
    let mut cur = c0.clone();
    let mut t = 0.0;
    let mut len = cur.length(surf);
    let mut lengths = vec![len];
    let mut times = vec![0.0];
    let mut frames = Vec::new();
    let mut calm = 0;
    let mut max_inc = f64::NEG_INFINITY;
    let mut k = 0;
    let fate = loop {
        let geo = curve_geometry(surf, &cur);
        let kmax = max_abs_curvature(&geo);
        if k % policy.frame_every.max(1) == 0 {
            frames.push(FlowFrame { step: k, t, length: len, max_kappa: kmax, curve: cur.clone() });
        }
        if !kmax.is_finite() || !len.is_finite() {
            break Fate::Aborted { step: k, detail: "non-finite curvature".into() };
        }
        if len < l_min {
            break Fate::ShrankToPoint { final_length: len };
        }
        calm = if kmax < policy.kappa_tol { calm + 1 } else { 0 };
        if calm >= policy.dwell {
            break Fate::ConvergedToGeodesic { residual: kmax };
        }
        if t >= policy.t_max || k >= policy.max_steps {
            break Fate::Truncated { time: t };
        }
        let dt = policy.step.dt(&geo).min(policy.t_max - t).max(f64::MIN_POSITIVE);
        let out = match step_with(surf, &cur, &geo, dt, &policy.step) {
            Ok(o) => o,
            Err(GeoError::BlowUp { detail, .. }) => break Fate::Aborted { step: k, detail },
            Err(GeoError::Degenerate(detail)) => break Fate::Aborted { step: k, detail },
            Err(e) => return Err(e),
        };
        if out.contact.is_some() || kmax * h > policy.blowup_kappa_h {
            match detect_subloops(surf, &cur, rho_stop) {
                Ok(loops) if !loops.is_empty() => break Fate::SubloopSingularity { area: loops[0].area },
                Ok(_) => {}
                Err(GeoError::Tangency { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        cur = out.curve;
        t += dt;
        k += 1;
        let next = cur.length(surf);
        max_inc = max_inc.max(next - len);
        len = next;
        lengths.push(len);
        times.push(t);
    };
    let last_kept = frames.last().map(|f| f.step);
    if last_kept != Some(k) {
        let kmax = max_abs_curvature(&curve_geometry(surf, &cur));
        frames.push(FlowFrame { step: k, t, length: len, max_kappa: kmax, curve: cur });
    }
    Ok(FlowRun { frames, lengths, times, fate, steps: k, max_length_increase: max_inc })
}

/// Residual of `dL/dt = -int kappa^2 ds` between two frames.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LengthLaw {
    pub dl_dt: f64,
    pub squared_curvature: f64,
    pub residual: f64,
}

pub fn verify_length_law(surf: &SurfaceModel, before: &DiscreteCurve, after: &DiscreteCurve, dt: f64) -> LengthLaw {
    let dl_dt = (after.length(surf) - before.length(surf)) / dt;
    let k0 = total_squared_curvature(&curve_geometry(surf, before));
    let k1 = total_squared_curvature(&curve_geometry(surf, after));
    let k2 = 0.5 * (k0 + k1);
    LengthLaw { dl_dt, squared_curvature: k2, residual: (dl_dt + k2).abs() / k2.max(1.0) }
}

/// Three explicit normal-flow frames without resampling, so vertices are material.
pub fn pde_frames(surf: &SurfaceModel, c: &DiscreteCurve, dt: f64) -> Result<[DiscreteCurve; 3]> {
    let g0 = curve_geometry(surf, c);
    let c1 = displace(surf, c, &g0, &normal_speeds(&g0, dt, Scheme::Explicit))?;
    let g1 = curve_geometry(surf, &c1);
    let c2 = displace(surf, &c1, &g1, &normal_speeds(&g1, dt, Scheme::Explicit))?;
    Ok([c.clone(), c1, c2])
}

/// Pointwise residual of `d_t kappa = D_s^2 kappa + R kappa + kappa^3` on the middle frame.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PdeResidual {
    /// Arclength-weighted RMS residual.
    pub l2: f64,
    pub linf: f64,
    /// RMS of the right-hand side, for scale.
    pub rhs_l2: f64,
    /// `max|kappa| h < 0.1`; outside it the residual is inconclusive.
    pub smooth_regime: bool,
}

pub fn verify_curvature_pde(surf: &SurfaceModel, frames: &[DiscreteCurve; 3], dt: f64) -> Result<PdeResidual> {
    let n = frames[1].len();
    if frames[0].len() != n || frames[2].len() != n {
        return Err(GeoError::Precondition("pde frames must share vertices".into()));
    }
    let k0 = curvatures(surf, &frames[0]);
    let k2 = curvatures(surf, &frames[2]);
    let geo = curve_geometry(surf, &frames[1]);
    let total: f64 = geo.iter().map(|v| v.weight()).sum();
    let (mut sq, mut rsq, mut linf) = (0.0, 0.0, 0.0f64);
    let mut kh = 0.0f64;
    for i in 0..n {
        let v = &geo[i];
        let (kp, k, kn) = (geo[(i + n - 1) % n].kappa, v.kappa, geo[(i + 1) % n].kappa);
        let s = v.h_minus + v.h_plus;
        let dss = 2.0 * ((kn - k) / v.h_plus + (kp - k) / v.h_minus) / s;
        let r = surf.curvature_unchecked(&frames[1].vertices[i]);
        let rhs = dss + r * k + k * k * k;
        let res = (k2[i] - k0[i]) / (2.0 * dt) - rhs;
        sq += res * res * v.weight();
        rsq += rhs * rhs * v.weight();
        linf = linf.max(res.abs());
        kh = kh.max(k.abs() * v.h_plus);
    }
    Ok(PdeResidual { l2: (sq / total).sqrt(), linf, rhs_l2: (rsq / total).sqrt(), smooth_regime: kh < 0.1 })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, TAU};

    use super::*;

    fn flat() -> SurfaceModel {
        SurfaceModel::flat_torus([20.0, 20.0]).unwrap()
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lo: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let up: Vec<f64> = (0..n).map(|i| -0.2 + 0.02 * i as f64).collect();
        let di: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic_tridiagonal(&lo, &di, &up, &rhs);
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = di[i];
            a[(i, (i + n - 1) % n)] = lo[i];
            a[(i, (i + 1) % n)] = up[i];
        }
        let y = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn circle_shrinks_at_unit_rate() {
        let s = flat();
        let r = 1.0;
        let c = DiscreteCurve::from_fn(&s, 400, TAU / 400.0, |u| [10.0 + r * (TAU * u).cos(), 10.0 + r * (TAU * u).sin()]).unwrap();
        let geo = curve_geometry(&s, &c);
        // regular polygon: kappa = 1 / (r cos^2(phi/2))
        let phi = TAU / 400.0;
        assert!((geo[17].kappa - 1.0 / (r * (0.5 * phi).cos().powi(2))).abs() < 1e-10);
        let dt = 1e-5;
        let out = step(&s, &c, dt, &StepPolicy::default()).unwrap();
        let rad = (out.curve.vertices[0].coords[0] - 10.0).hypot(out.curve.vertices[0].coords[1] - 10.0);
        assert!((rad - (r - dt / r)).abs() < 1e-8, "{rad}");
        let law = verify_length_law(&s, &c, &out.curve, dt);
        assert!((law.squared_curvature - TAU / r).abs() < 1e-3);
        assert!(law.residual < 1e-3);
    }

    #[test]
    fn geodesic_is_fixed() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        let c = DiscreteCurve::parallel(&s, FRAC_PI_2, 0.02).unwrap();
        let policy = StepPolicy::default();
        let dt = policy.dt(&curve_geometry(&s, &c));
        let out = step(&s, &c, dt, &policy).unwrap();
        assert!(out.max_kappa < 1e-12);
        assert!((out.curve.length(&s) - c.length(&s)).abs() < 1e-12);
    }

    #[test]
    fn explicit_step_rejects_cfl_violation() {
        let s = flat();
        let c = DiscreteCurve::coordinate_circle(&s, [10.0, 10.0], [1.0, 1.0], 0.05).unwrap();
        assert!(matches!(step(&s, &c, 0.01, &StepPolicy::default()), Err(GeoError::Precondition(_))));
        assert!(step(&s, &c, 0.01, &StepPolicy::semi_implicit()).is_ok());
    }

    fn figure_eight(s: &SurfaceModel, a_small: f64, a_big: f64, n: usize) -> DiscreteCurve {
        DiscreteCurve::from_fn(s, n, 0.01, |u| {
            let t = TAU * u + 0.1;
            let a = if t.sin() >= 0.0 { a_small } else { a_big };
            [10.0 + a * t.sin(), 10.0 + a * t.sin() * t.cos()]
        })
        .unwrap()
    }

    #[test]
    fn figure_eight_small_lobe() {
        let s = flat();
        // lobe area of x = a sin t, y = a sin t cos t is 2a^2/3
        let c = figure_eight(&s, (0.45f64).sqrt(), 1.5f64.sqrt(), 2000);
        let loops = detect_subloops(&s, &c, 0.5).unwrap();
        assert_eq!(loops.len(), 1);
        assert!((loops[0].area - 0.3).abs() < 1e-3, "{}", loops[0].area);
        let both = detect_subloops(&s, &c, 2.0).unwrap();
        assert_eq!(both.len(), 2);
        assert!((both[1].area - 1.0).abs() < 1e-3);
        let circle = DiscreteCurve::coordinate_circle(&s, [10.0, 10.0], [1.0, 1.0], 0.05).unwrap();
        assert!(detect_subloops(&s, &circle, 10.0).unwrap().is_empty());
    }

    #[test]
    fn figure_eight_step_keeps_crossing() {
        let s = flat();
        let c = figure_eight(&s, 0.7, 1.2, 600);
        let before = self_intersections(&s, &c).unwrap().count;
        let p = StepPolicy::default();
        let out = step(&s, &c, p.dt(&curve_geometry(&s, &c)), &p).unwrap();
        assert_eq!(before, 1);
        assert_eq!(self_intersections(&s, &out.curve).unwrap().count, before);
    }

    #[test]
    fn pde_residual_second_order_on_circle() {
        let s = flat();
        let res: Vec<f64> = [100usize, 200]
            .iter()
            .map(|&n| {
                let h = TAU * 0.8 / n as f64;
                let c = DiscreteCurve::from_fn(&s, n, h, |u| [10.0 + 0.8 * (TAU * u).cos(), 10.0 + 0.8 * (TAU * u).sin()]).unwrap();
                let dt = 0.1 * h * h;
                let f = pde_frames(&s, &c, dt).unwrap();
                let r = verify_curvature_pde(&s, &f, dt).unwrap();
                assert!(r.smooth_regime);
                r.l2
            })
            .collect();
        let order = (res[0] / res[1]).log2();
        assert!(order > 1.8, "{res:?} order {order}");
    }
}
