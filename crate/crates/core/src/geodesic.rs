//! Geodesic flow on the unit tangent bundle with chart switching, transversal
//! target crossings and the rotation function of a focusing cap.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::ode::{dp45_step, error_norm, StepControl, Tolerance};
use crate::profile::CapProfile;
use crate::surface::{wrap, ChartPoint, Metric, SurfaceModel};

/// Orthonormal frame `(e1, e2)` with `e1` along the first coordinate axis.
pub fn frame(g: &Metric) -> ([f64; 2], [f64; 2]) {
    let s11 = g.g11.sqrt();
    let det = g.det();
    ([1.0 / s11, 0.0], [-g.g12 / (s11 * det.sqrt()), (g.g11 / det).sqrt()])
}

/// A unit tangent vector: base point and direction angle in the chart frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    pub base: ChartPoint,
    pub angle: f64,
}

impl UnitTangent {
    pub const fn new(base: ChartPoint, angle: f64) -> Self {
        Self { base, angle }
    }

    /// Coordinate components of the vector.
    pub fn velocity(&self, s: &SurfaceModel) -> [f64; 2] {
        let (e1, e2) = frame(&s.metric_unchecked(&self.base));
        let (sn, cs) = self.angle.sin_cos();
        [cs * e1[0] + sn * e2[0], cs * e1[1] + sn * e2[1]]
    }

    /// Direction of a nonzero coordinate vector.
    pub fn from_velocity(s: &SurfaceModel, base: ChartPoint, v: [f64; 2]) -> Self {
        let g = s.metric_unchecked(&base);
        let a1 = g.g11.sqrt() * (v[0] + g.g12 / g.g11 * v[1]);
        let a2 = v[1] * (g.det() / g.g11).sqrt();
        Self { base, angle: a2.atan2(a1) }
    }

    pub fn reversed(&self) -> Self {
        Self { base: self.base, angle: self.angle + PI }
    }

    /// Same vector re-expressed in the preferred chart of its base point.
    pub fn settled(&self, s: &SurfaceModel) -> Self {
        let target = s.point(s.canonical(&self.base)).chart;
        self.in_chart(s, target, None)
    }

    pub fn in_chart(&self, s: &SurfaceModel, chart: usize, near: Option<[f64; 2]>) -> Self {
        if chart == self.base.chart {
            let mut b = self.base;
            if let Some(n) = near {
                s.align(&mut b, n);
            }
            return Self { base: b, angle: self.angle };
        }
        let v = self.velocity(s);
        let j = s.transition_jacobian(&self.base, chart);
        let q = s.to_chart(&self.base, chart, near);
        Self::from_velocity(s, q, crate::surface::mat_vec(j, v))
    }

    /// `g(v, d_theta)` for surfaces of revolution (Clairaut's integral).
    pub fn clairaut(&self, s: &SurfaceModel) -> Option<f64> {
        s.profile()?;
        let v = self.velocity(s);
        let g = s.metric_unchecked(&self.base);
        Some(g.dot(v, killing_field(s, &self.base)))
    }
}

/// Rotation field `d_theta` in chart coordinates.
pub fn killing_field(s: &SurfaceModel, p: &ChartPoint) -> [f64; 2] {
    let (x, y) = (p.coords[0], p.coords[1]);
    if !s.is_sphere_type() {
        return [0.0, 1.0];
    }
    match p.chart {
        crate::surface::NORTH => [-y, x],
        crate::surface::SOUTH => [y, -x],
        _ => [0.0, 1.0],
    }
}

/// Integration settings for the geodesic flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub tol: Tolerance,
    pub h_max: f64,
    /// Crossings earlier than this are ignored (starts on a target).
    pub min_time: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { tol: Tolerance::default(), h_max: 0.05, min_time: 0.0 }
    }
}

impl FlowOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol: Tolerance::new(tol, tol), ..Self::default() }
    }
}

/// Right-hand side of the geodesic equation, optionally with two normal
/// Jacobi fields `u'' = -K u` in slots 4..8.
#[inline]
pub(crate) fn rhs<const N: usize>(s: &SurfaceModel, chart: usize, y: &[f64; N]) -> [f64; N] {
    let p = ChartPoint::new(chart, [y[0], y[1]]);
    let (g, dg) = s.metric_derivs(&p);
    let a = crate::surface::christoffel_from(&g, &dg).accel([y[2], y[3]]);
    let mut out = [0.0; N];
    out[0] = y[2];
    out[1] = y[3];
    out[2] = a[0];
    out[3] = a[1];
    if N >= 8 {
        let k = s.curvature_unchecked(&p);
        out[4] = y[5];
        out[5] = -k * y[4];
        out[6] = y[7];
        out[7] = -k * y[6];
    }
    out
}

/// Adaptive stepper with per-step renormalization and chart switching.
pub(crate) struct Engine<'a, const N: usize> {
    pub surf: &'a SurfaceModel,
    pub chart: usize,
    pub y: [f64; N],
    pub t: f64,
    ctl: StepControl,
}

/// One accepted step, expressed in the chart it was taken in.
pub(crate) struct Accepted<const N: usize> {
    pub chart: usize,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub t0: f64,
    pub h: f64,
}

impl<'a, const N: usize> Engine<'a, N> {
    pub fn new(surf: &'a SurfaceModel, v0: &UnitTangent, extra: &[f64], opts: &FlowOptions) -> Self {
        let v = v0.velocity(surf);
        let mut y = [0.0; N];
        y[0] = v0.base.coords[0];
        y[1] = v0.base.coords[1];
        y[2] = v[0];
        y[3] = v[1];
        for (slot, e) in y[4..].iter_mut().zip(extra) {
            *slot = *e;
        }
        let mut h_max = opts.h_max;
        if let Some(l) = surf.sphere_length() {
            h_max = h_max.min(0.02 * l);
        }
        Self { surf, chart: v0.base.chart, y, t: 0.0, ctl: StepControl::new(opts.tol, h_max) }
    }

    pub fn point(&self) -> ChartPoint {
        ChartPoint::new(self.chart, [self.y[0], self.y[1]])
    }

    pub fn tangent(&self) -> UnitTangent {
        UnitTangent::from_velocity(self.surf, self.point(), [self.y[2], self.y[3]])
    }

    /// Takes one accepted step of size at most `max_h` (renormalized, not yet settled).
    pub fn advance(&mut self, max_h: f64) -> Result<Accepted<N>> {
        let chart = self.chart;
        let surf = self.surf;
        let mut f = |y: &[f64; N]| rhs(surf, chart, y);
        loop {
            let h = self.ctl.h.min(max_h);
            let (mut y1, err) = dp45_step(&mut f, &self.y, h);
            let e = error_norm(&self.y, &y1, &err, self.ctl.tol);
            let hit_cap = h >= max_h;
            if self.ctl.update(e) {
                normalize(surf, chart, &mut y1);
                let acc = Accepted { chart, y0: self.y, y1, t0: self.t, h };
                self.y = y1;
                self.t = if hit_cap && max_h.is_finite() { acc.t0 + max_h } else { self.t + h };
                return Ok(acc);
            }
            if self.ctl.h < self.ctl.h_min {
                return Err(GeoError::Integrator(format!("step size underflow at t = {:.6e}", self.t)));
            }
        }
    }

    /// Moves to the preferred chart if the point left its keep region.
    pub fn settle(&mut self) {
        let (p, v) = self.surf.settle(self.point(), [self.y[2], self.y[3]]);
        self.chart = p.chart;
        self.y[0] = p.coords[0];
        self.y[1] = p.coords[1];
        self.y[2] = v[0];
        self.y[3] = v[1];
    }

    /// State at `t0 + tau` inside an accepted step, by a single step from `y0`.
    pub fn interpolate(&self, acc: &Accepted<N>, tau: f64) -> [f64; N] {
        let surf = self.surf;
        let chart = acc.chart;
        let mut f = |y: &[f64; N]| rhs(surf, chart, y);
        let mut y = dp45_step(&mut f, &acc.y0, tau).0;
        normalize(surf, chart, &mut y);
        y
    }
}

fn normalize<const N: usize>(s: &SurfaceModel, chart: usize, y: &mut [f64; N]) {
    let g = s.metric_unchecked(&ChartPoint::new(chart, [y[0], y[1]]));
    let n = g.norm([y[2], y[3]]);
    if n > 0.0 && n.is_finite() {
        y[2] /= n;
        y[3] /= n;
    }
}

/// Closed polyline target with a spatial hash over locator coordinates.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    pub points: Vec<ChartPoint>,
    cell: f64,
    buckets: std::collections::HashMap<[i64; 3], Vec<usize>>,
}

impl SampledCurve {
    /// `points` describe a closed curve (the last point joins the first).
    pub fn new(s: &SurfaceModel, points: Vec<ChartPoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(GeoError::Degenerate("sampled curve needs at least 3 points".into()));
        }
        let locs: Vec<[f64; 3]> = points.iter().map(|p| s.locator(p)).collect();
        let n = locs.len();
        let seg = (0..n).map(|i| dist3(locs[i], locs[(i + 1) % n])).fold(0.0, f64::max);
        let cell = (2.0 * seg).max(0.2);
        let mut buckets: std::collections::HashMap<[i64; 3], Vec<usize>> = Default::default();
        for i in 0..n {
            let m = mid3(locs[i], locs[(i + 1) % n]);
            buckets.entry(cell_of(m, cell)).or_default().push(i);
        }
        Ok(Self { points, cell, buckets })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn nearest_segment(&self, s: &SurfaceModel, p: &ChartPoint) -> Option<usize> {
        let q = s.locator(p);
        let c = cell_of(q, self.cell);
        let n = self.points.len();
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in list {
                            let a = s.locator(&self.points[i]);
                            let b = s.locator(&self.points[(i + 1) % n]);
                            let d = seg_dist3(q, a, b);
                            if d < best_d {
                                best_d = d;
                                best = Some(i);
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// Signed offset of `p` from the nearest segment, measured in `p`'s chart.
    fn side(&self, s: &SurfaceModel, p: &ChartPoint) -> f64 {
        let Some(i) = self.nearest_segment(s, p) else {
            return f64::NAN;
        };
        let n = self.points.len();
        let a = s.to_chart(&self.points[i], p.chart, Some(p.coords));
        let b = s.to_chart(&self.points[(i + 1) % n], p.chart, Some(p.coords));
        let g = s.metric_unchecked(p);
        let d = [b.coords[0] - a.coords[0], b.coords[1] - a.coords[1]];
        let w = [p.coords[0] - a.coords[0], p.coords[1] - a.coords[1]];
        let len = g.norm(d);
        if len == 0.0 {
            return f64::NAN;
        }
        g.cross(d, w) / len
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mid3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

pub(crate) fn cell_of(p: [f64; 3], cell: f64) -> [i64; 3] {
    [(p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64]
}

pub(crate) fn seg_dist3(q: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let aq = [q[0] - a[0], q[1] - a[1], q[2] - a[2]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if l2 > 0.0 { ((aq[0] * ab[0] + aq[1] * ab[1] + aq[2] * ab[2]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist3(q, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

/// Closed curves a geodesic can hit.
#[derive(Debug, Clone)]
pub enum Target {
    /// `{r = const}`; on a torus the first chart coordinate.
    Parallel { r: f64 },
    /// Full meridian through both poles at longitude `theta` (sphere type).
    Meridian { theta: f64 },
    /// `{coords[axis] = value}` modulo the period of a periodic chart.
    CoordinateLine { axis: usize, value: f64 },
    Sampled(Arc<SampledCurve>),
}

impl Target {
    /// Smooth function vanishing exactly on the target near `p`.
    pub fn side(&self, s: &SurfaceModel, p: &ChartPoint) -> f64 {
        match self {
            Target::Parallel { r } => {
                let per = s.chart_periods(p.chart)[0];
                if s.is_sphere_type() {
                    s.radius_of(p) - r
                } else {
                    wrap(p.coords[0] - r, per.unwrap_or(f64::INFINITY))
                }
            }
            Target::Meridian { theta } => {
                let (sn, cs) = theta.sin_cos();
                let (x, y) = (p.coords[0], p.coords[1]);
                let l = s.sphere_length().unwrap_or(f64::NAN);
                let rho_of = |r: f64| s.base_profile().map_or(r, |pr| pr.eval(r).rho);
                match p.chart {
                    crate::surface::NORTH => {
                        let r = x.hypot(y);
                        let q = if r > 1e-12 { rho_of(r) / r } else { 1.0 };
                        q * (y * cs - x * sn)
                    }
                    crate::surface::SOUTH => {
                        let sr = x.hypot(y);
                        let q = if sr > 1e-12 { rho_of(l - sr) / sr } else { 1.0 };
                        q * (-y * cs - x * sn)
                    }
                    _ => rho_of(x) * (y - theta).sin(),
                }
            }
            Target::CoordinateLine { axis, value } => {
                let a = (*axis).min(1);
                let per = s.chart_periods(p.chart)[a];
                wrap(p.coords[a] - value, per.unwrap_or(f64::INFINITY))
            }
            Target::Sampled(c) => c.side(s, p),
        }
    }

    /// Side differences larger than this are wrap-around jumps, not crossings.
    fn jump_bound(&self, s: &SurfaceModel) -> f64 {
        match self {
            Target::Parallel { .. } if !s.is_sphere_type() => 0.25 * s.chart_periods(0)[0].unwrap_or(f64::INFINITY),
            Target::CoordinateLine { axis, .. } => 0.25 * s.chart_periods(0)[(*axis).min(1)].unwrap_or(f64::INFINITY),
            Target::Sampled(c) => c.cell,
            _ => f64::INFINITY,
        }
    }

    /// `|sin|` of the angle between a unit vector and the target at `p`.
    pub fn sin_angle(&self, s: &SurfaceModel, p: &ChartPoint, v: [f64; 2]) -> f64 {
        let h = 1e-6;
        let mut grad = [0.0; 2];
        for (a, gr) in grad.iter_mut().enumerate() {
            let mut qp = *p;
            let mut qm = *p;
            qp.coords[a] += h;
            qm.coords[a] -= h;
            *gr = (self.side(s, &qp) - self.side(s, &qm)) / (2.0 * h);
        }
        let gi = s.metric_unchecked(p).inverse();
        let norm = gi.norm(grad);
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        ((grad[0] * v[0] + grad[1] * v[1]) / norm).abs()
    }
}

/// Crossings with `|sin angle|` below this are reported as grazing.
pub const GRAZING_SIN: f64 = 1e-6;

/// First crossing of a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hit {
    pub t: f64,
    pub target: usize,
    pub state: UnitTangent,
    pub sin_angle: f64,
    pub grazing: bool,
}

/// Drives `engine` up to `t_max`, stopping at the first target crossing.
/// `observe(t, chart, y)` sees every accepted state and the hit state.
pub(crate) fn run_flow<const N: usize, O>(
    engine: &mut Engine<'_, N>,
    t_max: f64,
    targets: &[Target],
    opts: &FlowOptions,
    mut observe: O,
) -> Result<Option<Hit>>
where
    O: FnMut(f64, usize, &[f64; N]),
{
    let surf = engine.surf;
    if opts.min_time <= 0.0 {
        let p = engine.point();
        for (i, tg) in targets.iter().enumerate() {
            if tg.side(surf, &p).abs() <= 1e-14 {
                let v = [engine.y[2], engine.y[3]];
                let sin = tg.sin_angle(surf, &p, v);
                return Ok(Some(Hit { t: 0.0, target: i, state: engine.tangent(), sin_angle: sin, grazing: sin < GRAZING_SIN }));
            }
        }
    }
    let mut guard = 0usize;
    while engine.t < t_max {
        guard += 1;
        if guard > 20_000_000 {
            return Err(GeoError::Integrator("step budget exhausted".into()));
        }
        let acc = engine.advance(t_max - engine.t)?;
        if acc.y1.iter().any(|v| !v.is_finite()) {
            return Err(GeoError::Integrator(format!("non-finite state at t = {:.6e}", acc.t0)));
        }
        let p0 = ChartPoint::new(acc.chart, [acc.y0[0], acc.y0[1]]);
        let p1 = ChartPoint::new(acc.chart, [acc.y1[0], acc.y1[1]]);
        let mut best: Option<(f64, usize)> = None;
        for (i, tg) in targets.iter().enumerate() {
            let s0 = tg.side(surf, &p0);
            let s1 = tg.side(surf, &p1);
            if !(s0.is_finite() && s1.is_finite()) || s0 == 0.0 {
                continue;
            }
            if !(s0 * s1 < 0.0 || s1 == 0.0) || (s0 - s1).abs() > tg.jump_bound(surf) {
                continue;
            }
            let tau = if s1 == 0.0 {
                acc.h
            } else {
                let (mut lo, mut hi) = (0.0, acc.h);
                for _ in 0..80 {
                    if hi - lo <= 1e-13 * (1.0 + acc.t0) {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let y = engine.interpolate(&acc, mid);
                    let sm = tg.side(surf, &ChartPoint::new(acc.chart, [y[0], y[1]]));
                    if sm * s0 > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            if acc.t0 + tau < opts.min_time {
                continue;
            }
            if best.map_or(true, |b| tau < b.0) {
                best = Some((tau, i));
            }
        }
        if let Some((tau, i)) = best {
            let y = engine.interpolate(&acc, tau);
            let p = ChartPoint::new(acc.chart, [y[0], y[1]]);
            let v = [y[2], y[3]];
            let sin = targets[i].sin_angle(surf, &p, v);
            let state = UnitTangent::from_velocity(surf, p, v);
            engine.y = y;
            engine.chart = acc.chart;
            engine.t = acc.t0 + tau;
            observe(engine.t, acc.chart, &y);
            return Ok(Some(Hit { t: engine.t, target: i, state, sin_angle: sin, grazing: sin < GRAZING_SIN }));
        }
        engine.settle();
        observe(engine.t, engine.chart, &engine.y);
    }
    Ok(None)
}

/// How a shot segment ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Termination {
    ReachedTime,
    HitTarget { target: usize, grazing: bool, sin_angle: f64 },
    LeftRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub state: UnitTangent,
}

/// Time-ordered samples of a geodesic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicSegment {
    pub samples: Vec<Sample>,
    pub termination: Termination,
}

impl GeodesicSegment {
    pub fn end(&self) -> &Sample {
        self.samples.last().expect("segment has at least one sample")
    }

    pub fn duration(&self) -> f64 {
        self.end().t
    }

    /// Columns `t,chart_id,x,y,angle`.
    pub fn to_csv(&self) -> String {
        samples_csv(&self.samples)
    }

    pub fn points(&self) -> Vec<ChartPoint> {
        self.samples.iter().map(|s| s.state.base).collect()
    }
}

pub fn samples_csv(samples: &[Sample]) -> String {
    let mut out = String::from("t,chart_id,x,y,angle\n");
    for s in samples {
        out.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
            s.t, s.state.base.chart, s.state.base.coords[0], s.state.base.coords[1], s.state.angle
        ));
    }
    out
}

/// Integrates the geodesic of `v0` for time `t_max`, stopping early at the
/// first crossing of any target.
pub fn shoot(surf: &SurfaceModel, v0: &UnitTangent, t_max: f64, targets: &[Target], opts: &FlowOptions) -> Result<GeodesicSegment> {
    if !(t_max > 0.0) {
        return Err(GeoError::Precondition("t_max must be positive".into()));
    }
    surf.validate(&v0.base)?;
    let mut engine = Engine::<4>::new(surf, v0, &[], opts);
    let mut samples = vec![Sample { t: 0.0, state: *v0 }];
    let hit = run_flow(&mut engine, t_max, targets, opts, |t, chart, y| {
        let p = ChartPoint::new(chart, [y[0], y[1]]);
        samples.push(Sample { t, state: UnitTangent::from_velocity(surf, p, [y[2], y[3]]) });
    })?;
    let termination = match hit {
        Some(h) => {
            if h.t == 0.0 {
                samples.truncate(1);
            }
            Termination::HitTarget { target: h.target, grazing: h.grazing, sin_angle: h.sin_angle }
        }
        None => Termination::ReachedTime,
    };
    Ok(GeodesicSegment { samples, termination })
}

/// First transversal (or grazing) crossing of any target before `t_cap`.
pub fn hitting_time(surf: &SurfaceModel, v0: &UnitTangent, targets: &[Target], t_cap: f64, opts: &FlowOptions) -> Result<Option<Hit>> {
    if !(t_cap > 0.0) {
        return Err(GeoError::Precondition("T_cap must be positive".into()));
    }
    let mut engine = Engine::<4>::new(surf, v0, &[], opts);
    run_flow(&mut engine, t_cap, targets, opts, |_, _, _| {})
}

/// `psi_t(v0)`, expressed in the preferred chart.
pub fn propagate(surf: &SurfaceModel, v0: &UnitTangent, t: f64, opts: &FlowOptions) -> Result<UnitTangent> {
    if t == 0.0 {
        return Ok(*v0);
    }
    let mut engine = Engine::<4>::new(surf, v0, &[], opts);
    run_flow(&mut engine, t, &[], opts, |_, _, _| {})?;
    Ok(engine.tangent())
}

/// States at the given ascending times.
pub fn propagate_through(surf: &SurfaceModel, v0: &UnitTangent, times: &[f64], opts: &FlowOptions) -> Result<Vec<UnitTangent>> {
    let mut engine = Engine::<4>::new(surf, v0, &[], opts);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < engine.t {
            return Err(GeoError::Precondition("times must be ascending".into()));
        }
        run_flow(&mut engine, t, &[], opts, |_, _, _| {})?;
        out.push(engine.tangent());
    }
    Ok(out)
}

/// Flow for time `t` together with the normal Jacobi transfer matrix
/// `[[u1, u2], [u1', u2']]` (initial value identity).
pub fn flow_with_jacobi(surf: &SurfaceModel, v0: &UnitTangent, t: f64, opts: &FlowOptions) -> Result<(UnitTangent, [[f64; 2]; 2])> {
    let mut engine = Engine::<8>::new(surf, v0, &[1.0, 0.0, 0.0, 1.0], opts);
    run_flow(&mut engine, t, &[], opts, |_, _, _| {})?;
    let y = engine.y;
    Ok((engine.tangent(), [[y[4], y[6]], [y[5], y[7]]]))
}

/// `exp_p(w)` for a coordinate vector `w` at `p`, expressed in `p`'s chart.
pub fn exp_map(surf: &SurfaceModel, p: &ChartPoint, w: [f64; 2], opts: &FlowOptions) -> Result<ChartPoint> {
    let n = surf.metric_unchecked(p).norm(w);
    if n == 0.0 {
        return Ok(*p);
    }
    let v0 = UnitTangent::from_velocity(surf, *p, w);
    let end = propagate(surf, &v0, n, opts)?;
    Ok(surf.to_chart(&end.base, p.chart, Some(p.coords)))
}

/// `log_p(q)` by Newton iteration on the exponential map.
pub fn log_map(surf: &SurfaceModel, p: &ChartPoint, q: &ChartPoint, guess: Option<[f64; 2]>, opts: &FlowOptions) -> Result<[f64; 2]> {
    let qc = surf.to_chart(q, p.chart, Some(p.coords)).coords;
    let mut w = guess.unwrap_or([qc[0] - p.coords[0], qc[1] - p.coords[1]]);
    let scale = surf.metric_unchecked(p).norm([qc[0] - p.coords[0], qc[1] - p.coords[1]]).max(1e-300);
    let resid = |w: [f64; 2]| -> Result<[f64; 2]> {
        let e = exp_map(surf, p, w, opts)?;
        let e = surf.to_chart(&e, p.chart, Some(qc));
        Ok([e.coords[0] - qc[0], e.coords[1] - qc[1]])
    };
    let mut f = resid(w)?;
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let err = f[0].abs().max(f[1].abs());
        if err <= 1e-14 * scale.max(1.0) || (err >= last && err < 1e-11 * scale.max(1.0)) {
            return Ok(w);
        }
        last = err;
        let d = 1e-7 * (w[0].abs().max(w[1].abs())).max(1e-3);
        let mut jac = [[0.0; 2]; 2];
        for a in 0..2 {
            let mut wp = w;
            let mut wm = w;
            wp[a] += d;
            wm[a] -= d;
            let fp = resid(wp)?;
            let fm = resid(wm)?;
            jac[0][a] = (fp[0] - fm[0]) / (2.0 * d);
            jac[1][a] = (fp[1] - fm[1]) / (2.0 * d);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(GeoError::Refinement { residual: err, reason: "singular exponential map".into() });
        }
        w[0] -= (jac[1][1] * f[0] - jac[0][1] * f[1]) / det;
        w[1] -= (-jac[1][0] * f[0] + jac[0][0] * f[1]) / det;
        f = resid(w)?;
    }
    let err = f[0].abs().max(f[1].abs());
    if err < 1e-10 * scale.max(1.0) {
        Ok(w)
    } else {
        Err(GeoError::Refinement { residual: err, reason: "logarithm did not converge".into() })
    }
}

/// Rotation and exit time of a geodesic entering a cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapRotation {
    pub xi: f64,
    pub theta: f64,
    pub t_exit: f64,
}

/// Evaluates the rotation function of a focusing cap. The cap is doubled
/// across its equator so the interior geodesics see the cap metric only.
#[derive(Debug, Clone)]
pub struct CapRotor {
    surface: SurfaceModel,
    r0: f64,
    pub opts: FlowOptions,
    /// Derivative step for [`CapRotor::derivative`].
    pub diff_step: f64,
}

impl CapRotor {
    pub fn new(cap: Arc<CapProfile>) -> Result<Self> {
        let r0 = cap.r0;
        let surface = SurfaceModel::doubled_cap(cap)?;
        Ok(Self { surface, r0, opts: FlowOptions { min_time: 1e-6, ..FlowOptions::default() }, diff_step: 1e-4 })
    }

    pub fn surface(&self) -> &SurfaceModel {
        &self.surface
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Inward unit vector on the equator at longitude 0, at angle `xi` from the parallel.
    pub fn entry(&self, xi: f64) -> UnitTangent {
        UnitTangent::new(ChartPoint::new(crate::surface::BAND, [self.r0, 0.0]), xi.cos().atan2(-xi.sin()))
    }

    /// `Theta(xi)` for `xi` in `(0, pi)`; continuous lift of the exit longitude.
    pub fn rotation(&self, xi: f64) -> Result<CapRotation> {
        if !(xi > 0.0 && xi < PI) {
            return Err(GeoError::Precondition(format!("xi = {xi} outside (0, pi)")));
        }
        let s = &self.surface;
        let v0 = self.entry(xi);
        let mut engine = Engine::<4>::new(s, &v0, &[], &self.opts);
        let mut prev = [self.r0, 0.0];
        let mut lift = 0.0;
        let safety = 50.0 * self.r0 + 10.0;
        let hit = run_flow(&mut engine, safety, &[Target::Parallel { r: self.r0 }], &self.opts, |_, chart, y| {
            let c = s.canonical(&ChartPoint::new(chart, [y[0], y[1]]));
            let cur = [c[0] * c[1].cos(), c[0] * c[1].sin()];
            lift += (prev[0] * cur[1] - prev[1] * cur[0]).atan2(prev[0] * cur[0] + prev[1] * cur[1]);
            prev = cur;
        })?;
        let hit = hit.ok_or(GeoError::Trapped(safety))?;
        let theta = if (xi - FRAC_PI_2).abs() < 1e-12 {
            let exit = s.canonical(&hit.state.base)[1];
            PI + wrap(exit - PI, TAU)
        } else if xi > FRAC_PI_2 {
            lift + TAU
        } else {
            lift
        };
        Ok(CapRotation { xi, theta, t_exit: hit.t })
    }

    /// `dTheta/dxi` by a Richardson-extrapolated central difference.
    pub fn derivative(&self, xi: f64) -> Result<f64> {
        let h = self.diff_step.min(0.5 * xi).min(0.5 * (PI - xi));
        let d = |h: f64| -> Result<f64> { Ok((self.rotation(xi + h)?.theta - self.rotation(xi - h)?.theta) / (2.0 * h)) };
        let d1 = d(h)?;
        let d2 = d(0.5 * h)?;
        Ok((4.0 * d2 - d1) / 3.0)
    }
}

/// `(Theta(xi), T_exit)` for a single angle.
pub fn cap_rotation(cap: &Arc<CapProfile>, xi: f64) -> Result<(f64, f64)> {
    let r = CapRotor::new(cap.clone())?.rotation(xi)?;
    Ok((r.theta, r.t_exit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{build_cap, CurvatureFamily};
    use crate::surface::{build_model_sphere, BAND, NORTH};

    fn cap() -> Arc<CapProfile> {
        Arc::new(build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap())
    }

    #[test]
    fn flat_torus_lines_are_straight() {
        let s = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
        let v0 = UnitTangent::new(ChartPoint::new(0, [0.1, 0.2]), 0.7);
        let seg = shoot(&s, &v0, 1.0, &[], &FlowOptions::default()).unwrap();
        for smp in &seg.samples {
            let p = smp.state.base.coords;
            assert!((p[0] - 0.1 - smp.t * 0.7f64.cos()).abs() < 1e-13);
            assert!((p[1] - 0.2 - smp.t * 0.7f64.sin()).abs() < 1e-13);
        }
        assert!((seg.duration() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn great_circle_closes() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        for (p, a) in [(ChartPoint::new(BAND, [1.2, 0.3]), 0.4), (ChartPoint::new(NORTH, [0.2, -0.1]), 2.0)] {
            let v0 = UnitTangent::new(p, a);
            let end = propagate(&s, &v0, TAU, &FlowOptions::default()).unwrap().in_chart(&s, p.chart, Some(p.coords));
            assert!((end.base.coords[0] - p.coords[0]).abs() < 1e-8 && (end.base.coords[1] - p.coords[1]).abs() < 1e-8);
            assert!(wrap(end.angle - a, TAU).abs() < 1e-8);
        }
    }

    #[test]
    fn cylinder_equator_is_invariant() {
        let m = build_model_sphere(cap(), 1.0).unwrap();
        let (r1, _) = m.cap_equators().unwrap();
        let z = r1 + 0.37;
        let v0 = UnitTangent::new(ChartPoint::new(BAND, [z, 0.0]), FRAC_PI_2);
        let seg = shoot(&m, &v0, 20.0, &[], &FlowOptions::default()).unwrap();
        let drift = seg.samples.iter().map(|s| (s.state.base.coords[0] - z).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-12, "{drift}");
    }

    #[test]
    fn reversibility_and_clairaut() {
        let m = build_model_sphere(cap(), 1.0).unwrap();
        let z = 0.45 * m.sphere_length().unwrap();
        let v0 = UnitTangent::new(ChartPoint::new(BAND, [z, 0.5]), 1.1);
        let c0 = v0.clairaut(&m).unwrap();
        let seg = shoot(&m, &v0, 15.0, &[], &FlowOptions::default()).unwrap();
        for smp in &seg.samples {
            assert!((smp.state.clairaut(&m).unwrap() - c0).abs() < 1e-8 * (1.0 + smp.t));
        }
        let back = propagate(&m, &seg.end().state.reversed(), 15.0, &FlowOptions::default()).unwrap().in_chart(&m, BAND, Some(v0.base.coords));
        assert!((back.base.coords[0] - z).abs() < 1e-8 && (back.base.coords[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn start_on_target_hits_at_zero() {
        let s = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
        let v0 = UnitTangent::new(ChartPoint::new(0, [0.0, 0.3]), 0.5);
        let hit = hitting_time(&s, &v0, &[Target::CoordinateLine { axis: 0, value: 0.0 }], 1.0, &FlowOptions::default()).unwrap().unwrap();
        assert_eq!(hit.t, 0.0);
        assert!(!hit.grazing);
    }

    #[test]
    fn crossing_time_on_flat_torus() {
        let s = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
        let v0 = UnitTangent::new(ChartPoint::new(0, [0.1, 0.3]), 0.5);
        let opts = FlowOptions::default();
        let hit = hitting_time(&s, &v0, &[Target::CoordinateLine { axis: 0, value: 0.6 }], 4.0, &opts).unwrap().unwrap();
        assert!((hit.t - 0.5 / 0.5f64.cos()).abs() < 1e-10);
        let grazing = UnitTangent::new(ChartPoint::new(0, [0.1, 0.3]), 1e-8);
        let tg = [Target::CoordinateLine { axis: 1, value: 0.3 }];
        let opts = FlowOptions { min_time: 1e-9, ..opts };
        assert!(hitting_time(&s, &grazing, &tg, 4.0, &opts).unwrap().is_none());
    }

    #[test]
    fn meridian_through_pole_has_half_turn() {
        let rot = CapRotor::new(cap()).unwrap();
        let r = rot.rotation(FRAC_PI_2).unwrap();
        assert!((r.theta - PI).abs() < 1e-6, "{}", r.theta);
        assert!((r.t_exit - 2.0 * rot.r0()).abs() < 1e-9);
    }

    #[test]
    fn exp_log_round_trip() {
        let m = build_model_sphere(cap(), 1.0).unwrap();
        let p = ChartPoint::new(NORTH, [0.3, 0.1]);
        let w = [0.2, 0.35];
        let opts = FlowOptions::default();
        let q = exp_map(&m, &p, w, &opts).unwrap();
        let back = log_map(&m, &p, &q, None, &opts).unwrap();
        assert!((back[0] - w[0]).abs() < 1e-10 && (back[1] - w[1]).abs() < 1e-10);
    }
}
