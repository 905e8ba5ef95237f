//! Closed geodesics as critical points of the broken-geodesic energy
//! `E_k(x) = k * sum d(x_i, x_{i+1})^2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::geodesic::{exp_map, log_map, propagate_through, samples_csv, FlowOptions, Sample, UnitTangent};
use crate::surface::{ChartPoint, SurfaceModel};

/// Linear stability of a closed geodesic, from the trace of its normal monodromy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Floquet {
    /// Real multipliers `q`, `1/q` with `|q| > 1`.
    Hyperbolic { multiplier: f64 },
    /// Multipliers `exp(+-i angle)` on the unit circle.
    Elliptic { angle: f64 },
    /// Trace within tolerance of `+-2`.
    Parabolic { trace: f64 },
}

impl Floquet {
    pub fn from_trace(trace: f64, tol: f64) -> Self {
        if (trace.abs() - 2.0).abs() <= tol {
            Floquet::Parabolic { trace }
        } else if trace.abs() > 2.0 {
            let d = (trace * trace - 4.0).sqrt();
            let q = if trace > 0.0 { 0.5 * (trace + d) } else { 0.5 * (trace - d) };
            Floquet::Hyperbolic { multiplier: q }
        } else {
            Floquet::Elliptic { angle: (0.5 * trace).acos() }
        }
    }
}

/// Residuals certifying a refined loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosureDiagnostics {
    /// Worst mismatch between a node and the geodesic shot from its predecessor.
    pub closure_gap: f64,
    /// Worst turning angle at a node.
    pub kink: f64,
    /// Worst discrete covariant acceleration `|log_+ + log_-| / l^2`.
    pub residual: f64,
    /// `|sqrt(E_k) - L|`.
    pub energy_gap: f64,
    pub iterations: usize,
    /// Eigenvalues dropped by the pseudo-inverse in the last Newton step.
    pub kernel_dim: usize,
}

/// A refined closed geodesic with its variational data.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedGeodesic {
    pub length: f64,
    pub start: UnitTangent,
    #[serde(skip)]
    pub nodes: Vec<ChartPoint>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
    pub index: Option<usize>,
    pub nullity: Option<usize>,
    pub floquet: Option<Floquet>,
    pub signature: Option<crate::knots::FlatKnotSignature>,
    pub nondegenerate: Option<bool>,
    pub diagnostics: ClosureDiagnostics,
}

impl ClosedGeodesic {
    /// Columns `t,chart_id,x,y,angle`.
    pub fn to_csv(&self) -> String {
        samples_csv(&self.samples)
    }

    pub fn points(&self) -> Vec<ChartPoint> {
        self.samples.iter().map(|s| s.state.base).collect()
    }

    /// Builds the loop directly from a unit vector whose geodesic closes at `length`.
    pub fn from_orbit(surf: &SurfaceModel, start: UnitTangent, length: f64, opts: &FlowOptions) -> Result<Self> {
        let n = ((length / 0.01).ceil() as usize).max(64);
        let times: Vec<f64> = (0..=n).map(|i| length * i as f64 / n as f64).collect();
        let states = propagate_through(surf, &start, &times, opts)?;
        let end = states.last().copied().unwrap_or(start).in_chart(surf, start.base.chart, Some(start.base.coords));
        let gap = (end.base.coords[0] - start.base.coords[0]).abs().max((end.base.coords[1] - start.base.coords[1]).abs());
        let samples: Vec<Sample> = times.iter().zip(&states).map(|(t, s)| Sample { t: *t, state: *s }).collect();
        let nodes = samples.iter().step_by((n / 32).max(1)).map(|s| s.state.base).collect();
        Ok(Self {
            length,
            start,
            nodes,
            samples,
            index: None,
            nullity: None,
            floquet: None,
            signature: None,
            nondegenerate: None,
            diagnostics: ClosureDiagnostics {
                closure_gap: gap,
                kink: crate::surface::wrap(end.angle - start.angle, std::f64::consts::TAU).abs(),
                residual: 0.0,
                energy_gap: 0.0,
                iterations: 0,
                kernel_dim: 0,
            },
        })
    }
}

/// Newton settings for [`refine_closed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub flow: FlowOptions,
    pub max_iter: usize,
    /// Target turning angle at nodes.
    pub kink_tol: f64,
    /// Relative eigenvalue cutoff of the pseudo-inverse.
    pub pinv_rel: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::default(), max_iter: 40, kink_tol: 1e-11, pinv_rel: 1e-7 }
    }
}

/// Redistributes a closed polyline to `k` points equally spaced in chord length.
pub fn resample_closed(surf: &SurfaceModel, seed: &[ChartPoint], k: usize) -> Result<Vec<ChartPoint>> {
    let mut pts: Vec<ChartPoint> = seed.to_vec();
    if pts.len() >= 2 {
        let a = pts[0];
        let b = surf.to_chart(pts.last().unwrap(), a.chart, Some(a.coords));
        if (a.coords[0] - b.coords[0]).abs() + (a.coords[1] - b.coords[1]).abs() < 1e-9 {
            pts.pop();
        }
    }
    if pts.len() < 3 {
        return Err(GeoError::Degenerate("closed seed needs at least 3 distinct points".into()));
    }
    let n = pts.len();
    let mut cum = vec![0.0; n + 1];
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let a = pts[i];
        let b = surf.to_chart(&pts[(i + 1) % n], a.chart, Some(a.coords));
        let d = [b.coords[0] - a.coords[0], b.coords[1] - a.coords[1]];
        let mid = ChartPoint::new(a.chart, [a.coords[0] + 0.5 * d[0], a.coords[1] + 0.5 * d[1]]);
        cum[i + 1] = cum[i] + surf.metric_unchecked(&mid).norm(d);
        steps.push(d);
    }
    let total = cum[n];
    if !(total > 0.0) {
        return Err(GeoError::Degenerate("seed has zero length".into()));
    }
    let mut out = Vec::with_capacity(k);
    let mut seg = 0;
    for j in 0..k {
        let s = total * j as f64 / k as f64;
        while seg + 1 < n && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let a = pts[seg];
        let p = ChartPoint::new(a.chart, [a.coords[0] + u * steps[seg][0], a.coords[1] + u * steps[seg][1]]);
        out.push(surf.point(surf.canonical(&p)));
    }
    Ok(out)
}

struct Logs {
    fwd: Vec<[f64; 2]>,
    bwd: Vec<[f64; 2]>,
}

fn node_logs(surf: &SurfaceModel, x: &[ChartPoint], prev: Option<&Logs>, opts: &FlowOptions) -> Result<Logs> {
    let k = x.len();
    let mut fwd = Vec::with_capacity(k);
    let mut bwd = Vec::with_capacity(k);
    for i in 0..k {
        let gf = prev.map(|l| l.fwd[i]);
        let gb = prev.map(|l| l.bwd[i]);
        fwd.push(log_map(surf, &x[i], &x[(i + 1) % k], gf, opts)?);
        bwd.push(log_map(surf, &x[i], &x[(i + k - 1) % k], gb, opts)?);
    }
    Ok(Logs { fwd, bwd })
}

/// Lowered `log(x_{i+1}) + log(x_{i-1})` at node `i`; equals `-grad_i E_k / 2k`.
fn node_force(surf: &SurfaceModel, x: &ChartPoint, f: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    surf.metric_unchecked(x).lower([f[0] + b[0], f[1] + b[1]])
}

/// Newton iteration on the critical-point equation of `E_k`.
pub fn refine_closed(surf: &SurfaceModel, seed: &[ChartPoint], k: usize, ropts: &RefineOptions) -> Result<ClosedGeodesic> {
    if k < 3 {
        return Err(GeoError::Precondition("refine_closed needs k >= 3".into()));
    }
    let opts = &ropts.flow;
    let mut x = resample_closed(surf, seed, k)?;
    let mut logs = node_logs(surf, &x, None, opts)?;
    let mut kernel_dim = 0;
    let mut iterations = 0;
    let mut last_kink = f64::INFINITY;
    loop {
        let lens: Vec<f64> = (0..k).map(|i| surf.metric_unchecked(&x[i]).norm(logs.fwd[i])).collect();
        let mean = lens.iter().sum::<f64>() / k as f64;
        let kink = (0..k)
            .map(|i| surf.metric_unchecked(&x[i]).norm([logs.fwd[i][0] + logs.bwd[i][0], logs.fwd[i][1] + logs.bwd[i][1]]) / lens[i])
            .fold(0.0, f64::max);
        if kink <= ropts.kink_tol || (iterations > 3 && kink < 1e-9 && kink >= 0.5 * last_kink) {
            break;
        }
        if iterations >= ropts.max_iter {
            return Err(GeoError::Refinement { residual: kink, reason: format!("no convergence after {iterations} Newton steps") });
        }
        if !kink.is_finite() {
            return Err(GeoError::Refinement { residual: kink, reason: "non-finite residual".into() });
        }
        last_kink = kink;
        iterations += 1;

        let n = 2 * k;
        let mut grad: DVector<f64> = DVector::zeros(n);
        for i in 0..k {
            let f = node_force(surf, &x[i], logs.fwd[i], logs.bwd[i]);
            grad[2 * i] = f[0];
            grad[2 * i + 1] = f[1];
        }
        // Jacobian of the lowered force by central differences; node m only
        // influences nodes m-1, m, m+1.
        let mut jac: DMatrix<f64> = DMatrix::zeros(n, n);
        for m in 0..k {
            for a in 0..2 {
                let d = 1e-6 * mean.max(1e-3);
                let mut cols = [[[0.0; 2]; 3]; 2];
                for (si, sgn) in [1.0, -1.0].into_iter().enumerate() {
                    let mut xm = x[m];
                    xm.coords[a] += sgn * d;
                    let ip = (m + 1) % k;
                    let im = (m + k - 1) % k;
                    let f_m = log_map(surf, &xm, &x[ip], Some(logs.fwd[m]), opts)?;
                    let b_m = log_map(surf, &xm, &x[im], Some(logs.bwd[m]), opts)?;
                    let b_p = log_map(surf, &x[ip], &xm, Some(logs.bwd[ip]), opts)?;
                    let f_q = log_map(surf, &x[im], &xm, Some(logs.fwd[im]), opts)?;
                    cols[si][0] = node_force(surf, &x[im], f_q, logs.bwd[im]);
                    cols[si][1] = node_force(surf, &xm, f_m, b_m);
                    cols[si][2] = node_force(surf, &x[ip], logs.fwd[ip], b_p);
                }
                for (slot, node) in [(m + k - 1) % k, m, (m + 1) % k].into_iter().enumerate() {
                    for c in 0..2 {
                        jac[(2 * node + c, 2 * m + a)] += (cols[0][slot][c] - cols[1][slot][c]) / (2.0 * d);
                    }
                }
            }
        }
        let sym = 0.5 * (&jac + jac.transpose());
        let eig = SymmetricEigen::new(sym);
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cut = ropts.pinv_rel * lmax;
        let mut step: DVector<f64> = DVector::zeros(n);
        kernel_dim = 0;
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() <= cut {
                kernel_dim += 1;
                continue;
            }
            let v = eig.eigenvectors.column(j);
            step -= v * (v.dot(&grad) / lam);
        }
        let biggest = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let damp = if biggest > 0.25 * mean { 0.25 * mean / biggest } else { 1.0 };
        let mut changed = vec![false; k];
        for i in 0..k {
            let mut p = x[i];
            p.coords[0] += damp * step[2 * i];
            p.coords[1] += damp * step[2 * i + 1];
            let q = surf.point(surf.canonical(&p));
            changed[i] = q.chart != p.chart;
            x[i] = if changed[i] { q } else { p };
        }
        let keep = Logs {
            fwd: (0..k).map(|i| if changed[i] { [f64::NAN; 2] } else { logs.fwd[i] }).collect(),
            bwd: (0..k).map(|i| if changed[i] { [f64::NAN; 2] } else { logs.bwd[i] }).collect(),
        };
        logs = node_logs_guessed(surf, &x, &keep, opts)?;
    }
    assemble(surf, x, logs, iterations, kernel_dim, opts)
}

fn node_logs_guessed(surf: &SurfaceModel, x: &[ChartPoint], guess: &Logs, opts: &FlowOptions) -> Result<Logs> {
    let k = x.len();
    let pick = |g: [f64; 2]| if g[0].is_finite() { Some(g) } else { None };
    let mut fwd = Vec::with_capacity(k);
    let mut bwd = Vec::with_capacity(k);
    for i in 0..k {
        fwd.push(log_map(surf, &x[i], &x[(i + 1) % k], pick(guess.fwd[i]), opts)?);
        bwd.push(log_map(surf, &x[i], &x[(i + k - 1) % k], pick(guess.bwd[i]), opts)?);
    }
    Ok(Logs { fwd, bwd })
}

fn assemble(surf: &SurfaceModel, x: Vec<ChartPoint>, logs: Logs, iterations: usize, kernel_dim: usize, opts: &FlowOptions) -> Result<ClosedGeodesic> {
    let k = x.len();
    let mut samples = Vec::new();
    let mut t0 = 0.0;
    let (mut gap, mut kink, mut residual) = (0.0f64, 0.0f64, 0.0f64);
    let mut lens = Vec::with_capacity(k);
    for i in 0..k {
        let g = surf.metric_unchecked(&x[i]);
        let (f, b) = (logs.fwd[i], logs.bwd[i]);
        let l = g.norm(f);
        let sum = g.norm([f[0] + b[0], f[1] + b[1]]);
        kink = kink.max(sum / l);
        residual = residual.max(sum / (l * l));
        // shoot along the averaged direction of the two one-sided velocities
        let dir = [0.5 * (f[0] - b[0]), 0.5 * (f[1] - b[1])];
        let dn = g.norm(dir);
        let w = [dir[0] * l / dn, dir[1] * l / dn];
        let end = exp_map(surf, &x[i], w, opts)?;
        let nxt = surf.to_chart(&x[(i + 1) % k], end.chart, Some(end.coords));
        gap = gap.max((end.coords[0] - nxt.coords[0]).abs().max((end.coords[1] - nxt.coords[1]).abs()));
        let v0 = UnitTangent::from_velocity(surf, x[i], w);
        let m = ((l / 0.01).ceil() as usize).max(4);
        let times: Vec<f64> = (0..m).map(|j| l * j as f64 / m as f64).collect();
        for (t, s) in times.iter().zip(propagate_through(surf, &v0, &times, opts)?) {
            samples.push(Sample { t: t0 + t, state: s });
        }
        t0 += l;
        lens.push(l);
    }
    let length: f64 = lens.iter().sum();
    let energy = k as f64 * lens.iter().map(|l| l * l).sum::<f64>();
    let start = samples[0].state;
    samples.push(Sample { t: length, state: start });
    Ok(ClosedGeodesic {
        length,
        start,
        nodes: x,
        samples,
        index: None,
        nullity: None,
        floquet: None,
        signature: None,
        nondegenerate: None,
        diagnostics: ClosureDiagnostics { closure_gap: gap, kink, residual, energy_gap: (energy.sqrt() - length).abs(), iterations, kernel_dim },
    })
}
