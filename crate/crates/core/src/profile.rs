//! Focusing-cap profiles: rotationally symmetric disks generated from a
//! decreasing curvature function by shooting on its scale.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::ode::{integrate, Tolerance};

fn one() -> f64 {
    1.0
}

/// Parametrized curvature shape `R(c, r) = c * B(r / r0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureFamily {
    /// `B(x) = exp(-s x^2 / (1 - x^2))` on `[0, 1)`, zero beyond.
    Bump {
        #[serde(default = "one")]
        sharpness: f64,
    },
    /// `B(x) = 1`.
    Constant,
    /// `B(x) = 1 - x`.
    Linear,
}

impl Default for CurvatureFamily {
    fn default() -> Self {
        CurvatureFamily::Bump { sharpness: 1.0 }
    }
}

impl CurvatureFamily {
    /// Shape function on the normalized radius.
    pub fn shape(&self, x: f64) -> f64 {
        match *self {
            CurvatureFamily::Bump { sharpness } => {
                let x = x.abs();
                if x >= 1.0 {
                    0.0
                } else {
                    let x2 = x * x;
                    (-sharpness * x2 / (1.0 - x2)).exp()
                }
            }
            CurvatureFamily::Constant => 1.0,
            CurvatureFamily::Linear => 1.0 - x,
        }
    }

    /// Curvature at radius `r` for scale `c` and cap radius `r0`.
    pub fn curvature(&self, c: f64, r: f64, r0: f64) -> f64 {
        c * self.shape(r / r0)
    }

    /// `(R(0), R''(0)/2)` for the normalized family with scale `c`, radius `r0`.
    fn pole_jet(&self, c: f64, r0: f64) -> (f64, f64) {
        match *self {
            CurvatureFamily::Bump { sharpness } => (c, -c * sharpness / (r0 * r0)),
            CurvatureFamily::Constant => (c, 0.0),
            // not even in r; the pole is only C^1 for this family
            CurvatureFamily::Linear => (c, 0.0),
        }
    }
}

/// Build parameters for a cap, as read from surface documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapSpec {
    pub r0: f64,
    #[serde(default)]
    pub curvature_profile: CurvatureFamily,
    #[serde(default = "default_shoot_tol")]
    pub shoot_tolerance: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_k_flat")]
    pub k_flat: usize,
}

fn default_shoot_tol() -> f64 {
    1e-12
}
fn default_grid() -> usize {
    4096
}
fn default_k_flat() -> usize {
    4
}

impl CapSpec {
    pub fn new(r0: f64, family: CurvatureFamily) -> Self {
        Self {
            r0,
            curvature_profile: family,
            shoot_tolerance: default_shoot_tol(),
            grid: default_grid(),
            k_flat: default_k_flat(),
        }
    }

    pub fn build(&self) -> Result<CapProfile> {
        build_cap_with(self)
    }
}

/// Outcome of one profile invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

/// Profile value and derivatives at a radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileValue {
    pub rho: f64,
    pub drho: f64,
    pub ddrho: f64,
    pub curvature: f64,
}

/// A normalized focusing cap on `[0, r0]` with `rho(r0) = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct CapProfile {
    pub r0: f64,
    pub family: CurvatureFamily,
    /// Curvature scale after normalization.
    pub scale: f64,
    pub raw_r0: f64,
    pub raw_scale: f64,
    pub k_flat: usize,
    pub checks: Vec<InvariantCheck>,
    #[serde(skip)]
    step: f64,
    #[serde(skip)]
    nodes: Vec<[f64; 3]>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

const SHOOT_TOL: Tolerance = Tolerance::new(1e-14, 1e-16);
const SLOPE_MARGIN: f64 = 1e-14;
const GRID_TOL: Tolerance = Tolerance::new(1e-14, 1e-16);

fn end_state(family: &CurvatureFamily, c: f64, r0: f64) -> Result<[f64; 3]> {
    integrate(
        |y: &[f64; 3]| [1.0, y[2], -family.curvature(c, y[0], r0) * y[1]],
        [0.0, 0.0, 1.0],
        r0,
        SHOOT_TOL,
        (r0 / 64.0).min(0.05),
    )
}

/// Builds a cap with default grid size and flatness order.
pub fn build_cap(r0: f64, family: CurvatureFamily, shoot_tolerance: f64) -> Result<CapProfile> {
    let mut spec = CapSpec::new(r0, family);
    spec.shoot_tolerance = shoot_tolerance;
    build_cap_with(&spec)
}

pub fn build_cap_with(spec: &CapSpec) -> Result<CapProfile> {
    let r0 = spec.r0;
    let family = &spec.curvature_profile;
    if !r0.is_finite() || r0 < 1e-6 {
        return Err(GeoError::Construction(format!(
            "no scale bracket for cap radius {r0}"
        )));
    }
    if spec.grid < 16 {
        return Err(GeoError::Config("cap grid needs at least 16 nodes".into()));
    }
    if let CurvatureFamily::Bump { sharpness } = family {
        if !(sharpness.is_finite() && *sharpness > 0.0) {
            return Err(GeoError::Config("bump sharpness must be positive".into()));
        }
    }
    // aim slightly above zero so the plateau near r0 survives regridding noise
    let margin = SLOPE_MARGIN.min(0.5 * spec.shoot_tolerance);
    let slope = |c: f64| end_state(family, c, r0).map(|y| y[2] - margin);

    // bracket the first sign change of rho'(r0) in c
    let mut lo = 0.0;
    let mut c = 0.5 / (r0 * r0);
    let mut hi = None;
    while c * r0 * r0 <= 1e4 {
        let s = slope(c)?;
        if s < 0.0 {
            hi = Some(c);
            break;
        }
        lo = c;
        c *= 1.2;
    }
    let mut hi = hi.ok_or_else(|| {
        GeoError::Construction("no scale bracket: rho'(r0) stays positive".into())
    })?;
    // finish on the positive side so rho' stays > 0 on [0, r0)
    let mut s_lo = slope(lo)?;
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let s_mid = slope(mid)?;
        if s_mid >= 0.0 {
            lo = mid;
            s_lo = s_mid;
        } else {
            hi = mid;
        }
    }
    if s_lo + margin >= spec.shoot_tolerance {
        return Err(GeoError::Construction(format!(
            "shooting stalled with rho'(r0) = {:e}", s_lo + margin
        )));
    }
    let mid = lo;
    let raw_scale = mid;
    let peak = end_state(family, raw_scale, r0)?[1];
    if !(peak > 0.0) {
        return Err(GeoError::Construction("profile vanished before r0".into()));
    }

    let r0n = r0 / peak;
    let scale = raw_scale * peak * peak;
    let n = spec.grid;
    let step = r0n / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut y = [0.0, 0.0, 1.0];
    let f = |y: &[f64; 3]| [1.0, y[2], -family.curvature(scale, y[0], r0n) * y[1]];
    for i in 0..n {
        if i > 0 {
            y = integrate(f, y, step, GRID_TOL, step)?;
            y[0] = i as f64 * step;
        }
        let rr = family.curvature(scale, y[0], r0n);
        nodes.push([y[1], y[2], -rr * y[1]]);
    }

    let mut cumulative = vec![0.0; n];
    for i in 1..n {
        let (a, b) = (nodes[i - 1], nodes[i]);
        let h = step;
        cumulative[i] = cumulative[i - 1]
            + h * (0.5 * (a[0] + b[0]) + h * (a[1] - b[1]) / 10.0 + h * h * (a[2] + b[2]) / 120.0);
    }

    let mut cap = CapProfile {
        r0: r0n,
        family: family.clone(),
        scale,
        raw_r0: r0,
        raw_scale,
        k_flat: spec.k_flat,
        checks: Vec::new(),
        step,
        nodes,
        cumulative,
    };
    cap.checks = cap.run_checks();
    if let Some(bad) = cap.checks.iter().find(|c| !c.passed) {
        return Err(GeoError::Construction(format!(
            "cap invariant '{}' failed (value {:e}, tolerance {:e})",
            bad.name, bad.value, bad.tolerance
        )));
    }
    Ok(cap)
}

impl CapProfile {
    pub fn curvature(&self, r: f64) -> f64 {
        self.family.curvature(self.scale, r, self.r0)
    }

    /// Coefficients `(a3, a5)` of `rho = r + a3 r^3 + a5 r^5 + ...` at the pole.
    pub fn pole_series(&self) -> (f64, f64) {
        let (r0, r2) = self.family.pole_jet(self.scale, self.r0);
        let a3 = -r0 / 6.0;
        let a5 = -(r0 * a3 + r2) / 20.0;
        (a3, a5)
    }

    pub fn grid_len(&self) -> usize {
        self.nodes.len()
    }

    /// Quintic Hermite evaluation; `r` is clamped to `[0, r0]`.
    pub fn eval(&self, r: f64) -> ProfileValue {
        let r = r.clamp(0.0, self.r0);
        let n = self.nodes.len();
        let mut i = (r / self.step) as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let h = self.step;
        let t = (r - i as f64 * h) / h;
        let a = self.nodes[i];
        let b = self.nodes[i + 1];
        let (p0, d0, s0) = (a[0], a[1] * h, a[2] * h * h);
        let (p1, d1, s1) = (b[0], b[1] * h, b[2] * h * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let v = (1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5) * p0
            + (t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5) * d0
            + (0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5) * s0
            + (0.5 * t3 - t4 + 0.5 * t5) * s1
            + (-4.0 * t3 + 7.0 * t4 - 3.0 * t5) * d1
            + (10.0 * t3 - 15.0 * t4 + 6.0 * t5) * p1;
        let dv = (-30.0 * t2 + 60.0 * t3 - 30.0 * t4) * p0
            + (1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4) * d0
            + (t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4) * s0
            + (1.5 * t2 - 4.0 * t3 + 2.5 * t4) * s1
            + (-12.0 * t2 + 28.0 * t3 - 15.0 * t4) * d1
            + (30.0 * t2 - 60.0 * t3 + 30.0 * t4) * p1;
        let ddv = (-60.0 * t + 180.0 * t2 - 120.0 * t3) * p0
            + (-36.0 * t + 96.0 * t2 - 60.0 * t3) * d0
            + (1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3) * s0
            + (3.0 * t - 12.0 * t2 + 10.0 * t3) * s1
            + (-24.0 * t + 84.0 * t2 - 60.0 * t3) * d1
            + (60.0 * t - 180.0 * t2 + 120.0 * t3) * p1;
        ProfileValue {
            rho: v,
            drho: dv / h,
            ddrho: ddv / (h * h),
            curvature: self.curvature(r),
        }
    }

    /// `int_0^r rho`, the area primitive divided by `2 pi`.
    pub fn rho_integral(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, self.r0);
        let n = self.nodes.len();
        let mut i = (r / self.step) as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let a = i as f64 * self.step;
        let half = 0.5 * (r - a);
        let mid = a + half;
        let part: f64 = GL5
            .iter()
            .map(|(x, w)| w * self.eval(mid + half * x).rho)
            .sum();
        self.cumulative[i] + half * part
    }

    /// Area of the cap, `2 pi int_0^r0 rho`.
    pub fn area(&self) -> f64 {
        2.0 * PI * self.cumulative[self.nodes.len() - 1]
    }

    fn run_checks(&self) -> Vec<InvariantCheck> {
        let n = self.nodes.len();
        let last = self.nodes[n - 1];
        let mut out = Vec::new();

        let pole = self.nodes[0][0].abs().max((self.nodes[0][1] - 1.0).abs()).max((last[0] - 1.0).abs());
        out.push(InvariantCheck { name: "smooth_pole_and_normalization", passed: pole <= 1e-10, value: pole, tolerance: 1e-10 });

        let min_slope = self.nodes[..n - 1].iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
        out.push(InvariantCheck { name: "rho_dot_positive", passed: min_slope > 0.0, value: min_slope, tolerance: 0.0 });

        // R strictly decreasing wherever it has not underflowed, R(r0) = 0
        let fine = 4 * n;
        let mut worst_rise = f64::NEG_INFINITY;
        let mut prev = self.curvature(0.0);
        for j in 1..=fine {
            let cur = self.curvature(self.r0 * j as f64 / fine as f64);
            if prev > 1e-250 {
                worst_rise = worst_rise.max(cur - prev);
            }
            prev = cur;
        }
        let end_r = self.curvature(self.r0).abs();
        let decreasing = worst_rise < 0.0 && end_r <= 1e-12 * self.scale.abs().max(1.0);
        out.push(InvariantCheck { name: "curvature_decreasing_to_zero", passed: decreasing, value: worst_rise.max(end_r), tolerance: 0.0 });

        out.push(InvariantCheck { name: "equator_geodesic", passed: last[1].abs() <= 1e-8, value: last[1].abs(), tolerance: 1e-8 });

        let flat = self.flat_derivatives().into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
        out.push(InvariantCheck { name: "flat_attachment", passed: flat <= 1e-6, value: flat, tolerance: 1e-6 });
        out
    }

    /// `rho^(k)(r0)` for `k = 1..=k_flat` via the Leibniz rule on `rho'' = -R rho`.
    pub fn flat_derivatives(&self) -> Vec<f64> {
        let k = self.k_flat.max(1);
        let last = self.nodes[self.nodes.len() - 1];
        let delta = self.r0 * 1e-3;
        // backward differences of R at r0
        let samples: Vec<f64> = (0..=k).map(|j| self.curvature(self.r0 - j as f64 * delta)).collect();
        let mut rd = Vec::with_capacity(k);
        for order in 0..k {
            let mut acc = 0.0;
            for j in 0..=order {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom(order, j) * samples[j];
            }
            rd.push(acc / delta.powi(order as i32));
        }
        let mut d = vec![last[0], last[1]];
        while d.len() <= k {
            let m = d.len() - 2;
            let mut acc = 0.0;
            for j in 0..=m {
                acc += binom(m, j) * rd.get(j).copied().unwrap_or(0.0) * d[m - j];
            }
            d.push(-acc);
        }
        d[1..=k].to_vec()
    }

    /// CSV with columns `r, rho, rho_dot, R`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,rho,rho_dot,R\n");
        for (i, v) in self.nodes.iter().enumerate() {
            let r = i as f64 * self.step;
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", r, v[0], v[1], self.curvature(r));
        }
        s
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn cap() -> CapProfile {
        build_cap(2.0, CurvatureFamily::Bump { sharpness: 1.0 }, 1e-12).unwrap()
    }

    #[test]
    fn bump_cap_passes_invariants() {
        let c = cap();
        assert!(c.checks.iter().all(|k| k.passed), "{:?}", c.checks);
        assert_eq!(c.checks.len(), 5);
    }

    #[test]
    fn constant_curvature_rejected() {
        let err = build_cap(2.0, CurvatureFamily::Constant, 1e-12).unwrap_err();
        assert!(matches!(err, GeoError::Construction(ref m) if m.contains("curvature_decreasing")), "{err}");
    }

    #[test]
    fn linear_family_is_not_flat() {
        let err = build_cap(2.0, CurvatureFamily::Linear, 1e-12).unwrap_err();
        assert!(matches!(err, GeoError::Construction(ref m) if m.contains("flat_attachment")), "{err}");
    }

    #[test]
    fn degenerate_radius_rejected() {
        assert!(build_cap(1e-9, CurvatureFamily::default(), 1e-12).is_err());
        assert!(build_cap(0.0, CurvatureFamily::default(), 1e-12).is_err());
    }

    #[test]
    fn hermite_second_derivative_matches_ode() {
        let c = cap();
        for j in 1..40 {
            let r = c.r0 * j as f64 / 40.3;
            let v = c.eval(r);
            assert!((v.ddrho + v.curvature * v.rho).abs() < 1e-8, "{} {}", r, v.ddrho + v.curvature * v.rho);
        }
    }

    #[test]
    fn pole_series_matches_grid() {
        let c = cap();
        let (a3, a5) = c.pole_series();
        let r = 0.02;
        let v = c.eval(r);
        let series = r + a3 * r.powi(3) + a5 * r.powi(5);
        assert!((v.rho - series).abs() < 1e-12);
    }

    #[test]
    fn area_primitive_consistent() {
        let c = cap();
        assert!((2.0 * PI * c.rho_integral(c.r0) - c.area()).abs() < 1e-12);
        // Simpson oracle
        let m = 20000;
        let h = c.r0 / m as f64;
        let mut s = c.eval(0.0).rho + c.eval(c.r0).rho;
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * c.eval(i as f64 * h).rho;
        }
        assert!((s * h / 3.0 - c.rho_integral(c.r0)).abs() < 1e-10);
    }
}
