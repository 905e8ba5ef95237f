//! Embedded Dormand–Prince 5(4) stepping for small autonomous systems.
//!
//! The geodesic, Jacobi and profile equations are all smooth, low-dimensional
//! and non-stiff, so a single explicit pair with local extrapolation is used
//! everywhere. Callers that need chart switching or event location drive the
//! stepper themselves through [`dp45_step`] and [`StepControl`].

use crate::error::{GeoError, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Relative/absolute error tolerance pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub const fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-12, 1e-12)
    }
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (coef, k) in terms {
        let c = h * coef;
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

/// One Dormand–Prince step of size `h` from `y`. Returns the fifth-order
/// solution and the embedded error estimate.
pub fn dp45_step<const N: usize, F>(f: &mut F, y: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&axpy(y, h, &[(A21, &k1)]));
    let k3 = f(&axpy(y, h, &[(A31, &k1), (A32, &k2)]));
    let k4 = f(&axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&axpy(
        y,
        h,
        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    ));
    let y5 = axpy(
        y,
        h,
        &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    let k7 = f(&y5);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

/// Scaled max-norm of an error estimate; values <= 1 are acceptable.
pub fn error_norm<const N: usize>(y0: &[f64; N], y1: &[f64; N], err: &[f64; N], tol: Tolerance) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..N {
        let scale = tol.atol + tol.rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i].abs() / scale;
        if !r.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(r);
    }
    if y1.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    worst
}

/// Step-size controller state shared by the drivers in this crate.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub h: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub tol: Tolerance,
}

impl StepControl {
    pub fn new(tol: Tolerance, h_max: f64) -> Self {
        Self {
            h: (h_max * 0.1).min(1e-2).max(1e-6),
            h_min: 1e-14,
            h_max,
            tol,
        }
    }

    /// Updates `h` from an error norm; returns whether the step is accepted.
    pub fn update(&mut self, err: f64) -> bool {
        let accept = err <= 1.0;
        let factor = if err == 0.0 {
            5.0
        } else if err.is_finite() {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.1
        };
        self.h = (self.h * factor).min(self.h_max);
        accept
    }
}

/// Integrates an autonomous system over a span of length `span` (which may be
/// negative for backward integration) and returns the final state.
pub fn integrate<const N: usize, F>(mut f: F, y0: [f64; N], span: f64, tol: Tolerance, h_max: f64) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let mut out = y0;
    integrate_with(&mut f, &mut out, span, tol, h_max, |_, _| {})?;
    Ok(out)
}

/// Like [`integrate`], calling `observe(t, y)` after every accepted step.
pub fn integrate_with<const N: usize, F, O>(
    f: &mut F,
    y: &mut [f64; N],
    span: f64,
    tol: Tolerance,
    h_max: f64,
    mut observe: O,
) -> Result<()>
where
    F: FnMut(&[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    if span == 0.0 {
        return Ok(());
    }
    let dir = span.signum();
    let total = span.abs();
    let mut ctl = StepControl::new(tol, h_max);
    let mut t = 0.0;
    let mut guard = 0usize;
    while t < total {
        guard += 1;
        if guard > 50_000_000 {
            return Err(GeoError::Integrator("step budget exhausted".into()));
        }
        let h = ctl.h.min(total - t);
        let (y1, err) = dp45_step(f, y, dir * h);
        let e = error_norm(y, &y1, &err, tol);
        let last = h >= total - t;
        if ctl.update(e) {
            *y = y1;
            t = if last { total } else { t + h };
            observe(dir * t, y);
        } else if ctl.h < ctl.h_min {
            return Err(GeoError::Integrator(format!("step size underflow at t = {t}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let y = integrate(
            |y: &[f64; 2]| [y[1], -y[0]],
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            Tolerance::new(1e-12, 1e-12),
            0.5,
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let f = |y: &[f64; 2]| [y[1], -y[0].sin()];
        let fwd = integrate(f, [0.3, 0.7], 5.0, Tolerance::default(), 0.25).unwrap();
        let back = integrate(f, fwd, -5.0, Tolerance::default(), 0.25).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-10 && (back[1] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn exponential_growth_matches_closed_form() {
        let y = integrate(|y: &[f64; 1]| [y[0]], [1.0], 3.0, Tolerance::new(1e-13, 1e-13), 1.0).unwrap();
        assert!((y[0] - 3f64.exp()).abs() / 3f64.exp() < 1e-11);
    }
}
