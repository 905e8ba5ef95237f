use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use geoflow_core::closed::ClosedGeodesic;
use geoflow_core::geodesic::{CapRotor, FlowOptions, UnitTangent};
use geoflow_core::profile::{build_cap, CapProfile, CurvatureFamily};
use geoflow_core::surface::{build_model_sphere, ChartPoint, BAND};
use geoflow_core::variational::{cap_jacobi_transfer_check, index_broken, index_sturm_liouville, monodromy};

fn cap() -> Arc<CapProfile> {
    Arc::new(build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap())
}

/// Clairaut quadrature: Theta = 2 int_{r_min}^{r0} c / (rho sqrt(rho^2 - c^2)) dr.
fn clairaut_theta(cap: &CapProfile, xi: f64) -> f64 {
    let c = xi.cos();
    let (mut lo, mut hi) = (0.0, cap.r0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cap.eval(mid).rho < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rmin = 0.5 * (lo + hi);
    let wmax = (cap.r0 - rmin).sqrt();
    let f = |w: f64| {
        let r = rmin + w * w;
        let rho = cap.eval(r).rho;
        let d = (rho * rho - c * c).max(1e-300);
        2.0 * w * c / (rho * d.sqrt())
    };
    // composite Gauss-Legendre (5 points) on 4000 panels
    let (x, w) = (
        [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664],
        [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189],
    );
    let n = 4000;
    let h = wmax / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let m = (i as f64 + 0.5) * h;
        for k in 0..5 {
            s += 0.5 * h * w[k] * f(m + 0.5 * h * x[k]);
        }
    }
    2.0 * s
}

#[test]
fn rotation_matches_clairaut_quadrature() {
    let cap = cap();
    let rot = CapRotor::new(cap.clone()).unwrap();
    let mut prev = f64::INFINITY;
    for xi in [0.2, 0.5, 0.8, 1.1, 1.4, 1.55] {
        let th = rot.rotation(xi).unwrap().theta;
        let oracle = clairaut_theta(&cap, xi);
        assert!((th - oracle).abs() < 1e-7, "xi {xi}: flow {th} quadrature {oracle}");
        assert!(th < prev && th > PI);
        prev = th;
    }
}

#[test]
fn jacobi_transfer_across_cap() {
    let rot = CapRotor::new(cap()).unwrap();
    for xi in [0.3, 0.9, FRAC_PI_2, 2.0] {
        let c = cap_jacobi_transfer_check(&rot, xi).unwrap();
        println!("xi {xi}: residual {:.3e} theta_dot {:.6} M {:?}", c.residual, c.theta_dot, c.transfer);
        assert!(c.residual < 1e-5);
    }
}

#[test]
fn meridian_is_parabolic() {
    let cap = cap();
    let r0 = cap.r0;
    let m = build_model_sphere(cap, 1.0).unwrap();
    let length = 4.0 * r0 + 2.0;
    let start = UnitTangent::new(ChartPoint::new(BAND, [r0 + 0.5, 0.3]), PI);
    let g = ClosedGeodesic::from_orbit(&m, start, length, &FlowOptions::default()).unwrap();
    let mono = monodromy(&m, &g).unwrap();
    println!("meridian monodromy {:?} gap {:.3e}", mono.m, mono.eigen_gap_from_one);
    assert!(mono.eigen_gap_from_one < 1e-6);
    assert_eq!(mono.kernel_dim, 1);
    let sl = index_sturm_liouville(&m, &g, 256).unwrap();
    let br = index_broken(&m, &g, 32).unwrap();
    println!("meridian SL index {} orth {} | broken {} {}", sl.index, sl.orth_nullity, br.index, br.nullity_constrained);
    assert_eq!(sl.orth_nullity, 1);
    assert_eq!((br.index, br.nullity_constrained), (sl.index, 1));
}

#[test]
#[ignore]
fn meridian_tolerance_sweep() {
    use geoflow_core::ode::Tolerance;
    use geoflow_core::variational::monodromy_with;
    let cap = cap();
    let r0 = cap.r0;
    let m = build_model_sphere(cap, 1.0).unwrap();
    let start = UnitTangent::new(ChartPoint::new(BAND, [r0 + 0.5, 0.3]), PI);
    let g = ClosedGeodesic::from_orbit(&m, start, 4.0 * r0 + 2.0, &FlowOptions::default()).unwrap();
    for (rt, at, h) in [(1e-12, 1e-13, 0.02), (1e-13, 1e-14, 0.02), (1e-14, 1e-15, 0.02), (1e-14, 1e-15, 0.005), (1e-15, 1e-16, 0.005)] {
        let o = FlowOptions { tol: Tolerance::new(rt, at), h_max: h, min_time: 0.0 };
        let mo = monodromy_with(&m, &g, &o).unwrap();
        println!("{rt:e} {h}: M21 {:.3e} M11-1 {:.3e} gap {:.3e}", mo.m[1][0], mo.m[0][0] - 1.0, mo.eigen_gap_from_one);
    }
}
