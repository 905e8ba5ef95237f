use std::f64::consts::{FRAC_PI_2, PI, TAU};

use geoflow_core::csf::solve_cyclic_tridiagonal;
use geoflow_core::curve::DiscreteCurve;
use geoflow_core::knots::{self_intersections, signature, HomotopyLabel};
use geoflow_core::surface::{wrap, ChartPoint, Metric, SurfaceModel};
use geoflow_core::variational::monodromy_from_matrix;
use proptest::prelude::*;

fn metric() -> impl Strategy<Value = Metric> {
    (0.2f64..5.0, -0.9f64..0.9, 0.2f64..5.0).prop_map(|(a, c, b)| Metric { g11: a, g12: c * (a * b).sqrt(), g22: b })
}

fn vector() -> impl Strategy<Value = [f64; 2]> {
    [-3.0f64..3.0, -3.0f64..3.0]
}

proptest! {
    #[test]
    fn wrap_is_a_centred_representative(d in -100.0f64..100.0, p in 0.1f64..10.0) {
        let w = wrap(d, p);
        prop_assert!(w.abs() <= 0.5 * p + 1e-12);
        let k = (d - w) / p;
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_an_isometry(g in metric(), a in vector(), b in vector()) {
        let ja = g.rotate(a);
        let scale = 1.0 + g.dot(a, a);
        prop_assert!((g.dot(ja, ja) - g.dot(a, a)).abs() < 1e-9 * scale);
        prop_assert!(g.dot(ja, a).abs() < 1e-9 * scale);
        prop_assert!((g.cross(a, b) + g.cross(b, a)).abs() < 1e-9 * (1.0 + g.norm(a) * g.norm(b)));
        let jja = g.rotate(ja);
        prop_assert!((jja[0] + a[0]).abs() < 1e-9 * scale && (jja[1] + a[1]).abs() < 1e-9 * scale);
    }

    #[test]
    fn cyclic_solver_residual(rows in prop::collection::vec((-0.5f64..0.5, 2.0f64..3.0, -0.5f64..0.5, -1.0f64..1.0), 3..40)) {
        let n = rows.len();
        let lo: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let di: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let up: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let x = solve_cyclic_tridiagonal(&lo, &di, &up, &rhs);
        for i in 0..n {
            let r = lo[i] * x[(i + n - 1) % n] + di[i] * x[i] + up[i] * x[(i + 1) % n] - rhs[i];
            prop_assert!(r.abs() < 1e-11, "row {} residual {}", i, r);
        }
    }

    #[test]
    fn symplectic_monodromy_classification(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        prop_assume!(a.abs() > 0.1);
        let d = (1.0 + b * c) / a;
        let m = monodromy_from_matrix([[a, b], [c, d]]);
        prop_assert!((m.det - 1.0).abs() < 1e-9);
        prop_assert!(m.kernel_dim <= 2);
        if (m.trace - 2.0).abs() > 1e-3 {
            prop_assert_eq!(m.kernel_dim, 0);
        }
    }

    #[test]
    fn sphere_charts_round_trip(r in 0.01f64..3.13, th in 0.0f64..TAU) {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        let p = s.point([r, th]);
        let loc = s.locator(&p);
        for chart in 0..s.chart_count() {
            let q = s.to_chart(&p, chart, None);
            if s.validate(&q).is_err() {
                continue;
            }
            let back = s.to_chart(&q, p.chart, Some(p.coords));
            let l2 = s.locator(&back);
            prop_assert!((0..3).all(|k| (l2[k] - loc[k]).abs() < 1e-9), "{:?} -> {:?} -> {:?}", p, q, back);
        }
    }

    #[test]
    fn embedded_ellipses_have_trivial_signature(cx in 1.0f64..5.0, cy in 1.0f64..5.0, a in 0.3f64..0.9, b in 0.3f64..0.9, phase in 0.0f64..TAU) {
        let t = SurfaceModel::flat_torus([TAU, TAU]).unwrap();
        let c = DiscreteCurve::sampled(&t, 0.04, move |u| [cx + a * (TAU * u + phase).cos(), cy + b * (TAU * u + phase).sin()]).unwrap();
        let sig = signature(&t, &c, &[]).unwrap();
        prop_assert_eq!(sig.self_x, 0);
        prop_assert_eq!(sig.htpy, HomotopyLabel::Trivial);
        prop_assert!(sig.primitive);
    }

    #[test]
    fn lissajous_figure_eight_crosses_once(cx in 1.5f64..4.5, cy in 1.5f64..4.5, a in 0.5f64..1.2, b in 0.4f64..1.0) {
        let t = SurfaceModel::flat_torus([TAU, TAU]).unwrap();
        let c = DiscreteCurve::sampled(&t, 0.03, move |u| {
            let s = TAU * u;
            [cx + a * s.sin(), cy + b * s.sin() * s.cos()]
        })
        .unwrap();
        prop_assert_eq!(self_intersections(&t, &c).unwrap().count, 1);
    }
}

#[test]
fn great_circle_through_poles_is_one_loop() {
    let s = SurfaceModel::round_sphere(1.0).unwrap();
    let m = DiscreteCurve::meridian(&s, 0.3, 0.02).unwrap();
    assert_eq!(self_intersections(&s, &m).unwrap().count, 0);
    let p = ChartPoint::new(0, [FRAC_PI_2, PI]);
    assert!(s.validate(&p).is_ok());
}
