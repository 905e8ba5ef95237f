use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use geoflow_core::closed::{refine_closed, RefineOptions};
use geoflow_core::csf::{run, Fate, RunPolicy, StepPolicy};
use geoflow_core::curve::DiscreteCurve;
use geoflow_core::profile::{build_cap, CurvatureFamily};
use geoflow_core::surface::{build_model_sphere, SurfaceModel};

fn model() -> SurfaceModel {
    let cap = Arc::new(build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap());
    build_model_sphere(cap, 1.0).unwrap()
}

#[test]
fn circle_in_cylinder_loses_area_at_two_pi() {
    let m = model();
    let r0 = m.cap_equators().unwrap().0;
    let h = 0.01;
    let c = DiscreteCurve::coordinate_circle(&m, [r0 + 0.5, 0.3], [0.4, 0.4], h).unwrap();
    let policy = RunPolicy { t_max: 1.0, frame_every: 20, ..RunPolicy::default() };
    let out = run(&m, &c, &policy).unwrap();
    assert!(matches!(out.fate, Fate::ShrankToPoint { .. }), "{:?}", out.fate);
    // rate of area loss between kept frames, until the resolution floor
    let mut worst: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for f in &out.frames {
        let a = f.curve.enclosed_area(&m, 0, f.curve.len() - 1);
        if a < 25.0 * h * h {
            break;
        }
        if let Some((t0, a0)) = prev {
            let rate = (a0 - a) / (f.t - t0);
            worst = worst.max((rate / TAU - 1.0).abs());
        }
        prev = Some((f.t, a));
    }
    println!("area rate worst rel {worst:.3e} steps {}", out.steps);
    assert!(worst < 0.02);
}

#[test]
fn torus_loop_converges_to_inner_equator() {
    let t = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
    // canonical (a u, theta); inner equator is u = pi
    let c = DiscreteCurve::sampled(&t, 0.05, |s| [PI + 0.6 * (TAU * s * 3.0).sin(), TAU * s]).unwrap();
    let policy = RunPolicy { step: StepPolicy::semi_implicit(), t_max: 200.0, ..RunPolicy::default() };
    let out = run(&t, &c, &policy).unwrap();
    println!("torus fate {:?} steps {} len {}", out.fate, out.steps, out.lengths.last().unwrap());
    assert!(matches!(out.fate, Fate::ConvergedToGeodesic { .. }));
    assert!((out.lengths.last().unwrap() - TAU).abs() < 1e-3);
}

#[test]
fn symmetric_near_meridian_converges() {
    let m = model();
    let l = m.sphere_length().unwrap();
    let n = 400;
    // invariant under the half turn theta -> theta + pi
    let c = DiscreteCurve::from_fn(&m, n, 2.0 * l / n as f64, |u| {
        let s = 2.0 * l * u;
        let r = if s <= l { s } else { 2.0 * l - s };
        let bump = 0.15 * (PI * r / l).sin().powi(2) * (TAU * r / l).sin();
        if s <= l {
            [r, 0.3 + bump]
        } else {
            [r, 0.3 + PI + bump]
        }
    })
    .unwrap();
    let policy = RunPolicy { step: StepPolicy::semi_implicit(), t_max: 400.0, ..RunPolicy::default() };
    let out = run(&m, &c, &policy).unwrap();
    let len = *out.lengths.last().unwrap();
    println!("meridian fate {:?} steps {} len {len} expect {}", out.fate, out.steps, 2.0 * l);
    assert!(matches!(out.fate, Fate::ConvergedToGeodesic { .. }));
    let g = refine_closed(&m, &out.final_curve().vertices, 32, &RefineOptions::default()).unwrap();
    println!("refined {}", g.length);
    assert!((g.length - len).abs() < 1e-4);
}
