use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::Arc;

use geoflow_core::birkhoff::{annuli_of, boundary_budget, cap_exit_scan, polygon_audit, scan, Certificate, Sampling, ScanOptions, Side};
use geoflow_core::closed::ClosedGeodesic;
use geoflow_core::geodesic::{CapRotor, FlowOptions, UnitTangent};
use geoflow_core::profile::{build_cap, CurvatureFamily};
use geoflow_core::surface::{build_model_sphere, ChartPoint, SurfaceModel, BAND};

fn model() -> SurfaceModel {
    let cap = Arc::new(build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap());
    build_model_sphere(cap, 1.0).unwrap()
}

fn parallel(m: &SurfaceModel, r: f64) -> ClosedGeodesic {
    let rho = m.base_profile().unwrap().eval(r).rho;
    ClosedGeodesic::from_orbit(m, UnitTangent::new(ChartPoint::new(BAND, [r, 0.0]), FRAC_PI_2), TAU * rho, &FlowOptions::default()).unwrap()
}

fn meridian(m: &SurfaceModel) -> ClosedGeodesic {
    let l = m.sphere_length().unwrap();
    ClosedGeodesic::from_orbit(m, UnitTangent::new(ChartPoint::new(BAND, [0.5 * l, 0.0]), 0.0), 2.0 * l, &FlowOptions::default()).unwrap()
}

fn equators(m: &SurfaceModel) -> Vec<ClosedGeodesic> {
    let (a, b) = m.cap_equators().unwrap();
    vec![parallel(m, a), parallel(m, b)]
}

#[test]
fn equators_and_meridian_certify() {
    let m = model();
    let mut gs = equators(&m);
    gs.push(meridian(&m));
    let annuli = annuli_of(&gs);
    assert_eq!(annuli.len(), 6);
    let t_cap = 10.0 * m.sphere_length().unwrap();
    let rep = scan(&m, &gs, &annuli, &Sampling { count: 10_000, seed: 7 }, &ScanOptions { t_cap, ..Default::default() }).unwrap();
    println!("max {} mean {} grazing {} rescued {}", rep.max_hit_time, rep.mean_hit_time, rep.grazing_hits, rep.rescued);
    assert!(matches!(rep.certificate, Certificate::CertifiedNontrapping { .. }), "{:?}", rep.certificate);
    assert_eq!(rep.hits, 10_000);
    assert_eq!(rep.histogram.counts.iter().sum::<usize>(), 10_000);
    assert_eq!(rep.shares.iter().map(|s| s.hits).sum::<usize>(), 10_000);
    assert!(rep.max_hit_time < t_cap);
}

#[test]
fn equators_alone_trap_the_cylinder_band() {
    let m = model();
    let gs = equators(&m);
    let annuli = annuli_of(&gs);
    let t_cap = 10.0 * m.sphere_length().unwrap();
    let rep = scan(&m, &gs, &annuli, &Sampling { count: 4000, seed: 3 }, &ScanOptions { t_cap, ..Default::default() }).unwrap();
    let Certificate::Refuted { witness } = &rep.certificate else { panic!("{:?}", rep.certificate) };
    let (a, b) = m.cap_equators().unwrap();
    let r = m.radius_of(&witness.state.base);
    assert!(r > a && r < b, "witness at r = {r}");
    // nearly tangent to the parallels
    assert!(witness.state.angle.sin().abs() > 0.9);
}

#[test]
fn annulus_parametrization_round_trips() {
    let m = model();
    let gs = vec![meridian(&m)];
    for a in annuli_of(&gs) {
        for &(t, xi) in &[(0.3, 0.2), (2.0, FRAC_PI_2), (5.5, 3.0), (9.0, 1.0)] {
            let v = a.at(&m, t, xi).unwrap();
            let (t2, xi2) = a.param_of(&m, &v, 1e-6).unwrap().unwrap();
            assert!((t2 - t).abs() < 1e-7 && (xi2 - xi).abs() < 1e-9, "{:?} {t} {xi} -> {t2} {xi2}", a.side);
            let other = annuli_of(&gs).into_iter().find(|o| o.side != a.side).unwrap();
            assert!(!other.contains(&m, &v, 1e-6).unwrap());
        }
    }
    assert_eq!(annuli_of(&gs)[0].side, Side::Plus);
}

#[test]
fn reversed_scan_mirrors_forward_scan() {
    let m = model();
    let mut gs = equators(&m);
    gs.push(meridian(&m));
    let annuli = annuli_of(&gs);
    let t_cap = 10.0 * m.sphere_length().unwrap();
    let s = Sampling { count: 1000, seed: 11 };
    let f = scan(&m, &gs, &annuli, &s, &ScanOptions { t_cap, ..Default::default() }).unwrap();
    let r = scan(&m, &gs, &annuli, &s, &ScanOptions { t_cap, reversed: true, ..Default::default() }).unwrap();
    assert_eq!(f.hits, r.hits);
    // the metric is reflection symmetric, so the hit-time law is symmetric in distribution
    assert!((f.mean_hit_time - r.mean_hit_time).abs() < 0.1 * f.mean_hit_time);
}

#[test]
fn cap_exit_maximum_matches_grid() {
    let m = model();
    let (cap, _) = m.model_sphere_parts().unwrap();
    let rotor = CapRotor::new(cap.clone()).unwrap();
    let ex = cap_exit_scan(&rotor, 10_000, 2000, PI / 102.0, 5).unwrap();
    assert!(ex.all_exit);
    assert!((ex.max_exit - ex.grid_max_exit).abs() <= 0.01 * ex.grid_max_exit, "{} vs {}", ex.max_exit, ex.grid_max_exit);
    assert!(ex.argmax_xi > 0.0 && ex.argmax_xi < PI);
}

#[test]
fn boundary_budget_counts_four_per_geodesic() {
    let m = model();
    let b = boundary_budget(&m, 3);
    assert_eq!(b.components, 12);
    assert!(!b.curvature_term_vacuous);
    assert!((b.genus_term - 8.0).abs() < 1e-15);
    let flat = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
    let bf = boundary_budget(&flat, 2);
    assert!(bf.curvature_term_vacuous && bf.within_bound);
}

fn meridian_at(m: &SurfaceModel, theta: f64) -> ClosedGeodesic {
    let l = m.sphere_length().unwrap();
    ClosedGeodesic::from_orbit(m, UnitTangent::new(ChartPoint::new(BAND, [0.5 * l, theta]), 0.0), 2.0 * l, &FlowOptions::default()).unwrap()
}

#[test]
fn model_sphere_arrangement_is_convex() {
    let m = model();
    let mut gs = equators(&m);
    gs.push(meridian(&m));
    let audit = polygon_audit(&m, &gs).unwrap();
    assert_eq!((audit.vertices, audit.edges), (4, 8));
    assert_eq!(audit.faces.len(), 6);
    assert!(audit.connected && audit.euler_characteristic == 2);
    assert!(audit.all_convex);
    let total: f64 = audit.faces.iter().map(|f| f.area.unwrap()).sum();
    assert!((total - m.area()).abs() < 1e-6 * m.area(), "{total} vs {}", m.area());
    let mut corners: Vec<usize> = audit.faces.iter().map(|f| f.angles.len()).collect();
    corners.sort_unstable();
    // four half caps and two half cylinders
    assert_eq!(corners, [2, 2, 2, 2, 4, 4]);
    for f in &audit.faces {
        assert!(f.angles.iter().all(|a| (a - FRAC_PI_2).abs() < 1e-8), "{:?}", f.angles);
        assert!(f.gauss_bonnet_residual.unwrap() < 1e-4, "{f:?}");
    }
}

#[test]
fn lone_circle_faces_have_no_corner() {
    let m = model();
    let gs = vec![equators(&m).remove(0)];
    let audit = polygon_audit(&m, &gs).unwrap();
    assert_eq!(audit.faces.len(), 2);
    for f in &audit.faces {
        assert!(!f.has_corner && !f.convex);
        assert_eq!(f.simply_connected, Some(true));
        assert!(f.gauss_bonnet_residual.unwrap() < 1e-4, "{f:?}");
    }
}

#[test]
fn round_sphere_lunes() {
    let s = SurfaceModel::round_sphere(1.0).unwrap();
    let equator = ClosedGeodesic::from_orbit(&s, UnitTangent::new(ChartPoint::new(BAND, [FRAC_PI_2, 0.0]), FRAC_PI_2), TAU, &FlowOptions::default()).unwrap();
    let tilted = ClosedGeodesic::from_orbit(&s, UnitTangent::new(ChartPoint::new(BAND, [FRAC_PI_2, 0.5]), PI / 4.0), TAU, &FlowOptions::default()).unwrap();
    let audit = polygon_audit(&s, &[equator, tilted]).unwrap();
    assert_eq!(audit.faces.len(), 4);
    for f in &audit.faces {
        // a lune of angle a has area and total curvature 2a
        let a = f.angles[0];
        assert!((f.angles[1] - a).abs() < 1e-8);
        assert!((f.area.unwrap() - 2.0 * a).abs() < 1e-6, "{f:?}");
        assert!((f.curvature_integral.unwrap() - 2.0 * a).abs() < 1e-6);
        assert!(f.convex && f.gauss_bonnet_residual.unwrap() < 1e-6);
        assert_eq!(f.below_area_bound, Some(2.0 * a < TAU));
    }
}

#[test]
fn torus_square_from_two_circles() {
    let t = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
    let outer = ClosedGeodesic::from_orbit(&t, UnitTangent::new(ChartPoint::new(0, [0.0, 0.0]), FRAC_PI_2), TAU * 3.0, &FlowOptions::default()).unwrap();
    let meridian = ClosedGeodesic::from_orbit(&t, UnitTangent::new(ChartPoint::new(0, [0.3, 1.0]), 0.0), TAU, &FlowOptions::default()).unwrap();
    let audit = polygon_audit(&t, &[outer, meridian]).unwrap();
    assert_eq!((audit.vertices, audit.edges, audit.faces.len()), (1, 2, 1));
    let f = &audit.faces[0];
    assert_eq!(f.angles.len(), 4);
    assert!(f.convex && f.simply_connected == Some(true));
    assert!(f.curvature_integral.unwrap().abs() < 1e-6);
    assert!((f.area.unwrap() - t.area()).abs() < 1e-6 * t.area(), "{f:?}");
}
