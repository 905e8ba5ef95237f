use std::f64::consts::TAU;
use std::sync::Arc;

use geoflow_core::curve::DiscreteCurve;
use geoflow_core::knots::HomotopyLabel;
use geoflow_core::profile::{build_cap, CurvatureFamily};
use geoflow_core::spectrum::{spectrum, Family, SeedFamily, SignatureFilter, SpectrumPolicy};
use geoflow_core::surface::{build_model_sphere, SurfaceModel};

fn model() -> SurfaceModel {
    let cap = Arc::new(build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap());
    build_model_sphere(cap, 1.0).unwrap()
}

fn cap_boundaries(m: &SurfaceModel) -> Vec<DiscreteCurve> {
    let (a, b) = m.cap_equators().unwrap();
    vec![DiscreteCurve::parallel(m, a, 0.05).unwrap(), DiscreteCurve::parallel(m, b, 0.05).unwrap()]
}

#[test]
fn meridians_form_one_circle_family() {
    let m = model();
    let refs = cap_boundaries(&m);
    let filter = SignatureFilter { self_x: Some(0), ref_x: Some(vec![2, 2]), htpy: Some(HomotopyLabel::Trivial), primitive: Some(true) };
    let policy = SpectrumPolicy { seeds: 8, ..SpectrumPolicy::default() };
    let fam = SeedFamily::HalfTurnMeridian { amplitude: 0.1, modes: 3 };
    let rep = spectrum(&m, &refs, &filter, &[fam], &policy).unwrap();
    for s in &rep.seeds {
        println!("{s:?}");
    }
    for v in &rep.lengths {
        println!("{v:?}");
    }
    let l = m.sphere_length().unwrap();
    assert_eq!(rep.lengths.len(), 1);
    assert!((rep.lengths[0].length - 2.0 * l).abs() < 1e-8);
    assert_eq!(rep.lengths[0].family, Family::Circle);
}

#[test]
fn torus_equators_in_axis_class() {
    let t = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
    let filter = SignatureFilter { self_x: Some(0), htpy: Some(HomotopyLabel::Homology { m: 1, n: 0 }), ..Default::default() };
    let policy = SpectrumPolicy { seeds: 16, ..SpectrumPolicy::default() };
    let fams = [
        SeedFamily::Homology { class: [1, 0], amplitude: 0.3, modes: 3, symmetry: 0 },
        SeedFamily::Homology { class: [1, 0], amplitude: 0.3, modes: 2, symmetry: 3 },
    ];
    let rep = spectrum(&t, &[], &filter, &fams, &policy).unwrap();
    for s in &rep.seeds {
        println!("{s:?}");
    }
    for v in &rep.lengths {
        println!("{v:?}");
    }
    assert_eq!(rep.lengths.len(), 2);
    assert!((rep.lengths[0].length - TAU).abs() < 1e-8);
    assert!((rep.lengths[1].length - 3.0 * TAU).abs() < 1e-8);
}

#[test]
fn parity_violating_filter_is_empty() {
    let m = model();
    let refs = cap_boundaries(&m);
    let filter = SignatureFilter { ref_x: Some(vec![1, 0]), ..Default::default() };
    let rep = spectrum(&m, &refs, &filter, &[SeedFamily::HalfTurnMeridian { amplitude: 0.1, modes: 2 }], &SpectrumPolicy::default()).unwrap();
    assert!(rep.parity_violation && rep.entries.is_empty() && rep.seeds.is_empty());
}
