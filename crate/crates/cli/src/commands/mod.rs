mod cap;
pub mod flow;
pub mod index;
pub mod scan;
mod spectrum;
mod stability;

use std::f64::consts::{PI, TAU};

use geoflow_core::closed::ClosedGeodesic;
use geoflow_core::curve::DiscreteCurve;
use geoflow_core::geodesic::{killing_field, FlowOptions, UnitTangent};
use geoflow_core::spectrum::{geodesic_curve, seed_curve};
use geoflow_core::surface::{ChartPoint, SurfaceModel, BAND};

use crate::config::{CurveSeed, Experiment, ExperimentConfig, GeodesicSpec, Tolerances};
use crate::{CliError, CliResult, Outcome};

pub fn dispatch(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    match &cfg.experiment {
        Experiment::Cap { .. } => cap::run(cfg),
        Experiment::Flow { .. } => flow::run(cfg),
        Experiment::Spectrum { .. } => spectrum::run_spectrum(cfg),
        Experiment::TheoremC { .. } => spectrum::run_theorem_c(cfg),
        Experiment::Index { .. } => index::run(cfg),
        Experiment::Scan { .. } => scan::run(cfg),
        Experiment::Stability { .. } => stability::run(cfg),
    }
}

pub fn surface(cfg: &ExperimentConfig) -> CliResult<SurfaceModel> {
    let spec = cfg.surface.as_ref().ok_or_else(|| CliError::Usage(format!("{} needs a surface", cfg.experiment.name())))?;
    Ok(spec.build()?)
}

fn parallel_orbit(surf: &SurfaceModel, r: f64, tol: &Tolerances) -> CliResult<ClosedGeodesic> {
    let pr = surf.profile().ok_or_else(|| CliError::Usage("parallels are geodesics only on metrics of revolution".into()))?;
    let v = pr.eval(r);
    if v.drho.abs() > tol.parallel_slope {
        return Err(CliError::Usage(format!("parallel r = {r} is not a geodesic (rho' = {:e})", v.drho)));
    }
    let p = surf.point([r, 0.0]);
    let start = UnitTangent::from_velocity(surf, p, killing_field(surf, &p));
    Ok(ClosedGeodesic::from_orbit(surf, start, TAU * v.rho, &FlowOptions::with_tol(tol.integration))?)
}

pub fn geodesic(surf: &SurfaceModel, spec: &GeodesicSpec, tol: &Tolerances) -> CliResult<ClosedGeodesic> {
    match *spec {
        GeodesicSpec::Parallel { r } => parallel_orbit(surf, r, tol),
        GeodesicSpec::CapEquator { which } => {
            let (a, b) = surf.cap_equators().ok_or_else(|| CliError::Usage("cap equators need a model sphere".into()))?;
            match which {
                0 => parallel_orbit(surf, a, tol),
                1 => parallel_orbit(surf, b, tol),
                _ => Err(CliError::Usage(format!("cap equator {which} (expected 0 or 1)"))),
            }
        }
        GeodesicSpec::Meridian { theta } => {
            let l = surf.sphere_length().ok_or_else(|| CliError::Usage("meridians need a sphere-type surface".into()))?;
            if surf.profile().is_none() {
                return Err(CliError::Usage("meridians are geodesics only on metrics of revolution".into()));
            }
            let start = UnitTangent::new(ChartPoint::new(BAND, [0.5 * l, theta]), 0.0);
            Ok(ClosedGeodesic::from_orbit(surf, start, 2.0 * l, &FlowOptions::with_tol(tol.integration))?)
        }
        GeodesicSpec::Orbit { chart, coords, angle, length } => {
            if chart >= surf.chart_count() || !(length > 0.0) {
                return Err(CliError::Usage(format!("orbit chart {chart} / length {length}")));
            }
            let start = UnitTangent::new(ChartPoint::new(chart, coords), angle);
            surf.validate(&start.base)?;
            Ok(ClosedGeodesic::from_orbit(surf, start, length, &FlowOptions::with_tol(tol.integration))?)
        }
    }
}

pub fn curve(surf: &SurfaceModel, seed: &CurveSeed, cfg: &ExperimentConfig) -> CliResult<DiscreteCurve> {
    Ok(match seed {
        CurveSeed::Parallel { r, spacing } => DiscreteCurve::parallel(surf, *r, *spacing)?,
        CurveSeed::Meridian { theta, spacing } => DiscreteCurve::meridian(surf, *theta, *spacing)?,
        CurveSeed::Circle { center, radii, spacing } => DiscreteCurve::coordinate_circle(surf, *center, *radii, *spacing)?,
        CurveSeed::FigureEight { center, size, spacing } => {
            let (c, s) = (*center, *size);
            DiscreteCurve::sampled(surf, *spacing, move |u| {
                let t = 2.0 * PI * u;
                [c[0] + s[0] * t.sin(), c[1] + s[1] * t.sin() * t.cos()]
            })?
        }
        CurveSeed::Family { family, id, spacing } => seed_curve(surf, family, *spacing, cfg.seed, *id)?,
        CurveSeed::Geodesic { geodesic: g, spacing } => geodesic_curve(surf, &geodesic(surf, g, &cfg.tolerances)?, *spacing)?,
    })
}

pub fn geodesic_csv(g: &ClosedGeodesic) -> Vec<u8> {
    use crate::io::fmt_f64;
    let mut out = String::from("t,chart_id,x,y,angle\n");
    for s in &g.samples {
        let b = &s.state.base;
        out.push_str(&format!("{},{},{},{},{}\n", fmt_f64(s.t), b.chart, fmt_f64(b.coords[0]), fmt_f64(b.coords[1]), fmt_f64(s.state.angle)));
    }
    out.into_bytes()
}
