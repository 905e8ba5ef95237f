use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use geoflow_core::birkhoff::cap_exit_scan;
use geoflow_core::geodesic::CapRotor;
use geoflow_core::variational::cap_jacobi_transfer_check;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::io::csv;
use crate::{to_value, Artifact, CliError, CliResult, Outcome};

pub const THETA_HALF_TOL: f64 = 1e-6;
pub const TRANSFER_TOL: f64 = 1e-5;
pub const EXIT_MATCH_REL: f64 = 0.01;

#[derive(Serialize)]
struct GridRow {
    xi: f64,
    theta: f64,
    t_exit: f64,
    theta_dot: f64,
    transfer_residual: f64,
}

#[derive(Serialize)]
pub struct CapReport {
    pub r0: f64,
    pub scale: f64,
    pub invariants_pass: bool,
    pub theta_half_turn_error: f64,
    pub theta_strictly_decreasing: bool,
    pub max_transfer_residual: f64,
    pub exit_scan: geoflow_core::birkhoff::CapExitScan,
    pub exit_max_matches_grid: bool,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::Cap { cap, grid_points, exit_samples, exit_grid, xi_min } = &cfg.experiment else { unreachable!() };
    if *grid_points < 2 {
        return Err(CliError::Usage("grid_points must be at least 2".into()));
    }
    let profile = Arc::new(cap.build()?);
    let rotor = CapRotor::new(profile.clone())?;
    let xis: Vec<f64> = (1..=*grid_points).map(|k| FRAC_PI_2 * k as f64 / *grid_points as f64).collect();
    let rows: Vec<GridRow> = xis
        .par_iter()
        .map(|&xi| {
            let t = cap_jacobi_transfer_check(&rotor, xi)?;
            Ok(GridRow { xi, theta: t.theta, t_exit: t.t_exit, theta_dot: t.theta_dot, transfer_residual: t.residual })
        })
        .collect::<geoflow_core::Result<_>>()?;
    let half = rotor.rotation(FRAC_PI_2)?;
    let theta_err = (half.theta - PI).abs();
    let decreasing = rows.windows(2).all(|w| w[1].theta < w[0].theta);
    let max_res = rows.iter().map(|r| r.transfer_residual).fold(0.0, f64::max);
    let exit = cap_exit_scan(&rotor, *exit_samples, *exit_grid, *xi_min, cfg.seed)?;
    let exit_ok = exit.all_exit && (exit.max_exit - exit.grid_max_exit).abs() <= EXIT_MATCH_REL * exit.grid_max_exit;
    let invariants_pass = profile.checks.iter().all(|c| c.passed);
    let report = CapReport {
        r0: profile.r0,
        scale: profile.scale,
        invariants_pass,
        theta_half_turn_error: theta_err,
        theta_strictly_decreasing: decreasing,
        max_transfer_residual: max_res,
        exit_scan: exit,
        exit_max_matches_grid: exit_ok,
    };
    let passed = invariants_pass && theta_err <= THETA_HALF_TOL && decreasing && max_res <= TRANSFER_TOL && exit_ok;
    let mut result = to_value(&report);
    result["invariants"] = to_value(&profile.checks);
    result["grid"] = to_value(&rows);
    let table = csv(
        &["xi", "theta", "t_exit", "theta_dot", "transfer_residual"],
        rows.iter().map(|r| vec![r.xi, r.theta, r.t_exit, r.theta_dot, r.transfer_residual]),
    );
    Ok(Outcome {
        passed,
        verdict: if passed { "all cap checks pass".into() } else { "cap check failed".into() },
        result,
        artifacts: vec![Artifact::new("profile.csv", profile.to_csv().into_bytes()), Artifact::new("rotation.csv", table)],
    })
}
