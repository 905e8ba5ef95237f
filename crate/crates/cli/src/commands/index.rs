use geoflow_core::variational::{analyze, IndexReport};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::{to_value, Artifact, CliResult, Outcome};

/// Identities between the two index computations that must hold exactly.
#[derive(Debug, Clone, Serialize)]
pub struct IndexRelations {
    pub methods_agree: bool,
    /// `nul(gamma) = nul(y) + 1` with `y` the orthogonal part.
    pub nullity_split: bool,
    /// Only meaningful on hyperbolic orbits.
    pub parity_law: Option<bool>,
}

pub fn relations(rep: &IndexReport) -> IndexRelations {
    IndexRelations {
        methods_agree: rep.method_agreement,
        nullity_split: rep.nullity == rep.orth_nullity + 1,
        parity_law: rep.parity_law,
    }
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::Index { geodesic, sl_nodes, broken_ks, expect_index, expect_nullity } = &cfg.experiment else { unreachable!() };
    let surf = super::surface(cfg)?;
    let mut g = super::geodesic(&surf, geodesic, &cfg.tolerances)?;
    let rep = analyze(&surf, &mut g, *sl_nodes, broken_ks)?;
    let rel = relations(&rep);
    let expected = expect_index.map_or(true, |i| i == rep.index) && expect_nullity.map_or(true, |n| n == rep.nullity);
    let passed = rel.methods_agree && rel.nullity_split && rel.parity_law != Some(false) && expected;
    let mut result = to_value(&rep);
    result["relations"] = to_value(&rel);
    result["length"] = to_value(&g.length);
    result["expectations_met"] = to_value(&expected);
    Ok(Outcome {
        passed,
        verdict: format!("index {} nullity {}", rep.index, rep.nullity),
        result,
        artifacts: vec![Artifact::new("geodesic.csv", super::geodesic_csv(&g))],
    })
}
