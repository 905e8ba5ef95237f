//! Experiment configuration documents.

use std::f64::consts::PI;

use geoflow_core::csf::RunPolicy;
use geoflow_core::profile::CapSpec;
use geoflow_core::spectrum::{SeedFamily, SignatureFilter, SpectrumPolicy};
use geoflow_core::surface::{ScalarField, SurfaceSpec};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceSpec>,
    pub experiment: Experiment,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Local error target of geodesic integration.
    pub integration: f64,
    /// Largest `|rho'|` accepted on a parallel named as a geodesic.
    pub parallel_slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { integration: 1e-9, parallel_slope: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `report.json` plus data tables.
    #[default]
    Json,
    /// Also a flat `summary.csv` of the report's scalar fields.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into(), format: Format::Json }
    }
}

/// A closed geodesic given in closed form or by initial vector and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeodesicSpec {
    /// A parallel `{r = const}` with `rho'(r) = 0`.
    Parallel { r: f64 },
    /// Boundary equator `0` or `1` of a model sphere's caps.
    CapEquator { which: usize },
    /// Pole-to-pole meridian of a sphere-type surface.
    Meridian { theta: f64 },
    Orbit { chart: usize, coords: [f64; 2], angle: f64, length: f64 },
}

/// An initial loop for the flow or a reference curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSeed {
    Parallel { r: f64, spacing: f64 },
    Meridian { theta: f64, spacing: f64 },
    /// Coordinate ellipse in canonical coordinates.
    Circle { center: [f64; 2], radii: [f64; 2], spacing: f64 },
    /// Lemniscate `(a sin t, b sin t cos t)` around `center`: one self-crossing.
    FigureEight { center: [f64; 2], size: [f64; 2], spacing: f64 },
    /// Member `id` of a random family, drawn from the experiment seed.
    Family { family: SeedFamily, id: usize, spacing: f64 },
    /// The image of a geodesic, sampled at `spacing`.
    Geodesic { geodesic: GeodesicSpec, spacing: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedVerdict {
    Certified,
    Refuted,
}

fn d_grid() -> usize {
    50
}
fn d_exit_samples() -> usize {
    10_000
}
fn d_exit_grid() -> usize {
    400
}
fn d_xi_min() -> f64 {
    PI / 102.0
}
fn d_sl_nodes() -> usize {
    256
}
fn d_ks() -> Vec<usize> {
    vec![16, 32]
}
fn d_scan_samples() -> usize {
    10_000
}
fn d_true() -> bool {
    true
}
fn d_witnesses() -> usize {
    32
}
fn d_expect() -> ExpectedVerdict {
    ExpectedVerdict::Certified
}
fn d_refine_nodes() -> usize {
    64
}
fn d_meridian_families() -> Vec<SeedFamily> {
    vec![SeedFamily::HalfTurnMeridian { amplitude: 0.1, modes: 3 }]
}
fn d_theorem_c_policy() -> SpectrumPolicy {
    SpectrumPolicy { seeds: 8, ..SpectrumPolicy::default() }
}
fn d_stability_policy() -> SpectrumPolicy {
    SpectrumPolicy { seeds: 8, ..SpectrumPolicy::default() }
}
fn d_length_window() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Build a focusing cap and check its rotation function.
    Cap {
        cap: CapSpec,
        #[serde(default = "d_grid")]
        grid_points: usize,
        #[serde(default = "d_exit_samples")]
        exit_samples: usize,
        #[serde(default = "d_exit_grid")]
        exit_grid: usize,
        #[serde(default = "d_xi_min")]
        xi_min: f64,
    },
    /// Curve shortening flow of one loop.
    Flow {
        curve: CurveSeed,
        #[serde(default)]
        policy: RunPolicy,
        #[serde(default)]
        references: Vec<CurveSeed>,
    },
    Spectrum {
        #[serde(default)]
        references: Vec<CurveSeed>,
        #[serde(default)]
        filter: SignatureFilter,
        families: Vec<SeedFamily>,
        #[serde(default)]
        policy: SpectrumPolicy,
    },
    /// Morse index, nullity and monodromy of one closed geodesic.
    Index {
        geodesic: GeodesicSpec,
        #[serde(default = "d_sl_nodes")]
        sl_nodes: usize,
        #[serde(default = "d_ks")]
        broken_ks: Vec<usize>,
        #[serde(default)]
        expect_index: Option<usize>,
        #[serde(default)]
        expect_nullity: Option<usize>,
    },
    /// Hitting-time scan against Birkhoff annuli, with face audit.
    Scan {
        geodesics: Vec<GeodesicSpec>,
        #[serde(default = "d_scan_samples")]
        samples: usize,
        /// Defaults to ten times the diameter.
        #[serde(default)]
        t_cap: Option<f64>,
        #[serde(default)]
        reversed: bool,
        #[serde(default = "d_expect")]
        expect: ExpectedVerdict,
        #[serde(default = "d_true")]
        audit: bool,
        #[serde(default = "d_witnesses")]
        max_witnesses: usize,
    },
    /// Persistence of a nondegenerate closed geodesic under `h = e^{2f} g`.
    Stability {
        geodesic: GeodesicSpec,
        perturbation: ScalarField,
        epsilon: f64,
        /// Extra class seeds for the search on `h`.
        #[serde(default)]
        families: Vec<SeedFamily>,
        #[serde(default = "d_stability_policy")]
        policy: SpectrumPolicy,
        #[serde(default = "d_refine_nodes")]
        refine_nodes: usize,
    },
    /// Simple closed geodesic meeting each cap equator exactly twice.
    TheoremC {
        #[serde(default)]
        perturbation: Option<ScalarField>,
        #[serde(default = "d_meridian_families")]
        families: Vec<SeedFamily>,
        #[serde(default = "d_theorem_c_policy")]
        policy: SpectrumPolicy,
        /// Explicit seeds; checked against the signature before flowing.
        #[serde(default)]
        extra_seeds: Vec<CurveSeed>,
        /// Allowed relative deviation from the unperturbed meridian length.
        #[serde(default = "d_length_window")]
        length_window: f64,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Cap { .. } => "cap",
            Experiment::Flow { .. } => "flow",
            Experiment::Spectrum { .. } => "spectrum",
            Experiment::Index { .. } => "index",
            Experiment::Scan { .. } => "scan",
            Experiment::Stability { .. } => "stability",
            Experiment::TheoremC { .. } => "theorem_c",
        }
    }
}

impl ExperimentConfig {
    /// Parses a document, rejecting unknown keys and wrong schema versions.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::io::to_json(self).expect("config serializes")
    }

    /// SHA-256 of the compact fixed-float encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = crate::io::to_json_line(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
