//! Surface models: atlases, metric coefficients, Christoffel symbols and
//! Gaussian curvature.
//!
//! Sphere-type surfaces of revolution carry three charts: a band chart in
//! `(r, theta)` and two Cartesian pole charts. Torus-type surfaces use a single
//! periodic chart whose coordinates are kept unwrapped (a covering chart), so
//! winding numbers can be read off coordinate differences.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::profile::{CapProfile, CapSpec, ProfileValue};

pub const BAND: usize = 0;
pub const NORTH: usize = 1;
pub const SOUTH: usize = 2;

/// A point in one chart of an atlas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: usize,
    pub coords: [f64; 2],
}

impl ChartPoint {
    pub const fn new(chart: usize, coords: [f64; 2]) -> Self {
        Self { chart, coords }
    }
}

/// Symmetric 2x2 metric coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metric {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
}

impl Metric {
    pub const IDENTITY: Metric = Metric { g11: 1.0, g12: 0.0, g22: 1.0 };

    pub fn det(&self) -> f64 {
        self.g11 * self.g22 - self.g12 * self.g12
    }

    pub fn inverse(&self) -> Metric {
        let d = self.det();
        Metric { g11: self.g22 / d, g12: -self.g12 / d, g22: self.g11 / d }
    }

    pub fn dot(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.g11 * a[0] * b[0] + self.g12 * (a[0] * b[1] + a[1] * b[0]) + self.g22 * a[1] * b[1]
    }

    pub fn norm(&self, a: [f64; 2]) -> f64 {
        self.dot(a, a).max(0.0).sqrt()
    }

    pub fn lower(&self, a: [f64; 2]) -> [f64; 2] {
        [self.g11 * a[0] + self.g12 * a[1], self.g12 * a[0] + self.g22 * a[1]]
    }

    pub fn scaled(&self, s: f64) -> Metric {
        Metric { g11: self.g11 * s, g12: self.g12 * s, g22: self.g22 * s }
    }

    pub fn as_array(&self) -> [[f64; 2]; 2] {
        [[self.g11, self.g12], [self.g12, self.g22]]
    }

    /// Rotation by +90 degrees in the oriented metric: `g(Ja, a) = 0`, `|Ja| = |a|`.
    pub fn rotate(&self, a: [f64; 2]) -> [f64; 2] {
        let s = self.det().sqrt();
        [-(self.g12 * a[0] + self.g22 * a[1]) / s, (self.g11 * a[0] + self.g12 * a[1]) / s]
    }

    /// Oriented area form `sqrt(det g) (a1 b2 - a2 b1)`.
    pub fn cross(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.det().sqrt() * (a[0] * b[1] - a[1] * b[0])
    }
}

/// `gamma[k][i][j] = Gamma^k_{ij}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Christoffel(pub [[[f64; 2]; 2]; 2]);

impl Christoffel {
    /// `-Gamma^k_{ij} v^i v^j`.
    #[inline]
    pub fn accel(&self, v: [f64; 2]) -> [f64; 2] {
        let g = &self.0;
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = -(g[k][0][0] * v[0] * v[0] + 2.0 * g[k][0][1] * v[0] * v[1] + g[k][1][1] * v[1] * v[1]);
        }
        out
    }
}

/// Smooth scalar field in canonical coordinates, used as a conformal exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarField {
    Constant { value: f64 },
    /// `A exp(1 - 1/(1 - d^2))` with `d` the wrapped coordinate distance over `radius`.
    Bump { center: [f64; 2], radius: f64, amplitude: f64 },
    /// Same profile in one canonical coordinate only.
    Band { axis: usize, center: f64, half_width: f64, amplitude: f64 },
    Sum { terms: Vec<ScalarField> },
}

fn wrap_to(d: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => d - p * (d / p).round(),
        None => d,
    }
}

/// `(phi(q), phi'(q))` for `phi(q) = exp(1 - 1/(1 - q))`, `q = d^2`.
fn bump_profile(q: f64) -> (f64, f64) {
    if q >= 1.0 {
        return (0.0, 0.0);
    }
    let w = 1.0 - q;
    let v = (1.0 - 1.0 / w).exp();
    (v, -v / (w * w))
}

impl ScalarField {
    /// Value and canonical gradient.
    pub fn eval(&self, c: [f64; 2], periods: [Option<f64>; 2]) -> (f64, [f64; 2]) {
        match self {
            ScalarField::Constant { value } => (*value, [0.0, 0.0]),
            ScalarField::Bump { center, radius, amplitude } => {
                let d0 = wrap_to(c[0] - center[0], periods[0]);
                let d1 = wrap_to(c[1] - center[1], periods[1]);
                let r2 = radius * radius;
                let (v, dv) = bump_profile((d0 * d0 + d1 * d1) / r2);
                (amplitude * v, [amplitude * dv * 2.0 * d0 / r2, amplitude * dv * 2.0 * d1 / r2])
            }
            ScalarField::Band { axis, center, half_width, amplitude } => {
                let a = (*axis).min(1);
                let d = wrap_to(c[a] - center, periods[a]);
                let w2 = half_width * half_width;
                let (v, dv) = bump_profile(d * d / w2);
                let mut g = [0.0; 2];
                g[a] = amplitude * dv * 2.0 * d / w2;
                (amplitude * v, g)
            }
            ScalarField::Sum { terms } => terms.iter().fold((0.0, [0.0; 2]), |acc, t| {
                let (v, g) = t.eval(c, periods);
                (acc.0 + v, [acc.1[0] + g[0], acc.1[1] + g[1]])
            }),
        }
    }

    /// Upper bound on `sup |f|`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            ScalarField::Constant { value } => value.abs(),
            ScalarField::Bump { amplitude, .. } | ScalarField::Band { amplitude, .. } => amplitude.abs(),
            ScalarField::Sum { terms } => terms.iter().map(|t| t.sup_norm()).sum(),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant { .. } => true,
            ScalarField::Sum { terms } => terms.iter().all(|t| t.is_constant()),
            _ => false,
        }
    }

    /// Canonical-coordinate window that must stay clear of the poles.
    fn support_radius_range(&self) -> Option<(f64, f64)> {
        match self {
            ScalarField::Constant { .. } => None,
            ScalarField::Bump { center, radius, .. } => Some((center[0] - radius, center[0] + radius)),
            ScalarField::Band { axis, center, half_width, .. } => {
                if *axis == 0 {
                    Some((center - half_width, center + half_width))
                } else {
                    Some((f64::NEG_INFINITY, f64::INFINITY))
                }
            }
            ScalarField::Sum { terms } => terms.iter().filter_map(|t| t.support_radius_range()).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1))),
        }
    }
}

/// JSON description of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    RoundSphere { radius: f64 },
    FlatTorus { periods: [f64; 2] },
    TorusOfRevolution { major: f64, minor: f64 },
    /// Sphere obtained by doubling a cap across its equator.
    RevolutionProfile { cap: CapSpec },
    ModelSphere { cap: CapSpec, cylinder_length: f64 },
    ConformalPerturbation { base: Box<SurfaceSpec>, factor: ScalarField },
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<SurfaceModel> {
        match self {
            SurfaceSpec::RoundSphere { radius } => SurfaceModel::round_sphere(*radius),
            SurfaceSpec::FlatTorus { periods } => SurfaceModel::flat_torus(*periods),
            SurfaceSpec::TorusOfRevolution { major, minor } => SurfaceModel::torus_of_revolution(*major, *minor),
            SurfaceSpec::RevolutionProfile { cap } => SurfaceModel::doubled_cap(Arc::new(cap.build()?)),
            SurfaceSpec::ModelSphere { cap, cylinder_length } => build_model_sphere(Arc::new(cap.build()?), *cylinder_length),
            SurfaceSpec::ConformalPerturbation { base, factor } => base.build()?.conformal(factor.clone()),
        }
    }
}

/// Radial profile of a metric `dr^2 + rho(r)^2 dtheta^2`.
#[derive(Debug, Clone)]
pub enum Profile {
    Round { radius: f64 },
    Torus { major: f64, minor: f64 },
    Capped { cap: Arc<CapProfile>, cylinder: f64 },
}

impl Profile {
    pub fn eval(&self, r: f64) -> ProfileValue {
        match self {
            Profile::Round { radius: a } => {
                let (s, c) = (r / a).sin_cos();
                ProfileValue { rho: a * s, drho: c, ddrho: -s / a, curvature: 1.0 / (a * a) }
            }
            Profile::Torus { major, minor } => {
                let (s, c) = (r / minor).sin_cos();
                let rho = major + minor * c;
                ProfileValue { rho, drho: -s, ddrho: -c / minor, curvature: c / (minor * rho) }
            }
            Profile::Capped { cap, cylinder } => {
                let r0 = cap.r0;
                if r <= r0 {
                    cap.eval(r)
                } else if r < r0 + cylinder {
                    ProfileValue { rho: 1.0, drho: 0.0, ddrho: 0.0, curvature: 0.0 }
                } else {
                    let v = cap.eval(2.0 * r0 + cylinder - r);
                    ProfileValue { drho: -v.drho, ..v }
                }
            }
        }
    }

    /// Meridian length (sphere type) or tube circumference (torus).
    pub fn length(&self) -> f64 {
        match self {
            Profile::Round { radius } => PI * radius,
            Profile::Torus { minor, .. } => TAU * minor,
            Profile::Capped { cap, cylinder } => 2.0 * cap.r0 + cylinder,
        }
    }

    /// `int_0^r rho`.
    pub fn rho_integral(&self, r: f64) -> f64 {
        match self {
            Profile::Round { radius: a } => a * a * (1.0 - (r / a).cos()),
            Profile::Torus { major, minor } => major * r + minor * minor * (r / minor).sin(),
            Profile::Capped { cap, cylinder } => {
                let r0 = cap.r0;
                let half = cap.rho_integral(r0);
                if r <= r0 {
                    cap.rho_integral(r)
                } else if r <= r0 + cylinder {
                    half + (r - r0)
                } else {
                    2.0 * half + cylinder - cap.rho_integral(2.0 * r0 + cylinder - r)
                }
            }
        }
    }

    /// `(a3, a5)` in `rho = r + a3 r^3 + a5 r^5` at either pole.
    fn pole_series(&self) -> (f64, f64) {
        match self {
            Profile::Round { radius: a } => (-1.0 / (6.0 * a * a), 1.0 / (120.0 * a.powi(4))),
            Profile::Torus { .. } => (0.0, 0.0),
            Profile::Capped { cap, .. } => cap.pole_series(),
        }
    }

    pub fn max_curvature(&self) -> f64 {
        match self {
            Profile::Round { radius } => 1.0 / (radius * radius),
            Profile::Torus { major, minor } => 1.0 / (minor * (major + minor)),
            Profile::Capped { cap, .. } => cap.curvature(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    Sphere { length: f64 },
    Torus { periods: [f64; 2] },
}

#[derive(Debug, Clone)]
enum BaseMetric {
    Flat,
    Revolution(Profile),
}

/// Surface kind tag, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    RoundSphere,
    FlatTorus,
    TorusOfRevolution,
    RevolutionProfile,
    ModelSphere,
    ConformalPerturbation,
}

/// An immutable Riemannian surface with its atlas.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    spec: SurfaceSpec,
    kind: SurfaceKind,
    layout: Layout,
    base: BaseMetric,
    factor: Option<ScalarField>,
    genus: u32,
}

fn cap_spec_of(cap: &CapProfile) -> CapSpec {
    let mut s = CapSpec::new(cap.raw_r0, cap.family.clone());
    s.k_flat = cap.k_flat;
    s.grid = cap.grid_len();
    s
}

/// Glues two copies of `cap` to a flat cylinder of the given length.
pub fn build_model_sphere(cap: Arc<CapProfile>, cylinder_length: f64) -> Result<SurfaceModel> {
    if !(cylinder_length > 0.0 && cylinder_length.is_finite()) {
        return Err(GeoError::Precondition("cylinder length must be positive".into()));
    }
    if let Some(bad) = cap.checks.iter().find(|c| !c.passed) {
        return Err(GeoError::Precondition(format!("cap invariant '{}' fails", bad.name)));
    }
    let spec = SurfaceSpec::ModelSphere { cap: cap_spec_of(&cap), cylinder_length };
    let profile = Profile::Capped { cap, cylinder: cylinder_length };
    Ok(SurfaceModel {
        spec,
        kind: SurfaceKind::ModelSphere,
        layout: Layout::Sphere { length: profile.length() },
        base: BaseMetric::Revolution(profile),
        factor: None,
        genus: 0,
    })
}

impl SurfaceModel {
    pub fn round_sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeoError::Config("sphere radius must be positive".into()));
        }
        let profile = Profile::Round { radius };
        Ok(Self {
            spec: SurfaceSpec::RoundSphere { radius },
            kind: SurfaceKind::RoundSphere,
            layout: Layout::Sphere { length: profile.length() },
            base: BaseMetric::Revolution(profile),
            factor: None,
            genus: 0,
        })
    }

    pub fn flat_torus(periods: [f64; 2]) -> Result<Self> {
        if !periods.iter().all(|p| *p > 0.0 && p.is_finite()) {
            return Err(GeoError::Config("torus periods must be positive".into()));
        }
        Ok(Self {
            spec: SurfaceSpec::FlatTorus { periods },
            kind: SurfaceKind::FlatTorus,
            layout: Layout::Torus { periods },
            base: BaseMetric::Flat,
            factor: None,
            genus: 1,
        })
    }

    pub fn torus_of_revolution(major: f64, minor: f64) -> Result<Self> {
        if !(minor > 0.0 && major > minor && major.is_finite()) {
            return Err(GeoError::Config("torus needs major > minor > 0".into()));
        }
        Ok(Self {
            spec: SurfaceSpec::TorusOfRevolution { major, minor },
            kind: SurfaceKind::TorusOfRevolution,
            layout: Layout::Torus { periods: [TAU * minor, TAU] },
            base: BaseMetric::Revolution(Profile::Torus { major, minor }),
            factor: None,
            genus: 1,
        })
    }

    pub fn doubled_cap(cap: Arc<CapProfile>) -> Result<Self> {
        let spec = SurfaceSpec::RevolutionProfile { cap: cap_spec_of(&cap) };
        let profile = Profile::Capped { cap, cylinder: 0.0 };
        Ok(Self {
            spec,
            kind: SurfaceKind::RevolutionProfile,
            layout: Layout::Sphere { length: profile.length() },
            base: BaseMetric::Revolution(profile),
            factor: None,
            genus: 0,
        })
    }

    /// `e^{2f} g`. Non-constant factors must vanish near the poles.
    pub fn conformal(&self, factor: ScalarField) -> Result<Self> {
        if let (Layout::Sphere { length }, Some((lo, hi))) = (self.layout, factor.support_radius_range()) {
            if !factor.is_constant() && (lo <= 0.05 * length || hi >= 0.95 * length) {
                return Err(GeoError::Config("conformal factor support must avoid the poles".into()));
            }
        }
        let combined = match &self.factor {
            Some(f) => ScalarField::Sum { terms: vec![f.clone(), factor.clone()] },
            None => factor.clone(),
        };
        Ok(Self {
            spec: SurfaceSpec::ConformalPerturbation { base: Box::new(self.spec.clone()), factor },
            kind: SurfaceKind::ConformalPerturbation,
            layout: self.layout,
            base: self.base.clone(),
            factor: Some(combined),
            genus: self.genus,
        })
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn genus(&self) -> u32 {
        self.genus
    }

    pub fn chart_count(&self) -> usize {
        match self.layout {
            Layout::Sphere { .. } => 3,
            Layout::Torus { .. } => 1,
        }
    }

    pub fn is_sphere_type(&self) -> bool {
        matches!(self.layout, Layout::Sphere { .. })
    }

    /// Pole-to-pole length for sphere-type atlases.
    pub fn sphere_length(&self) -> Option<f64> {
        match self.layout {
            Layout::Sphere { length } => Some(length),
            Layout::Torus { .. } => None,
        }
    }

    /// Radial profile of the underlying metric of revolution, if any.
    pub fn base_profile(&self) -> Option<&Profile> {
        match &self.base {
            BaseMetric::Revolution(p) => Some(p),
            BaseMetric::Flat => None,
        }
    }

    /// The profile if the metric itself is of revolution (no conformal factor).
    pub fn profile(&self) -> Option<&Profile> {
        if self.factor.is_none() {
            self.base_profile()
        } else {
            None
        }
    }

    pub fn factor(&self) -> Option<&ScalarField> {
        self.factor.as_ref()
    }

    /// The cap and cylinder length of a model sphere (possibly perturbed).
    pub fn model_sphere_parts(&self) -> Option<(&Arc<CapProfile>, f64)> {
        match &self.base {
            BaseMetric::Revolution(Profile::Capped { cap, cylinder }) if *cylinder > 0.0 => Some((cap, *cylinder)),
            _ => None,
        }
    }

    /// Radii of the two cap boundary equators of a model sphere.
    pub fn cap_equators(&self) -> Option<(f64, f64)> {
        self.model_sphere_parts().map(|(cap, l)| (cap.r0, cap.r0 + l))
    }

    /// Periods of the canonical coordinates.
    pub fn canonical_periods(&self) -> [Option<f64>; 2] {
        match self.layout {
            Layout::Sphere { .. } => [None, Some(TAU)],
            Layout::Torus { periods } => [Some(periods[0]), Some(periods[1])],
        }
    }

    /// Periods of the coordinates of a chart.
    pub fn chart_periods(&self, chart: usize) -> [Option<f64>; 2] {
        match self.layout {
            Layout::Sphere { .. } if chart == BAND => [None, Some(TAU)],
            Layout::Sphere { .. } => [None, None],
            Layout::Torus { periods } => [Some(periods[0]), Some(periods[1])],
        }
    }

    /// Checks that a point lies in its chart's coordinate rectangle.
    pub fn validate(&self, p: &ChartPoint) -> Result<()> {
        if !(p.coords[0].is_finite() && p.coords[1].is_finite()) {
            return Err(GeoError::Domain(format!("non-finite coordinates {:?}", p.coords)));
        }
        let ok = match self.layout {
            Layout::Sphere { length } => match p.chart {
                BAND => p.coords[0] > 0.2 * length && p.coords[0] < 0.8 * length,
                NORTH | SOUTH => p.coords[0].hypot(p.coords[1]) < 0.45 * length,
                _ => false,
            },
            Layout::Torus { .. } => p.chart == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(GeoError::Domain(format!("chart {} coords {:?}", p.chart, p.coords)))
        }
    }

    /// Canonical coordinates: `(r, theta)` for sphere type, reduced chart
    /// coordinates otherwise (left unwrapped).
    pub fn canonical(&self, p: &ChartPoint) -> [f64; 2] {
        match self.layout {
            Layout::Sphere { length } => match p.chart {
                NORTH => [p.coords[0].hypot(p.coords[1]), p.coords[1].atan2(p.coords[0])],
                SOUTH => [length - p.coords[0].hypot(p.coords[1]), (-p.coords[1]).atan2(p.coords[0])],
                _ => p.coords,
            },
            Layout::Torus { .. } => p.coords,
        }
    }

    /// Radial canonical coordinate.
    #[inline]
    pub fn radius_of(&self, p: &ChartPoint) -> f64 {
        match self.layout {
            Layout::Sphere { length } => match p.chart {
                NORTH => p.coords[0].hypot(p.coords[1]),
                SOUTH => length - p.coords[0].hypot(p.coords[1]),
                _ => p.coords[0],
            },
            Layout::Torus { .. } => p.coords[0],
        }
    }

    fn chart_from_canonical(&self, c: [f64; 2], chart: usize) -> [f64; 2] {
        match self.layout {
            Layout::Sphere { length } => match chart {
                NORTH => [c[0] * c[1].cos(), c[0] * c[1].sin()],
                SOUTH => {
                    let s = length - c[0];
                    [s * c[1].cos(), -s * c[1].sin()]
                }
                _ => c,
            },
            Layout::Torus { .. } => c,
        }
    }

    fn preferred_chart_for(&self, r: f64) -> usize {
        match self.layout {
            Layout::Sphere { length } => {
                if r < 0.3 * length {
                    NORTH
                } else if r > 0.7 * length {
                    SOUTH
                } else {
                    BAND
                }
            }
            Layout::Torus { .. } => 0,
        }
    }

    /// Point from canonical coordinates in the preferred chart.
    pub fn point(&self, c: [f64; 2]) -> ChartPoint {
        let chart = self.preferred_chart_for(c[0]);
        ChartPoint::new(chart, self.chart_from_canonical(c, chart))
    }

    fn in_keep_region(&self, p: &ChartPoint) -> bool {
        match self.layout {
            Layout::Sphere { length } => {
                let r = self.radius_of(p);
                match p.chart {
                    NORTH => r < 0.4 * length,
                    SOUTH => r > 0.6 * length,
                    _ => r > 0.25 * length && r < 0.75 * length,
                }
            }
            Layout::Torus { .. } => true,
        }
    }

    /// Expresses `p` in `chart`; periodic coordinates are unwrapped toward `near`.
    pub fn to_chart(&self, p: &ChartPoint, chart: usize, near: Option<[f64; 2]>) -> ChartPoint {
        let coords = if chart == p.chart {
            p.coords
        } else {
            self.chart_from_canonical(self.canonical(p), chart)
        };
        let mut q = ChartPoint::new(chart, coords);
        if let Some(n) = near {
            self.align(&mut q, n);
        }
        q
    }

    /// Shifts periodic coordinates to the representative nearest `near`.
    pub fn align(&self, p: &mut ChartPoint, near: [f64; 2]) {
        let per = self.chart_periods(p.chart);
        for a in 0..2 {
            if let Some(t) = per[a] {
                p.coords[a] = near[a] + wrap_to(p.coords[a] - near[a], Some(t));
            }
        }
    }

    /// Jacobian `d(target coords)/d(source coords)` at `p`.
    pub fn transition_jacobian(&self, p: &ChartPoint, chart: usize) -> [[f64; 2]; 2] {
        if chart == p.chart {
            return [[1.0, 0.0], [0.0, 1.0]];
        }
        let length = match self.layout {
            Layout::Sphere { length } => length,
            Layout::Torus { .. } => return [[1.0, 0.0], [0.0, 1.0]],
        };
        // source -> band
        let to_band = |q: &ChartPoint| -> [[f64; 2]; 2] {
            let (x, y) = (q.coords[0], q.coords[1]);
            let r2 = x * x + y * y;
            let r = r2.sqrt();
            match q.chart {
                NORTH => [[x / r, y / r], [-y / r2, x / r2]],
                SOUTH => [[-x / r, -y / r], [y / r2, -x / r2]],
                _ => [[1.0, 0.0], [0.0, 1.0]],
            }
        };
        let from_band = |c: [f64; 2], target: usize| -> [[f64; 2]; 2] {
            let (s, co) = c[1].sin_cos();
            match target {
                NORTH => [[co, -c[0] * s], [s, c[0] * co]],
                SOUTH => {
                    let sr = length - c[0];
                    [[-co, -sr * s], [s, -sr * co]]
                }
                _ => [[1.0, 0.0], [0.0, 1.0]],
            }
        };
        let a = to_band(p);
        let b = from_band(self.canonical(p), chart);
        mat_mul(b, a)
    }

    /// Moves `(p, v)` to the preferred chart when `p` left its keep region.
    pub fn settle(&self, p: ChartPoint, v: [f64; 2]) -> (ChartPoint, [f64; 2]) {
        if self.in_keep_region(&p) {
            return (p, v);
        }
        let target = self.preferred_chart_for(self.radius_of(&p));
        if target == p.chart {
            return (p, v);
        }
        let j = self.transition_jacobian(&p, target);
        (self.to_chart(&p, target, None), mat_vec(j, v))
    }

    /// Injective continuous map into `R^3`, used for proximity queries.
    pub fn locator(&self, p: &ChartPoint) -> [f64; 3] {
        let c = self.canonical(p);
        match (&self.layout, &self.base) {
            (Layout::Sphere { .. }, BaseMetric::Revolution(pr)) => {
                let rho = pr.eval(c[0]).rho;
                [rho * c[1].cos(), rho * c[1].sin(), c[0]]
            }
            (Layout::Torus { .. }, BaseMetric::Revolution(Profile::Torus { major, minor })) => {
                let u = c[0] / minor;
                let w = major + minor * u.cos();
                [w * c[1].cos(), w * c[1].sin(), minor * u.sin()]
            }
            (Layout::Torus { periods }, _) => {
                let a = TAU * c[0] / periods[0];
                let b = TAU * c[1] / periods[1];
                let sc = periods[0].max(periods[1]) / TAU;
                let w = 2.0 + a.cos();
                [sc * w * b.cos(), sc * w * b.sin(), sc * a.sin()]
            }
            _ => [c[0], c[1], 0.0],
        }
    }

    /// Base metric and its coordinate derivatives `dg[k] = d_k g`.
    fn base_metric_derivs(&self, p: &ChartPoint) -> (Metric, [Metric; 2]) {
        let zero = Metric { g11: 0.0, g12: 0.0, g22: 0.0 };
        match &self.base {
            BaseMetric::Flat => (Metric::IDENTITY, [zero, zero]),
            BaseMetric::Revolution(pr) => match (self.layout, p.chart) {
                (Layout::Sphere { .. }, NORTH) | (Layout::Sphere { .. }, SOUTH) => {
                    let length = self.sphere_length().unwrap_or(0.0);
                    let (x, y) = (p.coords[0], p.coords[1]);
                    let r = x.hypot(y);
                    let (rho, drho) = if p.chart == NORTH {
                        let v = pr.eval(r);
                        (v.rho, v.drho)
                    } else {
                        let v = pr.eval(length - r);
                        (v.rho, -v.drho)
                    };
                    let (f, g) = pole_factor(rho, drho, r, pr.pole_series(), length);
                    let xs = [x, y];
                    let mut m = [[0.0; 2]; 2];
                    let mut dm = [[[0.0; 2]; 2]; 2];
                    for i in 0..2 {
                        for j in 0..2 {
                            let dij = if i == j { 1.0 } else { 0.0 };
                            let q = r * r * dij - xs[i] * xs[j];
                            m[i][j] = dij + f * q;
                            for k in 0..2 {
                                let dik = if i == k { 1.0 } else { 0.0 };
                                let djk = if j == k { 1.0 } else { 0.0 };
                                dm[k][i][j] = g * xs[k] * q + f * (2.0 * xs[k] * dij - dik * xs[j] - xs[i] * djk);
                            }
                        }
                    }
                    let to_m = |a: [[f64; 2]; 2]| Metric { g11: a[0][0], g12: 0.5 * (a[0][1] + a[1][0]), g22: a[1][1] };
                    (to_m(m), [to_m(dm[0]), to_m(dm[1])])
                }
                _ => {
                    let v = pr.eval(p.coords[0]);
                    (
                        Metric { g11: 1.0, g12: 0.0, g22: v.rho * v.rho },
                        [Metric { g11: 0.0, g12: 0.0, g22: 2.0 * v.rho * v.drho }, zero],
                    )
                }
            },
        }
    }

    /// Conformal exponent and its chart gradient.
    fn factor_at(&self, p: &ChartPoint) -> Option<(f64, [f64; 2])> {
        let f = self.factor.as_ref()?;
        let c = self.canonical(p);
        let (v, gc) = f.eval(c, self.canonical_periods());
        if gc == [0.0, 0.0] || p.chart == BAND || !self.is_sphere_type() {
            return Some((v, gc));
        }
        // chain rule through (r, theta) in a pole chart
        let (x, y) = (p.coords[0], p.coords[1]);
        let r2 = x * x + y * y;
        let r = r2.sqrt();
        let j = if p.chart == NORTH {
            [[x / r, y / r], [-y / r2, x / r2]]
        } else {
            [[-x / r, -y / r], [y / r2, -x / r2]]
        };
        Some((v, [gc[0] * j[0][0] + gc[1] * j[1][0], gc[0] * j[0][1] + gc[1] * j[1][1]]))
    }

    /// Metric and first derivatives without domain checks.
    pub fn metric_derivs(&self, p: &ChartPoint) -> (Metric, [Metric; 2]) {
        let (g, dg) = self.base_metric_derivs(p);
        match self.factor_at(p) {
            None => (g, dg),
            Some((f, df)) => {
                let e = (2.0 * f).exp();
                let mut out = [dg[0], dg[1]];
                for k in 0..2 {
                    out[k] = Metric {
                        g11: e * (dg[k].g11 + 2.0 * df[k] * g.g11),
                        g12: e * (dg[k].g12 + 2.0 * df[k] * g.g12),
                        g22: e * (dg[k].g22 + 2.0 * df[k] * g.g22),
                    };
                }
                (g.scaled(e), out)
            }
        }
    }

    #[inline]
    pub fn metric_unchecked(&self, p: &ChartPoint) -> Metric {
        self.metric_derivs(p).0
    }

    pub fn metric_at(&self, p: &ChartPoint) -> Result<Metric> {
        self.validate(p)?;
        Ok(self.metric_unchecked(p))
    }

    /// Levi-Civita symbols from the metric and its first derivatives.
    pub fn christoffel_unchecked(&self, p: &ChartPoint) -> Christoffel {
        let (g, dg) = self.metric_derivs(p);
        christoffel_from(&g, &dg)
    }

    pub fn christoffel_at(&self, p: &ChartPoint) -> Result<Christoffel> {
        self.validate(p)?;
        Ok(self.christoffel_unchecked(p))
    }

    /// Gaussian curvature; exact profile value for metrics of revolution.
    pub fn curvature_unchecked(&self, p: &ChartPoint) -> f64 {
        match (&self.base, &self.factor) {
            (BaseMetric::Flat, None) => 0.0,
            (BaseMetric::Revolution(pr), None) => pr.eval(self.radius_of(p)).curvature,
            (base, Some(f)) if f.is_constant() => {
                let (v, _) = f.eval([0.0, 0.0], [None, None]);
                let k = match base {
                    BaseMetric::Flat => 0.0,
                    BaseMetric::Revolution(pr) => pr.eval(self.radius_of(p)).curvature,
                };
                k * (-2.0 * v).exp()
            }
            _ => self.brioschi_unchecked(p),
        }
    }

    pub fn gaussian_curvature(&self, p: &ChartPoint) -> Result<f64> {
        self.validate(p)?;
        let k = self.curvature_unchecked(p);
        if k.is_finite() {
            Ok(k)
        } else {
            Err(GeoError::Integrator(format!("non-finite curvature at {:?}", p.coords)))
        }
    }

    /// Brioschi formula; second derivatives by central differences of the
    /// analytic first derivatives.
    pub fn brioschi_unchecked(&self, p: &ChartPoint) -> f64 {
        let h = 1e-4;
        let (g, dg) = self.metric_derivs(p);
        let shifted = |a: usize, s: f64| {
            let mut q = *p;
            q.coords[a] += s;
            self.metric_derivs(&q).1
        };
        let (pu, mu) = (shifted(0, h), shifted(0, -h));
        let (pv, mv) = (shifted(1, h), shifted(1, -h));
        let (e, f, gg) = (g.g11, g.g12, g.g22);
        let (eu, ev) = (dg[0].g11, dg[1].g11);
        let (fu, fv) = (dg[0].g12, dg[1].g12);
        let (gu, gv) = (dg[0].g22, dg[1].g22);
        let evv = (pv[1].g11 - mv[1].g11) / (2.0 * h);
        let guu = (pu[0].g22 - mu[0].g22) / (2.0 * h);
        let fuv = 0.5 * ((pu[1].g12 - mu[1].g12) / (2.0 * h) + (pv[0].g12 - mv[0].g12) / (2.0 * h));
        let a = [
            [-0.5 * evv + fuv - 0.5 * guu, 0.5 * eu, fu - 0.5 * ev],
            [fv - 0.5 * gu, e, f],
            [0.5 * gv, f, gg],
        ];
        let b = [[0.0, 0.5 * ev, 0.5 * gu], [0.5 * ev, e, f], [0.5 * gu, f, gg]];
        let d = e * gg - f * f;
        (det3(a) - det3(b)) / (d * d)
    }

    pub fn brioschi_curvature(&self, p: &ChartPoint) -> Result<f64> {
        self.validate(p)?;
        Ok(self.brioschi_unchecked(p))
    }

    /// Total area.
    pub fn area(&self) -> f64 {
        let base = match (&self.layout, &self.base) {
            (Layout::Sphere { length }, BaseMetric::Revolution(pr)) => TAU * pr.rho_integral(*length),
            (Layout::Torus { periods }, BaseMetric::Revolution(pr)) => TAU * pr.rho_integral(periods[0]),
            (Layout::Torus { periods }, BaseMetric::Flat) => periods[0] * periods[1],
            _ => f64::NAN,
        };
        match &self.factor {
            None => base,
            Some(f) if f.is_constant() => base * (2.0 * f.eval([0.0, 0.0], [None, None]).0).exp(),
            Some(_) => self.grid_quadrature(|_, _| 1.0),
        }
    }

    /// `max R^+` over the surface.
    pub fn max_curvature(&self) -> f64 {
        match (&self.base, &self.factor) {
            (BaseMetric::Flat, None) => 0.0,
            (BaseMetric::Revolution(pr), None) => pr.max_curvature().max(0.0),
            _ => {
                let mut m: f64 = 0.0;
                self.grid_quadrature(|k, _| {
                    m = m.max(k);
                    0.0
                });
                m
            }
        }
    }

    /// Midpoint quadrature of `f(K, dA)` in canonical coordinates.
    fn grid_quadrature(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let (n0, n1) = (400usize, 400usize);
        let (span0, span1) = match self.layout {
            Layout::Sphere { length } => (length, TAU),
            Layout::Torus { periods } => (periods[0], periods[1]),
        };
        let (d0, d1) = (span0 / n0 as f64, span1 / n1 as f64);
        let mut acc = 0.0;
        for i in 0..n0 {
            for j in 0..n1 {
                let c = [(i as f64 + 0.5) * d0, (j as f64 + 0.5) * d1];
                let p = self.point(c);
                let g = self.metric_unchecked(&p);
                // polar Jacobian in the pole charts
                let jac = if p.chart == BAND || !self.is_sphere_type() { 1.0 } else { c[0].min(span0 - c[0]) };
                acc += f(self.curvature_unchecked(&p), g.det().sqrt() * jac * d0 * d1);
            }
        }
        acc
    }

    /// Upper estimate of the diameter.
    pub fn diameter(&self) -> f64 {
        let base = match (&self.layout, &self.base) {
            (Layout::Sphere { length }, _) => *length,
            (Layout::Torus { .. }, BaseMetric::Revolution(Profile::Torus { major, minor })) => PI * minor + PI * (major + minor),
            (Layout::Torus { periods }, _) => 0.5 * periods[0].hypot(periods[1]),
        };
        base * self.factor.as_ref().map_or(1.0, |f| f.sup_norm().exp())
    }
}

/// `F = (rho^2/r^2 - 1)/r^2` and `G = F'/r` for the pole-chart metric.
fn pole_factor(rho: f64, drho: f64, r: f64, series: (f64, f64), length: f64) -> (f64, f64) {
    let (a3, a5) = series;
    if r < 1e-3 * length.min(1.0) {
        let c4 = a3 * a3 + 2.0 * a5;
        return (2.0 * a3 + c4 * r * r, 2.0 * c4);
    }
    let r2 = r * r;
    let f = ((rho / r).powi(2) - 1.0) / r2;
    let df = (2.0 * rho * drho - 2.0 * r) / (r2 * r2) - 4.0 * (rho * rho - r2) / (r2 * r2 * r);
    (f, df / r)
}

pub fn christoffel_from(g: &Metric, dg: &[Metric; 2]) -> Christoffel {
    let gi = g.inverse().as_array();
    let d = [dg[0].as_array(), dg[1].as_array()];
    // lowered symbols  [l][i][j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    let mut low = [[[0.0; 2]; 2]; 2];
    for l in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                low[l][i][j] = 0.5 * (d[i][j][l] + d[j][i][l] - d[l][i][j]);
            }
        }
    }
    let mut out = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                out[k][i][j] = gi[k][0] * low[0][i][j] + gi[k][1] * low[1][i][j];
            }
        }
    }
    Christoffel(out)
}

fn det3(a: [[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[inline]
pub fn mat_vec(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Wraps an angle-like difference into `(-p/2, p/2]`.
pub fn wrap(d: f64, period: f64) -> f64 {
    wrap_to(d, Some(period))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{build_cap, CurvatureFamily};

    fn model() -> SurfaceModel {
        let cap = build_cap(2.0, CurvatureFamily::default(), 1e-12).unwrap();
        build_model_sphere(Arc::new(cap), 1.0).unwrap()
    }

    #[test]
    fn round_sphere_band_metric() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        let p = ChartPoint::new(BAND, [1.1, 0.3]);
        let g = s.metric_at(&p).unwrap();
        assert!((g.g11 - 1.0).abs() < 1e-15 && g.g12 == 0.0);
        assert!((g.g22 - 1.1f64.sin().powi(2)).abs() < 1e-15);
        let c = s.christoffel_at(&p).unwrap().0;
        assert!((c[0][1][1] + 1.1f64.sin() * 1.1f64.cos()).abs() < 1e-14);
        assert!((c[1][0][1] - 1.1f64.cos() / 1.1f64.sin()).abs() < 1e-14);
        assert_eq!(c[0][0][0], 0.0);
    }

    #[test]
    fn flat_and_conformal_constant() {
        let t = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
        let p = ChartPoint::new(0, [0.2, 0.7]);
        assert_eq!(t.metric_at(&p).unwrap(), Metric::IDENTITY);
        assert_eq!(t.christoffel_at(&p).unwrap().0, [[[0.0; 2]; 2]; 2]);
        let c = t.conformal(ScalarField::Constant { value: 0.01 }).unwrap();
        let g = c.metric_at(&p).unwrap();
        assert!((g.g11 - 0.02f64.exp()).abs() < 1e-15 && (g.g22 - 0.02f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn torus_curvature_at_equators() {
        let t = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
        let outer = t.gaussian_curvature(&ChartPoint::new(0, [0.0, 0.0])).unwrap();
        let inner = t.gaussian_curvature(&ChartPoint::new(0, [PI, 0.0])).unwrap();
        assert!((outer - 1.0 / 3.0).abs() < 1e-14);
        assert!((inner + 1.0).abs() < 1e-14);
    }

    #[test]
    fn brioschi_agrees_with_profile() {
        let m = model();
        let s = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
        for (surf, pts) in [
            (&m, vec![ChartPoint::new(NORTH, [0.3, 0.2]), ChartPoint::new(BAND, [1.4, 0.5]), ChartPoint::new(SOUTH, [0.5, -0.1])]),
            (&s, vec![ChartPoint::new(0, [0.4, 1.0]), ChartPoint::new(0, [2.5, 4.0])]),
        ] {
            for p in pts {
                let a = surf.curvature_unchecked(&p);
                let b = surf.brioschi_unchecked(&p);
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-2), "{a} {b} at {p:?}");
            }
        }
    }

    #[test]
    fn transitions_pull_back_metric() {
        let m = model();
        let l = m.sphere_length().unwrap();
        for (r, th) in [(0.3 * l, 0.4), (0.35 * l, -2.0), (0.68 * l, 1.0), (0.62 * l, 3.0)] {
            let p = ChartPoint::new(BAND, [r, th]);
            for target in [NORTH, SOUTH] {
                let q = m.to_chart(&p, target, None);
                let j = m.transition_jacobian(&p, target);
                let gp = m.metric_unchecked(&p).as_array();
                let gq = m.metric_unchecked(&q).as_array();
                // g_p = J^T g_q J
                for a in 0..2 {
                    for b in 0..2 {
                        let mut s = 0.0;
                        for i in 0..2 {
                            for k in 0..2 {
                                s += j[i][a] * gq[i][k] * j[k][b];
                            }
                        }
                        assert!((s - gp[a][b]).abs() <= 1e-9 * gp[a][b].abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn cylinder_is_flat() {
        let m = model();
        let (r1, r2) = m.cap_equators().unwrap();
        let p = ChartPoint::new(BAND, [0.5 * (r1 + r2), 0.1]);
        assert_eq!(m.gaussian_curvature(&p).unwrap(), 0.0);
        assert_eq!(m.christoffel_at(&p).unwrap().0, [[[0.0; 2]; 2]; 2]);
    }

    #[test]
    fn model_sphere_area() {
        let m = model();
        let (cap, l) = m.model_sphere_parts().unwrap();
        assert!((m.area() - (2.0 * cap.area() + TAU * l)).abs() < 1e-10);
    }

    #[test]
    fn outside_atlas_is_domain_error() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        assert!(matches!(s.metric_at(&ChartPoint::new(BAND, [0.01, 0.0])), Err(GeoError::Domain(_))));
        assert!(matches!(s.metric_at(&ChartPoint::new(7, [0.5, 0.0])), Err(GeoError::Domain(_))));
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"kind":"model_sphere","cap":{"r0":2.0,"curvature_profile":{"family":"bump","sharpness":1.0}},"cylinder_length":1.0}"#;
        let spec: SurfaceSpec = serde_json::from_str(json).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.kind(), SurfaceKind::ModelSphere);
        assert!(serde_json::from_str::<SurfaceSpec>(r#"{"kind":"round_sphere","radius":1.0,"extra":1}"#).is_err());
    }
}
