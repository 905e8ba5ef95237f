//! Closed polygonal curves on a surface.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::surface::{ChartPoint, Metric, SurfaceModel};

/// A closed polygon; vertex `n-1` joins vertex `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    pub vertices: Vec<ChartPoint>,
    pub orientation: i8,
    /// Target spacing used when resampling.
    pub spacing: f64,
}

impl DiscreteCurve {
    /// Settles every vertex into its preferred chart.
    pub fn new(surf: &SurfaceModel, vertices: Vec<ChartPoint>, spacing: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(GeoError::Degenerate("curve needs at least 3 vertices".into()));
        }
        if !(spacing > 0.0) {
            return Err(GeoError::Config("curve spacing must be positive".into()));
        }
        let mut out = Vec::with_capacity(vertices.len());
        for v in vertices {
            if !(v.coords[0].is_finite() && v.coords[1].is_finite()) {
                return Err(GeoError::Domain(format!("non-finite vertex {:?}", v.coords)));
            }
            out.push(settle_point(surf, v));
        }
        Ok(Self { vertices: out, orientation: 1, spacing })
    }

    /// Samples `f(u)`, `u` in `[0, 1)`, at `n` points given in canonical coordinates.
    pub fn from_fn(surf: &SurfaceModel, n: usize, spacing: f64, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let pts = (0..n).map(|i| surf.point(f(i as f64 / n as f64))).collect();
        Self::new(surf, pts, spacing)
    }

    /// Like [`DiscreteCurve::from_fn`] with the vertex count set by `spacing`.
    pub fn sampled(surf: &SurfaceModel, spacing: f64, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let len = Self::from_fn(surf, 512, spacing, &f)?.length(surf);
        let n = ((len / spacing).round() as usize).max(16);
        Self::from_fn(surf, n, spacing, f)
    }

    /// Parallel `{r = const}` (first canonical coordinate).
    pub fn parallel(surf: &SurfaceModel, r: f64, spacing: f64) -> Result<Self> {
        let per = surf.canonical_periods()[1].unwrap_or(TAU);
        Self::sampled(surf, spacing, |u| [r, u * per])
    }

    /// Full meridian through both poles of a sphere-type surface.
    pub fn meridian(surf: &SurfaceModel, theta: f64, spacing: f64) -> Result<Self> {
        let l = surf.sphere_length().ok_or_else(|| GeoError::Unsupported("meridians need a sphere-type surface".into()))?;
        let n = ((2.0 * l / spacing).round() as usize).max(16);
        Self::from_fn(surf, n, spacing, |u| {
            let s = 2.0 * l * u;
            if s <= l {
                [s, theta]
            } else {
                [2.0 * l - s, theta + PI]
            }
        })
    }

    /// Coordinate ellipse around `center` in canonical coordinates.
    pub fn coordinate_circle(surf: &SurfaceModel, center: [f64; 2], radii: [f64; 2], spacing: f64) -> Result<Self> {
        Self::sampled(surf, spacing, |u| [center[0] + radii[0] * (TAU * u).cos(), center[1] + radii[1] * (TAU * u).sin()])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.vertices.len()
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        (i + self.vertices.len() - 1) % self.vertices.len()
    }

    /// Vertex `j` expressed in the chart of vertex `i`, unwrapped toward it.
    pub fn vertex_in(&self, surf: &SurfaceModel, j: usize, i: usize) -> [f64; 2] {
        let a = &self.vertices[i];
        surf.to_chart(&self.vertices[j], a.chart, Some(a.coords)).coords
    }

    /// Edge vector of `i -> i+1` in the chart of vertex `i`.
    pub fn edge(&self, surf: &SurfaceModel, i: usize) -> [f64; 2] {
        let a = self.vertices[i].coords;
        let b = self.vertex_in(surf, self.next(i), i);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Metric chord length of edge `i`, evaluated at its midpoint.
    pub fn chord(&self, surf: &SurfaceModel, i: usize) -> f64 {
        let a = self.vertices[i];
        let d = self.edge(surf, i);
        let mid = ChartPoint::new(a.chart, [a.coords[0] + 0.5 * d[0], a.coords[1] + 0.5 * d[1]]);
        surf.metric_unchecked(&mid).norm(d)
    }

    pub fn chords(&self, surf: &SurfaceModel) -> Vec<f64> {
        (0..self.len()).map(|i| self.chord(surf, i)).collect()
    }

    /// Polygon length.
    pub fn length(&self, surf: &SurfaceModel) -> f64 {
        self.chords(surf).iter().sum()
    }

    /// Coordinates of a torus curve unwrapped into one continuous sequence.
    pub fn lifted(&self, surf: &SurfaceModel) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut cur = self.vertices[0];
        out.push(cur.coords);
        for j in 1..=self.len() {
            let nxt = surf.to_chart(&self.vertices[j % self.len()], cur.chart, Some(cur.coords));
            out.push(nxt.coords);
            cur = nxt;
        }
        out
    }

    /// Redistributes vertices equally in arclength by 4-point Lagrange
    /// interpolation; vertex 0 stays fixed.
    pub fn resample(&self, surf: &SurfaceModel, count: Option<usize>) -> Result<Self> {
        let n = self.len();
        let chords = self.chords(surf);
        let total: f64 = chords.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(GeoError::Degenerate("curve has no length".into()));
        }
        let m = count.unwrap_or(((total / self.spacing).round() as usize).max(16));
        let mut cum = vec![0.0; n + 1];
        for i in 0..n {
            cum[i + 1] = cum[i] + chords[i];
        }
        let mut out = Vec::with_capacity(m);
        out.push(self.vertices[0]);
        let mut seg = 0;
        for j in 1..m {
            let s = total * j as f64 / m as f64;
            while seg + 1 < n && cum[seg + 1] <= s {
                seg += 1;
            }
            let base = self.vertices[seg];
            let mut xs = [0.0; 4];
            let mut ys = [[0.0; 2]; 4];
            for (q, off) in [-1i64, 0, 1, 2].into_iter().enumerate() {
                let idx = seg as i64 + off;
                let wrapped = idx.rem_euclid(n as i64) as usize;
                let shift = if idx < 0 { -total } else if idx >= n as i64 { total } else { 0.0 };
                xs[q] = cum[wrapped] + shift;
                ys[q] = self.vertex_in(surf, wrapped, seg);
            }
            let mut p = [0.0; 2];
            for a in 0..4 {
                let mut w = 1.0;
                for b in 0..4 {
                    if a != b {
                        w *= (s - xs[b]) / (xs[a] - xs[b]);
                    }
                }
                p[0] += w * ys[a][0];
                p[1] += w * ys[a][1];
            }
            out.push(settle_point(surf, ChartPoint::new(base.chart, p)));
        }
        Ok(Self { vertices: out, orientation: self.orientation, spacing: self.spacing })
    }

    /// Largest over smallest chord.
    pub fn spacing_ratio(&self, surf: &SurfaceModel) -> f64 {
        let c = self.chords(surf);
        let max = c.iter().cloned().fold(0.0, f64::max);
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Largest turning angle between consecutive edges.
    pub fn max_turning(&self, surf: &SurfaceModel) -> f64 {
        (0..self.len())
            .map(|i| {
                let g = surf.metric_unchecked(&self.vertices[i]);
                let p = self.vertex_in(surf, self.prev(i), i);
                let c = self.vertices[i].coords;
                let a = [c[0] - p[0], c[1] - p[1]];
                let b = self.edge(surf, i);
                g.cross(a, b).atan2(g.dot(a, b)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Signed metric area enclosed by vertices `[from, to]` (inclusive, cyclic),
    /// integrated in the chart of vertex `from`. Meant for loops that fit in one chart.
    pub fn enclosed_area(&self, surf: &SurfaceModel, from: usize, to: usize) -> f64 {
        let mut pts = Vec::new();
        let mut i = from;
        loop {
            pts.push(self.vertex_in(surf, i, from));
            if i == to {
                break;
            }
            i = self.next(i);
        }
        polygon_area(surf, self.vertices[from].chart, &pts)
    }

    /// Columns `index,chart_id,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,chart_id,x,y\n");
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!("{},{},{:.16e},{:.16e}\n", i, v.chart, v.coords[0], v.coords[1]));
        }
        out
    }
}

/// Moves a point into its preferred chart.
pub fn settle_point(surf: &SurfaceModel, p: ChartPoint) -> ChartPoint {
    let q = surf.point(surf.canonical(&p));
    if q.chart == p.chart {
        p
    } else {
        q
    }
}

/// Signed area of a polygon in one chart: fan triangles from the centroid,
/// edge-midpoint quadrature of `sqrt(det g)`.
pub fn polygon_area(surf: &SurfaceModel, chart: usize, pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let c = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n as f64, a[1] + p[1] / n as f64]);
    let dens = |x: [f64; 2]| surf.metric_unchecked(&ChartPoint::new(chart, x)).det().sqrt();
    let mut area = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let tri = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]));
        let m1 = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let m2 = [0.5 * (a[0] + c[0]), 0.5 * (a[1] + c[1])];
        let m3 = [0.5 * (b[0] + c[0]), 0.5 * (b[1] + c[1])];
        area += tri * (dens(m1) + dens(m2) + dens(m3)) / 3.0;
    }
    area
}

/// Unit normal `J T` at a point for a coordinate tangent.
pub fn normal_of(g: &Metric, t: [f64; 2]) -> [f64; 2] {
    let n = g.rotate(t);
    let l = g.norm(n);
    [n[0] / l, n[1] / l]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_length_and_area_in_flat_torus() {
        let s = SurfaceModel::flat_torus([10.0, 10.0]).unwrap();
        let c = DiscreteCurve::coordinate_circle(&s, [5.0, 5.0], [1.0, 1.0], 0.01).unwrap();
        assert!((c.length(&s) - TAU).abs() < 1e-4);
        assert!((c.enclosed_area(&s, 0, c.len() - 1) - PI).abs() < 1e-3);
        let r = c.resample(&s, Some(300)).unwrap();
        assert!(r.spacing_ratio(&s) < 1.0 + 1e-6);
        assert_eq!(r.vertices[0], c.vertices[0]);
    }

    #[test]
    fn meridian_spans_both_poles() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        let m = DiscreteCurve::meridian(&s, 0.3, 0.01).unwrap();
        assert!((m.length(&s) - TAU).abs() < 1e-4);
        assert!(m.max_turning(&s) < 0.02);
        let p = DiscreteCurve::parallel(&s, 1.0, 0.01).unwrap();
        assert!((p.length(&s) - TAU * 1f64.sin()).abs() < 1e-4);
    }

    #[test]
    fn torus_lift_winds_once() {
        let s = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
        let c = DiscreteCurve::parallel(&s, PI, 0.05).unwrap();
        let l = c.lifted(&s);
        assert!((l.last().unwrap()[1] - l[0][1] - TAU).abs() < 1e-12);
    }
}
