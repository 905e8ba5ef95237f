//! Intersection combinatorics and flat-knot signatures.
//!
//! The signature (self-crossings, crossings with reference curves, homotopy
//! label, primitivity) is an invariant of the flat knot type, not a complete
//! classifier.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::curve::DiscreteCurve;
use crate::error::{GeoError, Result};
use crate::surface::{ChartPoint, SurfaceKind, SurfaceModel};

/// Crossings with `|sin angle|` below this are reported as grazing.
pub const TANGENCY_TOL: f64 = 1e-4;

/// Free homotopy label of a closed curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HomotopyLabel {
    Trivial,
    /// Homology class; on a torus of revolution `m` counts turns around the
    /// axis and `n` turns around the tube.
    Homology { m: i64, n: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlatKnotSignature {
    pub self_x: usize,
    pub ref_x: Vec<usize>,
    pub htpy: HomotopyLabel,
    pub primitive: bool,
}

/// One transverse crossing between segments `seg_a` and `seg_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub seg_a: usize,
    pub seg_b: usize,
    pub t: f64,
    pub u: f64,
    pub point: ChartPoint,
    pub sin_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub count: usize,
    pub crossings: Vec<Crossing>,
    /// Smallest `|sin angle|` over all crossings (1 when there are none).
    pub min_sin_angle: f64,
    /// Crossings below [`TANGENCY_TOL`]; included in `count`.
    pub grazing: usize,
    /// Number of jittered recounts needed to leave a degenerate configuration.
    pub jitter_retries: usize,
}

struct SegmentGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    boxes: Vec<([f64; 3], [f64; 3])>,
}

impl SegmentGrid {
    fn new(surf: &SurfaceModel, c: &DiscreteCurve, cell_hint: f64) -> Self {
        let n = c.len();
        let locs: Vec<[f64; 3]> = c.vertices.iter().map(|p| surf.locator(p)).collect();
        let boxes: Vec<([f64; 3], [f64; 3])> = (0..n)
            .map(|i| {
                let (a, b) = (locs[i], locs[(i + 1) % n]);
                // chords sag off the embedded surface; pad by half the extent
                let ext = (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max);
                let pad = 1e-9 + 0.5 * ext;
                (
                    [a[0].min(b[0]) - pad, a[1].min(b[1]) - pad, a[2].min(b[2]) - pad],
                    [a[0].max(b[0]) + pad, a[1].max(b[1]) + pad, a[2].max(b[2]) + pad],
                )
            })
            .collect();
        let longest = boxes.iter().map(|(lo, hi)| (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2])).fold(0.0, f64::max);
        let cell = longest.max(cell_hint).max(1e-6);
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, (lo, hi)) in boxes.iter().enumerate() {
            let (a, b) = (crate::geodesic::cell_of(*lo, cell), crate::geodesic::cell_of(*hi, cell));
            for x in a[0]..=b[0] {
                for y in a[1]..=b[1] {
                    for z in a[2]..=b[2] {
                        buckets.entry([x, y, z]).or_default().push(i);
                    }
                }
            }
        }
        Self { cell, buckets, boxes }
    }

    fn query(&self, lo: [f64; 3], hi: [f64; 3], out: &mut Vec<usize>) {
        out.clear();
        let (a, b) = (crate::geodesic::cell_of(lo, self.cell), crate::geodesic::cell_of(hi, self.cell));
        for x in a[0]..=b[0] {
            for y in a[1]..=b[1] {
                for z in a[2]..=b[2] {
                    if let Some(list) = self.buckets.get(&[x, y, z]) {
                        for &j in list {
                            let (l2, h2) = self.boxes[j];
                            if (0..3).all(|k| l2[k] <= hi[k] && lo[k] <= h2[k]) {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

enum SegTest {
    None,
    Hit(Crossing),
    Degenerate,
}

fn segment_test(surf: &SurfaceModel, a: &DiscreteCurve, i: usize, b: &DiscreteCurve, j: usize) -> SegTest {
    let base = a.vertices[i];
    let p0 = base.coords;
    let p1 = a.vertex_in(surf, a.next(i), i);
    let q0 = surf.to_chart(&b.vertices[j], base.chart, Some(p0)).coords;
    let q1 = surf.to_chart(&b.vertices[b.next(j)], base.chart, Some(q0)).coords;
    let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d2 = [q1[0] - q0[0], q1[1] - q0[1]];
    let w = [q0[0] - p0[0], q0[1] - p0[1]];
    let den = d1[0] * d2[1] - d1[1] * d2[0];
    let scale = (d1[0].abs() + d1[1].abs()) * (d2[0].abs() + d2[1].abs());
    if den.abs() <= 1e-14 * scale {
        let coll = (w[0] * d1[1] - w[1] * d1[0]).abs() <= 1e-14 * (d1[0].abs() + d1[1].abs()) * (w[0].abs() + w[1].abs() + 1e-300);
        return if coll && overlaps_1d(p0, p1, q0, q1) { SegTest::Degenerate } else { SegTest::None };
    }
    let t = (w[0] * d2[1] - w[1] * d2[0]) / den;
    let u = (w[0] * d1[1] - w[1] * d1[0]) / den;
    let eps = 1e-12;
    let near_end = |s: f64| s.abs() < eps || (s - 1.0).abs() < eps;
    if (-eps..1.0 + eps).contains(&t) && (-eps..1.0 + eps).contains(&u) && (near_end(t) || near_end(u)) {
        return SegTest::Degenerate;
    }
    if !((0.0..1.0).contains(&t) && (0.0..1.0).contains(&u)) {
        return SegTest::None;
    }
    let x = [p0[0] + t * d1[0], p0[1] + t * d1[1]];
    let point = ChartPoint::new(base.chart, x);
    let g = surf.metric_unchecked(&point);
    let sin_angle = (g.cross(d1, d2) / (g.norm(d1) * g.norm(d2))).abs();
    SegTest::Hit(Crossing { seg_a: i, seg_b: j, t, u, point, sin_angle })
}

fn overlaps_1d(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> bool {
    let axis = if (p1[0] - p0[0]).abs() >= (p1[1] - p0[1]).abs() { 0 } else { 1 };
    let (a0, a1) = (p0[axis].min(p1[axis]), p0[axis].max(p1[axis]));
    let (b0, b1) = (q0[axis].min(q1[axis]), q0[axis].max(q1[axis]));
    a0 <= b1 && b0 <= a1
}

/// Deterministic pseudo-random displacement of all vertices by `amp`.
fn jitter(surf: &SurfaceModel, c: &DiscreteCurve, round: u64, amp: f64) -> DiscreteCurve {
    let mut out = c.clone();
    for (k, v) in out.vertices.iter_mut().enumerate() {
        let mut h = (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ round.wrapping_mul(0xD1B5_4A32_D192_ED03);
        h ^= h >> 31;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 29;
        let ang = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
        let g = surf.metric_unchecked(v);
        let s = amp / g.g11.max(g.g22).sqrt().max(1e-300);
        v.coords[0] += s * ang.cos();
        v.coords[1] += s * ang.sin();
    }
    out
}

fn count_pairs(surf: &SurfaceModel, a: &DiscreteCurve, b: Option<&DiscreteCurve>) -> std::result::Result<Vec<Crossing>, ()> {
    let same = b.is_none();
    let other = b.unwrap_or(a);
    let grid = SegmentGrid::new(surf, other, 0.0);
    let own = if same { None } else { Some(SegmentGrid::new(surf, a, grid.cell)) };
    let boxes_a = own.as_ref().map_or(&grid.boxes, |g| &g.boxes);
    let n = a.len();
    let mut cands = Vec::new();
    let mut out = Vec::new();
    for i in 0..n {
        let (lo, hi) = boxes_a[i];
        grid.query(lo, hi, &mut cands);
        for &j in &cands {
            if same && (j <= i || j == i + 1 || (i == 0 && j == n - 1)) {
                continue;
            }
            match segment_test(surf, a, i, other, j) {
                SegTest::None => {}
                SegTest::Hit(c) => out.push(c),
                SegTest::Degenerate => return Err(()),
            }
        }
    }
    Ok(out)
}

fn report(crossings: Vec<Crossing>, retries: usize) -> IntersectionReport {
    let min_sin_angle = crossings.iter().map(|c| c.sin_angle).fold(1.0, f64::min);
    let grazing = crossings.iter().filter(|c| c.sin_angle < TANGENCY_TOL).count();
    IntersectionReport { count: crossings.len(), crossings, min_sin_angle, grazing, jitter_retries: retries }
}

fn with_jitter<F>(surf: &SurfaceModel, c: &DiscreteCurve, mut f: F) -> Result<IntersectionReport>
where
    F: FnMut(&DiscreteCurve) -> std::result::Result<Vec<Crossing>, ()>,
{
    if let Ok(x) = f(c) {
        return Ok(report(x, 0));
    }
    let h = c.length(surf) / c.len() as f64;
    for round in 1..=8u64 {
        let jc = jitter(surf, c, round, 1e-10 * h * round as f64);
        if let Ok(x) = f(&jc) {
            return Ok(report(x, round as usize));
        }
    }
    Err(GeoError::Degenerate("vertex-coincident crossing persists after jitter".into()))
}

/// Transverse self-crossings of a closed polygon.
pub fn self_intersections(surf: &SurfaceModel, c: &DiscreteCurve) -> Result<IntersectionReport> {
    with_jitter(surf, c, |cc| count_pairs(surf, cc, None))
}

/// Crossing counts of `c` with each reference curve.
pub fn link_intersections(surf: &SurfaceModel, c: &DiscreteCurve, refs: &[DiscreteCurve]) -> Result<Vec<IntersectionReport>> {
    refs.iter().map(|r| with_jitter(surf, c, |cc| count_pairs(surf, cc, Some(r)))).collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Whether the polygon traces some closed curve two or more times.
pub fn is_multiply_covered(surf: &SurfaceModel, c: &DiscreteCurve) -> bool {
    let chords = c.chords(surf);
    let total: f64 = chords.iter().sum();
    let mean = total / c.len() as f64;
    let mut cum = vec![0.0; c.len() + 1];
    for i in 0..c.len() {
        cum[i + 1] = cum[i] + chords[i];
    }
    let locs: Vec<[f64; 3]> = c.vertices.iter().map(|p| surf.locator(p)).collect();
    let at = |s: f64| -> [f64; 3] {
        let s = s.rem_euclid(total);
        let i = cum.partition_point(|v| *v <= s).saturating_sub(1).min(c.len() - 1);
        let u = if chords[i] > 0.0 { (s - cum[i]) / chords[i] } else { 0.0 };
        let (a, b) = (locs[i], locs[(i + 1) % c.len()]);
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])]
    };
    let tol = (2.0 * mean).max(1e-6 * total);
    (2..=6).any(|m| {
        (0..64).all(|q| {
            let s = total * q as f64 / 64.0;
            let (a, b) = (at(s), at(s + total / m as f64));
            crate::geodesic::seg_dist3(a, b, b) < tol
        })
    })
}

/// Homotopy label and primitivity.
pub fn homotopy_label(surf: &SurfaceModel, c: &DiscreteCurve) -> Result<(HomotopyLabel, bool)> {
    match surf.genus() {
        0 => Ok((HomotopyLabel::Trivial, !is_multiply_covered(surf, c))),
        1 => {
            let lift = c.lifted(surf);
            let per = surf.chart_periods(0);
            let d = [lift[lift.len() - 1][0] - lift[0][0], lift[lift.len() - 1][1] - lift[0][1]];
            let w0 = (d[0] / per[0].unwrap_or(f64::INFINITY)).round() as i64;
            let w1 = (d[1] / per[1].unwrap_or(f64::INFINITY)).round() as i64;
            let (m, n) = if revolution_torus(surf) { (w1, w0) } else { (w0, w1) };
            if m == 0 && n == 0 {
                return Ok((HomotopyLabel::Trivial, !is_multiply_covered(surf, c)));
            }
            Ok((HomotopyLabel::Homology { m, n }, gcd(m, n) == 1))
        }
        g => Err(GeoError::Unsupported(format!("homotopy labels for genus {g}"))),
    }
}

pub(crate) fn revolution_torus(surf: &SurfaceModel) -> bool {
    let mut s = surf.spec();
    loop {
        match s {
            crate::surface::SurfaceSpec::TorusOfRevolution { .. } => return true,
            crate::surface::SurfaceSpec::ConformalPerturbation { base, .. } => s = base,
            _ => return surf.kind() == SurfaceKind::TorusOfRevolution,
        }
    }
}

/// Signature together with the smallest crossing angle seen.
pub fn signature_detail(surf: &SurfaceModel, c: &DiscreteCurve, refs: &[DiscreteCurve]) -> Result<(FlatKnotSignature, f64)> {
    let own = self_intersections(surf, c)?;
    let links = link_intersections(surf, c, refs)?;
    let (htpy, primitive) = homotopy_label(surf, c)?;
    let min_sin = links.iter().map(|r| r.min_sin_angle).fold(own.min_sin_angle, f64::min);
    Ok((FlatKnotSignature { self_x: own.count, ref_x: links.iter().map(|r| r.count).collect(), htpy, primitive }, min_sin))
}

pub fn signature(surf: &SurfaceModel, c: &DiscreteCurve, refs: &[DiscreteCurve]) -> Result<FlatKnotSignature> {
    Ok(signature_detail(surf, c, refs)?.0)
}

/// Mod-2 intersection number of two classes.
pub fn intersection_parity(a: HomotopyLabel, b: HomotopyLabel) -> i64 {
    match (a, b) {
        (HomotopyLabel::Homology { m: m1, n: n1 }, HomotopyLabel::Homology { m: m2, n: n2 }) => (m1 * n2 - m2 * n1).rem_euclid(2),
        _ => 0,
    }
}

/// Checks that each `ref_x` has the parity forced by homology.
pub fn parity_consistent(sig: &FlatKnotSignature, ref_labels: &[HomotopyLabel]) -> bool {
    sig.ref_x.len() == ref_labels.len()
        && sig.ref_x.iter().zip(ref_labels).all(|(x, l)| (*x as i64).rem_euclid(2) == intersection_parity(sig.htpy, *l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn plane() -> SurfaceModel {
        SurfaceModel::flat_torus([20.0, 20.0]).unwrap()
    }

    fn figure_eight(s: &SurfaceModel) -> DiscreteCurve {
        DiscreteCurve::sampled(s, 0.01, |u| {
            let a = TAU * u;
            [10.0 + 2.0 * a.sin(), 10.0 + a.sin() * a.cos()]
        })
        .unwrap()
    }

    #[test]
    fn embedded_circle_and_figure_eight() {
        let s = plane();
        let c = DiscreteCurve::coordinate_circle(&s, [10.0, 10.0], [1.0, 1.0], 0.01).unwrap();
        assert_eq!(self_intersections(&s, &c).unwrap().count, 0);
        let f = figure_eight(&s);
        let r = self_intersections(&s, &f).unwrap();
        assert_eq!(r.count, 1);
        assert!(r.min_sin_angle > 0.5);
        let sig = signature(&s, &f, &[]).unwrap();
        assert_eq!(sig.self_x, 1);
        assert!(sig.ref_x.is_empty());
    }

    #[test]
    fn vertex_on_curve_is_resolved_by_jitter() {
        let s = plane();
        let a = DiscreteCurve::new(&s, vec![ChartPoint::new(0, [1.0, 1.0]), ChartPoint::new(0, [3.0, 1.0]), ChartPoint::new(0, [3.0, 3.0]), ChartPoint::new(0, [1.0, 3.0])], 1.0).unwrap();
        let b = DiscreteCurve::new(&s, vec![ChartPoint::new(0, [2.0, 1.0]), ChartPoint::new(0, [2.0, 0.0]), ChartPoint::new(0, [2.5, 0.0])], 1.0).unwrap();
        let r = &link_intersections(&s, &a, &[b]).unwrap()[0];
        assert_eq!(r.count % 2, 0);
        assert!(r.jitter_retries >= 1);
    }

    #[test]
    fn torus_classes() {
        let s = SurfaceModel::flat_torus([1.0, 1.0]).unwrap();
        let gen = DiscreteCurve::sampled(&s, 0.01, |u| [u, 0.3]).unwrap();
        assert_eq!(homotopy_label(&s, &gen).unwrap(), (HomotopyLabel::Homology { m: 1, n: 0 }, true));
        let dbl = DiscreteCurve::sampled(&s, 0.01, |u| [2.0 * u, 0.3]).unwrap();
        assert_eq!(homotopy_label(&s, &dbl).unwrap(), (HomotopyLabel::Homology { m: 2, n: 0 }, false));
        let small = DiscreteCurve::coordinate_circle(&s, [0.5, 0.5], [0.1, 0.1], 0.005).unwrap();
        assert_eq!(homotopy_label(&s, &small).unwrap(), (HomotopyLabel::Trivial, true));
    }

    #[test]
    fn torus_inner_equator_signature() {
        let s = SurfaceModel::torus_of_revolution(2.0, 1.0).unwrap();
        let inner = DiscreteCurve::parallel(&s, PI, 0.02).unwrap();
        let meridian = DiscreteCurve::sampled(&s, 0.02, |u| [TAU * u, 0.4]).unwrap();
        let sig = signature(&s, &inner, &[meridian]).unwrap();
        assert_eq!(sig, FlatKnotSignature { self_x: 0, ref_x: vec![1], htpy: HomotopyLabel::Homology { m: 1, n: 0 }, primitive: true });
        assert!(parity_consistent(&sig, &[HomotopyLabel::Homology { m: 0, n: 1 }]));
    }

    #[test]
    fn meridians_cross_at_poles() {
        let s = SurfaceModel::round_sphere(1.0).unwrap();
        let a = DiscreteCurve::meridian(&s, 0.0, 0.01).unwrap();
        let b = DiscreteCurve::meridian(&s, 1.0, 0.01).unwrap();
        let eq = DiscreteCurve::parallel(&s, PI / 2.0, 0.01).unwrap();
        let counts: Vec<usize> = link_intersections(&s, &a, &[b, eq]).unwrap().iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![2, 2]);
        let twice = DiscreteCurve::sampled(&s, 0.01, |u| [PI / 2.0, 2.0 * TAU * u]).unwrap();
        assert!(!homotopy_label(&s, &twice).unwrap().1);
        assert!(homotopy_label(&s, &a).unwrap().1);
    }
}
