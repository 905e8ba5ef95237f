//! Second variation along closed geodesics: normal monodromy, Floquet data,
//! Morse index and nullity by two independent discretizations, and the
//! local homology ranks of nondegenerate critical sets.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::closed::{ClosedGeodesic, Floquet};
use crate::error::{GeoError, Result};
use crate::geodesic::{flow_with_jacobi, propagate_through, CapRotor, FlowOptions};
use crate::ode::Tolerance;
use crate::profile::CapProfile;
use crate::surface::SurfaceModel;

/// Relative threshold below which an eigenvalue counts as zero.
pub const ZERO_REL: f64 = 1e-6;

/// Orthogonal scalar Jacobi data `(u, u')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobiState {
    pub u: f64,
    pub u_dot: f64,
}

/// Transfer matrix of `u'' + K u = 0` over one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Monodromy {
    /// Columns are the images of `(1, 0)` and `(0, 1)`.
    pub m: [[f64; 2]; 2],
    pub det: f64,
    pub trace: f64,
    pub floquet: Floquet,
    /// `dim ker(M - I)` with the shared zero tolerance.
    pub kernel_dim: usize,
    /// Largest distance of an eigenvalue from 1.
    pub eigen_gap_from_one: f64,
}

impl Monodromy {
    pub fn apply(&self, s: JacobiState) -> JacobiState {
        JacobiState { u: self.m[0][0] * s.u + self.m[0][1] * s.u_dot, u_dot: self.m[1][0] * s.u + self.m[1][1] * s.u_dot }
    }
}

/// Tight settings used for Jacobi transport.
pub fn jacobi_options() -> FlowOptions {
    FlowOptions { tol: Tolerance::new(1e-13, 1e-14), h_max: 0.02, min_time: 0.0 }
}

fn kernel_dim_2x2(a: [[f64; 2]; 2], scale: f64) -> usize {
    let m = nalgebra::Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
    let sv = m.singular_values();
    sv.iter().filter(|s| **s < ZERO_REL * scale).count()
}

pub fn monodromy_from_matrix(m: [[f64; 2]; 2]) -> Monodromy {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let trace = m[0][0] + m[1][1];
    let disc = 0.25 * trace * trace - det;
    let gap = if disc >= 0.0 {
        let r = disc.sqrt();
        (0.5 * trace + r - 1.0).abs().max((0.5 * trace - r - 1.0).abs())
    } else {
        ((0.5 * trace - 1.0).powi(2) - disc).sqrt()
    };
    let scale = m.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    Monodromy {
        m,
        det,
        trace,
        floquet: Floquet::from_trace(trace, 1e-9),
        kernel_dim: kernel_dim_2x2([[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]], scale),
        eigen_gap_from_one: gap,
    }
}

/// Monodromy of the normal Jacobi equation along a closed geodesic.
pub fn monodromy(surf: &SurfaceModel, gamma: &ClosedGeodesic) -> Result<Monodromy> {
    monodromy_with(surf, gamma, &jacobi_options())
}

pub fn monodromy_with(surf: &SurfaceModel, gamma: &ClosedGeodesic, opts: &FlowOptions) -> Result<Monodromy> {
    let (_, m) = flow_with_jacobi(surf, &gamma.start, gamma.length, opts)?;
    Ok(monodromy_from_matrix(m))
}

/// Outcome of the cap transfer identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferCheck {
    pub xi: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub t_exit: f64,
    pub transfer: [[f64; 2]; 2],
    pub residual: f64,
}

/// Compares the Jacobi transfer across a cap with
/// `[[-1, sin(xi) Theta'(xi)], [0, -1]]`.
pub fn cap_jacobi_transfer_check(rotor: &CapRotor, xi: f64) -> Result<TransferCheck> {
    let rot = rotor.rotation(xi)?;
    let theta_dot = rotor.derivative(xi)?;
    let (_, m) = flow_with_jacobi(rotor.surface(), &rotor.entry(xi), rot.t_exit, &jacobi_options())?;
    let expect = [[-1.0, xi.sin() * theta_dot], [0.0, -1.0]];
    let residual = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (m[i][j] - expect[i][j]).abs()).fold(0.0, f64::max);
    Ok(TransferCheck { xi, theta: rot.theta, theta_dot, t_exit: rot.t_exit, transfer: m, residual })
}

/// Convenience wrapper building the rotor from a cap.
pub fn cap_jacobi_transfer(cap: &Arc<CapProfile>, xi: f64) -> Result<TransferCheck> {
    cap_jacobi_transfer_check(&CapRotor::new(cap.clone())?, xi)
}

/// Index and nullity of the periodic form `int u'^2 - K u^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SturmLiouvilleIndex {
    pub index: usize,
    pub orth_nullity: usize,
    pub nullity: usize,
    /// An eigenvalue lies within a factor 10 of the zero threshold.
    pub ambiguous: bool,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub negative_modes: Vec<Vec<f64>>,
    #[serde(skip)]
    pub mass: Vec<[f64; 2]>,
}

const GAUSS3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Gaussian curvature along the loop at the 3-point Gauss nodes of `n` elements.
pub fn curvature_samples(surf: &SurfaceModel, gamma: &ClosedGeodesic, n: usize) -> Result<Vec<[f64; 3]>> {
    let h = gamma.length / n as f64;
    let mut times = Vec::with_capacity(3 * n);
    for e in 0..n {
        for (x, _) in GAUSS3 {
            times.push(h * (e as f64 + 0.5 + 0.5 * x));
        }
    }
    let states = propagate_through(surf, &gamma.start, &times, &FlowOptions::default())?;
    let ks: Vec<f64> = states.iter().map(|s| surf.curvature_unchecked(&s.base)).collect();
    Ok(ks.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Periodic P1 finite elements with 3-point Gauss quadrature.
pub fn index_sturm_liouville(surf: &SurfaceModel, gamma: &ClosedGeodesic, n_nodes: usize) -> Result<SturmLiouvilleIndex> {
    if n_nodes < 64 {
        return Err(GeoError::Precondition("index_sturm_liouville needs n_nodes >= 64".into()));
    }
    let ks = curvature_samples(surf, gamma, n_nodes)?;
    sturm_liouville_from_samples(gamma.length, &ks)
}

pub fn sturm_liouville_from_samples(length: f64, ks: &[[f64; 3]]) -> Result<SturmLiouvilleIndex> {
    let n = ks.len();
    let h = length / n as f64;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, n);
    for e in 0..n {
        let (i, j) = (e, (e + 1) % n);
        let mut kl = [[0.0; 2]; 2];
        let mut ml = [[0.0; 2]; 2];
        for (q, (x, w)) in GAUSS3.iter().enumerate() {
            let phi = [0.5 * (1.0 - x), 0.5 * (1.0 + x)];
            let wq = 0.5 * h * w;
            for p in 0..2 {
                for r in 0..2 {
                    ml[p][r] += wq * phi[p] * phi[r];
                    kl[p][r] += wq * ks[e][q] * phi[p] * phi[r];
                }
            }
        }
        let idx = [i, j];
        for p in 0..2 {
            for r in 0..2 {
                let stiff = if p == r { 1.0 / h } else { -1.0 / h };
                a[(idx[p], idx[r])] += stiff - kl[p][r];
                b[(idx[p], idx[r])] += ml[p][r];
            }
        }
    }
    let chol = Cholesky::new(b.clone()).ok_or_else(|| GeoError::Degenerate("mass matrix not positive".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| GeoError::Degenerate("mass factor singular".into()))?;
    let c = &linv * &a * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|x, y| eig.eigenvalues[*x].total_cmp(&eig.eigenvalues[*y]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let lmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = ZERO_REL * lmax;
    let index = vals.iter().filter(|v| **v < -tol).count();
    let orth = vals.iter().filter(|v| v.abs() <= tol).count();
    let ambiguous = vals.iter().any(|v| v.abs() > tol && v.abs() < 10.0 * tol);
    let lt = linv.transpose();
    let negative_modes = order[..index].iter().map(|&k| (&lt * eig.eigenvectors.column(k)).iter().cloned().collect()).collect();
    let mass = (0..n).map(|i| [b[(i, i)], b[(i, (i + 1) % n)]]).collect();
    Ok(SturmLiouvilleIndex { index, orth_nullity: orth, nullity: orth + 1, ambiguous, eigenvalues: vals, negative_modes, mass })
}

/// Index and nullity of the broken-geodesic Hessian with node 0 on a transversal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrokenIndex {
    pub k: usize,
    pub index: usize,
    pub nullity_constrained: usize,
    pub eigenvalues: Vec<f64>,
}

/// Hessian of `E_k` on broken geodesics with `k` equal segments, node 0
/// constrained to the orthogonal transversal through the start point.
pub fn index_broken(surf: &SurfaceModel, gamma: &ClosedGeodesic, k: usize) -> Result<BrokenIndex> {
    if k < 3 {
        return Err(GeoError::Precondition("index_broken needs k >= 3".into()));
    }
    let ell = gamma.length / k as f64;
    let rmax = surf.max_curvature();
    if rmax > 0.0 && ell >= std::f64::consts::PI / rmax.sqrt() {
        return Err(GeoError::Precondition(format!("segment length {ell:.4} exceeds the conjugate bound {:.4}", std::f64::consts::PI / rmax.sqrt())));
    }
    let opts = jacobi_options();
    let mut start = gamma.start;
    let mut blocks = Vec::with_capacity(k);
    for _ in 0..k {
        let (end, m) = flow_with_jacobi(surf, &start, ell, &opts)?;
        if !(m[0][1] > 0.0) {
            return Err(GeoError::Precondition("conjugate point inside a segment".into()));
        }
        blocks.push(m);
        start = end;
    }
    // tangential block: 2k times the cyclic Laplacian without node 0
    let kk = k as f64;
    let mut h = DMatrix::<f64>::zeros(2 * k - 1, 2 * k - 1);
    for i in 0..k {
        let j = (i + 1) % k;
        for (p, q, v) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
            if p != 0 && q != 0 {
                h[(p - 1, q - 1)] += 2.0 * kk * v;
            }
        }
    }
    // normal block: 2L sum (1/b) [[a, -1], [-1, d]] on (w_i, w_{i+1})
    let off = k - 1;
    for (i, m) in blocks.iter().enumerate() {
        let j = (i + 1) % k;
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        let s = 2.0 * gamma.length / b;
        h[(off + i, off + i)] += s * a;
        h[(off + j, off + j)] += s * d;
        h[(off + i, off + j)] -= s;
        h[(off + j, off + i)] -= s;
    }
    let eig = SymmetricEigen::new(h);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(f64::total_cmp);
    let lmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = ZERO_REL * lmax;
    Ok(BrokenIndex {
        k,
        index: vals.iter().filter(|v| **v < -tol).count(),
        nullity_constrained: vals.iter().filter(|v| v.abs() <= tol).count(),
        eigenvalues: vals,
    })
}

/// Shape of a nondegenerate critical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalSetKind {
    Point,
    /// Circle of critical points with orientable negative bundle.
    CircleOrientable,
}

/// Ranks of local homology in each degree.
pub fn local_homology_ranks(index: usize, nullity: usize, kind: CriticalSetKind) -> Result<Vec<(usize, usize)>> {
    match (kind, nullity) {
        (CriticalSetKind::Point, 1) => Ok(vec![(index, 1)]),
        (CriticalSetKind::CircleOrientable, 2) => Ok(vec![(index, 1), (index + 1, 1)]),
        _ => Err(GeoError::Precondition(format!("local homology formulas need a nondegenerate critical set, got nullity {nullity} for {kind:?}"))),
    }
}

/// Whether the negative eigenspace keeps its orientation when the loop is
/// shifted once around its period, one node at a time.
pub fn negative_bundle_orientable(sl: &SturmLiouvilleIndex) -> Option<bool> {
    let idx = sl.index;
    if idx == 0 {
        return Some(true);
    }
    let n = sl.mass.len();
    let modes = &sl.negative_modes;
    let inner = |u: &[f64], v: &[f64], shift: usize| -> f64 {
        // B-inner product of u with v shifted by `shift` nodes
        let mut s = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            let vi = v[(i + n - shift) % n];
            let vj = v[(j + n - shift) % n];
            s += sl.mass[i][0] * u[i] * vi + sl.mass[i][1] * (u[i] * vj + u[j] * vi);
        }
        s
    };
    let mut sign = 1.0;
    for step in 0..n {
        let mut o = DMatrix::<f64>::zeros(idx, idx);
        for a in 0..idx {
            for b in 0..idx {
                // modes at shift `step` against modes at shift `step + 1`
                let ua: Vec<f64> = (0..n).map(|i| modes[a][(i + n - step) % n]).collect();
                o[(a, b)] = inner(&ua, &modes[b], step + 1);
            }
        }
        let d = o.determinant();
        if d.abs() < 1e-3 {
            return None;
        }
        sign *= d.signum();
    }
    Some(sign > 0.0)
}

/// Full second-variation summary of a closed geodesic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub index: usize,
    pub nullity: usize,
    pub orth_nullity: usize,
    pub floquet_unstable: Option<f64>,
    pub hyperbolic: bool,
    pub method_agreement: bool,
    pub local_homology: Option<Vec<(usize, usize)>>,
    pub monodromy: Monodromy,
    pub sturm_liouville: SturmLiouvilleIndex,
    pub broken: Vec<BrokenIndex>,
    /// Hyperbolic orbits only: index parity matches the sign of `q`.
    pub parity_law: Option<bool>,
    pub orientable_negative_bundle: Option<bool>,
}

/// Runs both index methods and the monodromy on `gamma` and records the result on it.
pub fn analyze(surf: &SurfaceModel, gamma: &mut ClosedGeodesic, n_nodes: usize, ks: &[usize]) -> Result<IndexReport> {
    let mono = monodromy(surf, gamma)?;
    let sl = index_sturm_liouville(surf, gamma, n_nodes)?;
    let mut broken = Vec::new();
    for &k in ks {
        broken.push(index_broken(surf, gamma, k)?);
    }
    let method_agreement = broken.iter().all(|b| b.index == sl.index && b.nullity_constrained == sl.orth_nullity);
    let (floquet_unstable, hyperbolic) = match mono.floquet {
        Floquet::Hyperbolic { multiplier } => (Some(multiplier), true),
        _ => (None, false),
    };
    let parity_law = floquet_unstable.map(|q| (sl.index % 2 == 0) == (q > 0.0));
    let orientable = negative_bundle_orientable(&sl);
    let local_homology = if sl.nullity == 1 {
        local_homology_ranks(sl.index, 1, CriticalSetKind::Point).ok()
    } else if sl.nullity == 2 && orientable == Some(true) {
        local_homology_ranks(sl.index, 2, CriticalSetKind::CircleOrientable).ok()
    } else {
        None
    };
    gamma.index = Some(sl.index);
    gamma.nullity = Some(sl.nullity);
    gamma.floquet = Some(mono.floquet);
    gamma.nondegenerate = Some(sl.nullity == 1);
    Ok(IndexReport {
        index: sl.index,
        nullity: sl.nullity,
        orth_nullity: sl.orth_nullity,
        floquet_unstable,
        hyperbolic,
        method_agreement,
        local_homology,
        monodromy: mono,
        sturm_liouville: sl,
        broken,
        parity_law,
        orientable_negative_bundle: orientable,
    })
}
