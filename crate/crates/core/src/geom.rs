//! Linear algebra and projective geometry on `ℝ^d` and its dual.
//!
//! Points of the projective space are stored as unit vectors whose first
//! non-negligible coordinate is positive, so that two representatives of the
//! same line compare equal coordinate-wise. The dual space is identified with
//! `ℝ^d` through the Euclidean inner product; a matrix `g` then acts on dual
//! lines through its inverse transpose.

use crate::error::{Error, Result};
use std::fmt;

/// Coordinates below this magnitude are skipped when fixing the sign of a
/// canonical representative.
const CANON_EPS: f64 = 1e-12;

/// Relative tolerance on `|det|` below which a matrix is rejected as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// `|φ(v)|` at or below this value (unit vectors) puts a pair outside `Δ`.
pub const GENERAL_POSITION_TOL: f64 = 1e-14;

/// An invertible real `d × d` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.entries.chunks(self.dim).collect();
        f.debug_struct("SquareMatrix").field("rows", &rows).finish()
    }
}

impl SquareMatrix {
    /// Builds a matrix from row-major entries, rejecting singular input.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidMatrix(format!(
                "dimension must be >= 2, got {dim}"
            )));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for d = {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidMatrix(format!("non-finite entry {bad}")));
        }
        let m = Self { dim, entries };
        let scale = m.entries.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
        let det = m.det();
        if scale == 0.0 || det.abs() <= SINGULAR_TOL * scale.powi(dim as i32) {
            return Err(Error::Singular { det, scale });
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix("rows must form a square array".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `c · I`; `c` must be non-zero.
    pub fn scalar(dim: usize, c: f64) -> Self {
        assert!(
            c != 0.0 && c.is_finite(),
            "scalar matrix needs a finite non-zero factor"
        );
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = c;
        }
        Self { dim, entries }
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let dim = values.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, v) in values.iter().enumerate() {
            entries[i * dim + i] = *v;
        }
        Self::new(dim, entries)
    }

    /// Rotation of the plane by `angle` radians.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            dim: 2,
            entries: vec![c, -s, s, c],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn mul(&self, rhs: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                for j in 0..d {
                    out[i * d + j] += a * rhs.entries[k * d + j];
                }
            }
        }
        SquareMatrix {
            dim: d,
            entries: out,
        }
    }

    pub fn scaled(&self, c: f64) -> SquareMatrix {
        SquareMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|e| e * c).collect(),
        }
    }

    pub fn transpose(&self) -> SquareMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[j * d + i] = self.entries[i * d + j];
            }
        }
        SquareMatrix {
            dim: d,
            entries: out,
        }
    }

    /// Matrix-vector product `g v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.dim, "vector dimension differs from matrix");
        for (row, o) in self.entries.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn det(&self) -> f64 {
        let d = self.dim;
        let e = &self.entries;
        match d {
            2 => e[0] * e[3] - e[1] * e[2],
            3 => {
                e[0] * (e[4] * e[8] - e[5] * e[7]) - e[1] * (e[3] * e[8] - e[5] * e[6])
                    + e[2] * (e[3] * e[7] - e[4] * e[6])
            }
            _ => match lu_decompose(d, e) {
                Some(lu) => lu.det(),
                None => 0.0,
            },
        }
    }

    /// Inverse by adjugate for `d ≤ 3` and LU with partial pivoting above.
    pub fn inverse(&self) -> SquareMatrix {
        let d = self.dim;
        let e = &self.entries;
        let det = self.det();
        let entries = match d {
            2 => vec![e[3] / det, -e[1] / det, -e[2] / det, e[0] / det],
            3 => {
                let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
                    e[r0 * 3 + c0] * e[r1 * 3 + c1] - e[r0 * 3 + c1] * e[r1 * 3 + c0]
                };
                // adj[i][j] = cofactor[j][i]
                vec![
                    cof(1, 2, 1, 2) / det,
                    -cof(0, 2, 1, 2) / det,
                    cof(0, 1, 1, 2) / det,
                    -cof(1, 2, 0, 2) / det,
                    cof(0, 2, 0, 2) / det,
                    -cof(0, 1, 0, 2) / det,
                    cof(1, 2, 0, 1) / det,
                    -cof(0, 2, 0, 1) / det,
                    cof(0, 1, 0, 1) / det,
                ]
            }
            _ => {
                let lu = lu_decompose(d, e).expect("invertible by construction");
                let mut inv = vec![0.0; d * d];
                let mut col = vec![0.0; d];
                for j in 0..d {
                    col.iter_mut().for_each(|c| *c = 0.0);
                    col[j] = 1.0;
                    lu.solve_in_place(&mut col);
                    for i in 0..d {
                        inv[i * d + j] = col[i];
                    }
                }
                inv
            }
        };
        SquareMatrix { dim: d, entries }
    }

    /// `(g⁻¹)ᵀ`, the matrix of the dual action in Euclidean coordinates.
    pub fn inverse_transpose(&self) -> SquareMatrix {
        self.inverse().transpose()
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let gram = self.transpose().mul(self);
        let mut ev = symmetric_eigenvalues(self.dim, gram.entries);
        ev.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    /// Operator norm induced by the Euclidean norm.
    pub fn op_norm(&self) -> f64 {
        if self.dim == 2 {
            let e = &self.entries;
            let f = e.iter().map(|x| x * x).sum::<f64>();
            let det = self.det();
            let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
            return ((f + disc) / 2.0).sqrt();
        }
        self.singular_values()[0]
    }

    /// `log max{‖g‖, ‖g⁻¹‖}`, the bound on `|σ(g, ·)|`.
    pub fn log_norm_bound(&self) -> f64 {
        self.op_norm().max(self.inverse().op_norm()).ln()
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

struct Lu {
    dim: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    fn det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lu[i * self.dim + i])
            .product::<f64>()
            * self.sign
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let d = self.dim;
        let pb: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&pb);
        for i in 0..d {
            for k in 0..i {
                b[i] -= self.lu[i * d + k] * b[k];
            }
        }
        for i in (0..d).rev() {
            for k in i + 1..d {
                b[i] -= self.lu[i * d + k] * b[k];
            }
            b[i] /= self.lu[i * d + i];
        }
    }
}

fn lu_decompose(d: usize, a: &[f64]) -> Option<Lu> {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut sign = 1.0;
    for k in 0..d {
        let (p, pivot) = (k..d)
            .map(|i| (i, lu[i * d + k].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if pivot == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..d {
                lu.swap(k * d + j, p * d + j);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..d {
            let f = lu[i * d + k] / lu[k * d + k];
            lu[i * d + k] = f;
            for j in k + 1..d {
                lu[i * d + j] -= f * lu[k * d + j];
            }
        }
    }
    Some(Lu {
        dim: d,
        lu,
        perm,
        sign,
    })
}

/// Cyclic Jacobi sweeps on a symmetric matrix.
fn symmetric_eigenvalues(d: usize, mut a: Vec<f64>) -> Vec<f64> {
    for _ in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum();
        let diag: f64 = (0..d).map(|i| a[i * d + i] * a[i * d + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalizes `v` in place and flips it so that the first coordinate above
/// `CANON_EPS` is positive.
pub(crate) fn canonicalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
    if let Some(lead) = v.iter().find(|x| x.abs() > CANON_EPS) {
        if *lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn canonical_unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "dimension must be >= 2, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite coordinate".into()));
    }
    if norm(&v) == 0.0 {
        return Err(Error::ZeroVector);
    }
    canonicalize(&mut v);
    Ok(v)
}

/// A line `ℝv` in `ℝ^d`, stored as its canonical unit representative.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectivePoint {
    vec: Vec<f64>,
}

/// A line `ℝφ` in the dual space, in Euclidean coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProjectivePoint {
    vec: Vec<f64>,
}

macro_rules! line_impl {
    ($t:ty) => {
        impl $t {
            pub fn new(v: Vec<f64>) -> Result<Self> {
                Ok(Self {
                    vec: canonical_unit(v)?,
                })
            }

            /// Span of the `i`-th standard basis vector.
            pub fn basis(dim: usize, i: usize) -> Self {
                let mut vec = vec![0.0; dim];
                vec[i] = 1.0;
                Self { vec }
            }

            /// Line at angle `theta` in the plane.
            pub fn from_angle(theta: f64) -> Self {
                let mut vec = vec![theta.cos(), theta.sin()];
                canonicalize(&mut vec);
                Self { vec }
            }

            pub(crate) fn from_unit_unchecked(mut vec: Vec<f64>) -> Self {
                canonicalize(&mut vec);
                Self { vec }
            }

            pub fn dim(&self) -> usize {
                self.vec.len()
            }

            pub fn vec(&self) -> &[f64] {
                &self.vec
            }

            /// Angle in `[0, π)` of a planar line.
            pub fn angle(&self) -> f64 {
                assert_eq!(self.vec.len(), 2, "angle is only defined for d = 2");
                let a = self.vec[1].atan2(self.vec[0]);
                a.rem_euclid(std::f64::consts::PI)
            }
        }
    };
}

line_impl!(ProjectivePoint);
line_impl!(DualProjectivePoint);

fn check_dims(g: &SquareMatrix, d: usize) {
    assert_eq!(g.dim(), d, "matrix and point dimensions differ");
}

/// `g · ℝv = ℝ(gv)`.
pub fn act(g: &SquareMatrix, x: &ProjectivePoint) -> ProjectivePoint {
    check_dims(g, x.dim());
    ProjectivePoint::from_unit_unchecked(g.apply(&x.vec))
}

/// Norm cocycle `σ(g, x) = log(‖gv‖ / ‖v‖)`.
pub fn cocycle_sigma(g: &SquareMatrix, x: &ProjectivePoint) -> f64 {
    check_dims(g, x.dim());
    norm(&g.apply(&x.vec)).ln()
}

/// Dual action `gφ = φ ∘ g⁻¹`, i.e. `(g⁻¹)ᵀ` in coordinates.
pub fn dual_act(g: &SquareMatrix, y: &DualProjectivePoint) -> DualProjectivePoint {
    check_dims(g, y.dim());
    DualProjectivePoint::from_unit_unchecked(g.inverse_transpose().apply(&y.vec))
}

/// Dual cocycle `σ*(g, y) = log(‖gφ‖ / ‖φ‖)`.
pub fn cocycle_sigma_star(g: &SquareMatrix, y: &DualProjectivePoint) -> f64 {
    check_dims(g, y.dim());
    norm(&g.inverse_transpose().apply(&y.vec)).ln()
}

/// `d(x, x') = ‖v ∧ w‖ / (‖v‖ ‖w‖)`, in `[0, 1]`.
pub fn proj_distance(x: &ProjectivePoint, x2: &ProjectivePoint) -> f64 {
    assert_eq!(x.dim(), x2.dim(), "point dimensions differ");
    wedge_norm(&x.vec, &x2.vec).min(1.0)
}

pub(crate) fn wedge_norm(v: &[f64], w: &[f64]) -> f64 {
    let d = v.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            let m = v[i] * w[j] - v[j] * w[i];
            s += m * m;
        }
    }
    s.sqrt()
}

/// `δ(x, y) = −log(|φ(v)| / (‖φ‖‖v‖))`, finite on `Δ`.
pub fn delta(x: &ProjectivePoint, y: &DualProjectivePoint) -> Result<f64> {
    assert_eq!(x.dim(), y.dim(), "point dimensions differ");
    delta_raw(&x.vec, &y.vec)
}

/// `δ` on unit representatives.
pub(crate) fn delta_raw(v: &[f64], phi: &[f64]) -> Result<f64> {
    let pairing = dot(v, phi).abs();
    if pairing <= GENERAL_POSITION_TOL {
        return Err(Error::NotInGeneralPosition { pairing });
    }
    Ok(-pairing.min(1.0).ln())
}

/// `d(x, x')^γ`, a Hölder-scale diagnostic; `γ` is user chosen.
pub fn holder_distance(x: &ProjectivePoint, x2: &ProjectivePoint, gamma: f64) -> f64 {
    proj_distance(x, x2).powf(gamma)
}

pub const DEFAULT_HOLDER_EXPONENT: f64 = 0.5;
