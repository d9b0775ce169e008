//! Transfer-operator numerics on `ℙ(ℝ²)`.
//!
//! `P_z φ(x) = Σ pᵢ e^{zσ(gᵢ,x)} φ(gᵢx)` is discretized on the grid
//! `θ_j = jπ/N`, either by linear interpolation of `φ` at `gᵢx_j` (default)
//! or by Ulam-style cell averaging. The leading eigenpair comes from shifted
//! power iteration; `λ_μ` and `υ²` are finite differences of `log λ_z`.

use crate::error::{Error, Result};
use crate::geom::{act, cocycle_sigma, ProjectivePoint};
use crate::law::MatrixLaw;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

pub const DEFAULT_GRID: usize = 512;
pub const DEFAULT_H: f64 = 1e-3;
pub const EIG_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 10_000;
/// Power used by the imaginary spectral-radius estimate.
pub const RADIUS_POWER: usize = 64;
const SNAP: f64 = 1e-12;
const ULAM_SUBPOINTS: usize = 16;

/// Uniform grid `θ_j = jπ/N` on `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CircleGrid {
    n: usize,
}

impl CircleGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::InvalidArgument(format!(
                "grid needs N >= 16, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        PI / self.n as f64
    }

    pub fn angle(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn point(&self, j: usize) -> ProjectivePoint {
        ProjectivePoint::from_angle(self.angle(j))
    }

    /// Left node and fraction of an angle in `[0, π)`, with fractions within
    /// `1e-12` of a node snapped onto it.
    pub fn locate(&self, theta: f64) -> (usize, f64) {
        let u = theta.rem_euclid(PI) / self.spacing();
        let mut j = u.floor();
        let mut f = u - j;
        if f < SNAP {
            f = 0.0;
        } else if f > 1.0 - SNAP {
            f = 0.0;
            j += 1.0;
        }
        ((j as usize) % self.n, f)
    }

    /// Node nearest to an angle.
    pub fn nearest(&self, theta: f64) -> usize {
        let u = theta.rem_euclid(PI) / self.spacing();
        (u.round() as usize) % self.n
    }
}

/// How `φ(gᵢx)` is read off the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Discretization {
    #[default]
    Interpolation,
    Ulam,
}

/// Row-compressed complex matrix.
#[derive(Clone, Debug)]
pub struct SparseOp {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseOp {
    fn from_rows(rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(r.len());
            for (c, v) in r {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .filter(|(c, _)| **c == j)
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn is_real(&self) -> bool {
        self.vals.iter().all(|v| v.im == 0.0)
    }

    pub fn row_sums(&self) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    fn max_abs_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn mul_real(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *o = self.cols[r.clone()]
                .iter()
                .zip(&self.vals[r])
                .map(|(c, a)| a.re * v[*c])
                .sum();
        }
    }

    fn tmul_real(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, vi) in v.iter().enumerate() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[e]] += self.vals[e].re * vi;
            }
        }
    }

    fn mul_complex(&self, v: &[Complex64], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *o = self.cols[r.clone()]
                .iter()
                .zip(&self.vals[r])
                .map(|(c, a)| a * v[*c])
                .sum();
        }
    }

    fn tmul_complex(&self, v: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (i, vi) in v.iter().enumerate() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[e]] += self.vals[e] * vi;
            }
        }
    }

    /// `M · D` for a dense row-major `n × n` matrix `D`.
    fn mul_dense(&self, d: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (c, a) = (self.cols[e], self.vals[e]);
                row.iter_mut()
                    .zip(&d[c * n..(c + 1) * n])
                    .for_each(|(o, x)| *o += a * x);
            }
        }
    }
}

/// Leading eigenvalue with right eigenfunction and left eigenvector.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: Complex64,
    /// Normalized to `max |r_j| = 1`.
    pub right: Vec<Complex64>,
    /// Normalized to `Σ ℓ_j = 1` (to `Σ |ℓ_j| = 1` when that sum vanishes).
    pub left: Vec<Complex64>,
    pub iterations: usize,
}

/// A discretized `P_z` with its eigen-data once solved.
#[derive(Clone, Debug)]
pub struct SpectralModel {
    pub grid: CircleGrid,
    pub z: Complex64,
    pub op: SparseOp,
    pub eig: Option<EigenPair>,
}

/// Discretizes `P_z` by linear interpolation.
pub fn build_operator(law: &MatrixLaw, grid: &CircleGrid, z: Complex64) -> Result<SpectralModel> {
    build_operator_with(law, grid, z, Discretization::Interpolation)
}

pub fn build_operator_with(
    law: &MatrixLaw,
    grid: &CircleGrid,
    z: Complex64,
    disc: Discretization,
) -> Result<SpectralModel> {
    if law.dim() != 2 {
        return Err(Error::UnsupportedDim(law.dim()));
    }
    let atoms = law.scaled_support();
    let n = grid.len();
    let rows = (0..n)
        .map(|j| {
            let mut row = Vec::new();
            for (g, p) in atoms.iter().zip(law.probs()) {
                match disc {
                    Discretization::Interpolation => {
                        let x = grid.point(j);
                        let w = *p * (z * cocycle_sigma(g, &x)).exp();
                        let (k, f) = grid.locate(act(g, &x).angle());
                        row.push((k, w * (1.0 - f)));
                        if f > 0.0 {
                            row.push(((k + 1) % n, w * f));
                        }
                    }
                    Discretization::Ulam => {
                        for s in 0..ULAM_SUBPOINTS {
                            let off = (s as f64 + 0.5) / ULAM_SUBPOINTS as f64 - 0.5;
                            let x =
                                ProjectivePoint::from_angle(grid.angle(j) + off * grid.spacing());
                            let w = *p * (z * cocycle_sigma(g, &x)).exp() / ULAM_SUBPOINTS as f64;
                            row.push((grid.nearest(act(g, &x).angle()), w));
                        }
                    }
                }
            }
            row
        })
        .collect();
    Ok(SpectralModel {
        grid: *grid,
        z,
        op: SparseOp::from_rows(rows),
        eig: None,
    })
}

fn normalize_inf(v: &mut [f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
    m
}

/// Shifted power iteration `v ← (M + s)v` for a real operator.
fn power_real(
    n: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    shift: f64,
) -> Result<(f64, Vec<f64>, usize)> {
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut lambda = f64::NAN;
    for it in 1..=MAX_ITERATIONS {
        apply(&v, &mut w);
        w.iter_mut().zip(&v).for_each(|(a, b)| *a += shift * b);
        let m = normalize_inf(&mut w);
        let new_lambda = m - shift;
        let dv = v
            .iter()
            .zip(&w)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        std::mem::swap(&mut v, &mut w);
        let dl = (new_lambda - lambda).abs();
        lambda = new_lambda;
        if dl <= EIG_TOL * lambda.abs().max(f64::MIN_POSITIVE) && dv <= EIG_TOL {
            return Ok((lambda, v, it));
        }
    }
    Err(Error::NoGap {
        iterations: MAX_ITERATIONS,
    })
}

fn normalize_complex(v: &mut [Complex64]) -> Complex64 {
    let (k, _) = v.iter().enumerate().fold((0, 0.0f64), |(bk, bm), (k, x)| {
        if x.norm() > bm {
            (k, x.norm())
        } else {
            (bk, bm)
        }
    });
    let pivot = v[k];
    if pivot.norm() > 0.0 {
        v.iter_mut().for_each(|x| *x /= pivot);
    }
    pivot
}

fn power_complex(
    n: usize,
    apply: impl Fn(&[Complex64], &mut [Complex64]),
) -> Result<(Complex64, Vec<Complex64>, usize)> {
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut lambda = Complex64::new(f64::NAN, 0.0);
    for it in 1..=MAX_ITERATIONS {
        apply(&v, &mut w);
        // eigenvalue estimate at the pivot of the previous iterate
        let new_lambda = normalize_complex(&mut w);
        let dv = v
            .iter()
            .zip(&w)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()));
        std::mem::swap(&mut v, &mut w);
        let dl = (new_lambda - lambda).norm();
        lambda = new_lambda;
        if dl <= EIG_TOL * lambda.norm().max(f64::MIN_POSITIVE) && dv <= EIG_TOL {
            return Ok((lambda, v, it));
        }
    }
    Err(Error::NoGap {
        iterations: MAX_ITERATIONS,
    })
}

fn normalize_left(left: &mut [Complex64]) {
    let s: Complex64 = left.iter().sum();
    let d = if s.norm() > 1e-300 {
        s
    } else {
        Complex64::new(left.iter().map(|x| x.norm()).sum(), 0.0)
    };
    left.iter_mut().for_each(|x| *x /= d);
}

/// Leading eigenpair of the discretized operator.
pub fn leading_eig(model: &mut SpectralModel) -> Result<EigenPair> {
    let op = &model.op;
    let n = op.dim();
    let pair = if op.is_real() {
        let shift = op.max_abs_row_sum();
        let (lambda, right, it_r) = power_real(n, |v, o| op.mul_real(v, o), shift)?;
        let (_, left, it_l) = power_real(n, |v, o| op.tmul_real(v, o), shift)?;
        let mut left: Vec<Complex64> = left.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        normalize_left(&mut left);
        EigenPair {
            lambda: Complex64::new(lambda, 0.0),
            right: right.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            left,
            iterations: it_r.max(it_l),
        }
    } else {
        let (lambda, right, it_r) = power_complex(n, |v, o| op.mul_complex(v, o))?;
        let (_, mut left, it_l) = power_complex(n, |v, o| op.tmul_complex(v, o))?;
        normalize_left(&mut left);
        EigenPair {
            lambda,
            right,
            left,
            iterations: it_r.max(it_l),
        }
    };
    model.eig = Some(pair.clone());
    Ok(pair)
}

fn real_lambda(law: &MatrixLaw, grid: &CircleGrid, z: f64, disc: Discretization) -> Result<f64> {
    let mut m = build_operator_with(law, grid, Complex64::new(z, 0.0), disc)?;
    Ok(leading_eig(&mut m)?.lambda.re)
}

/// `(λ_μ, υ²)` from central differences of `log λ_z` at `z = ±h`.
pub fn lyapunov_and_variance(law: &MatrixLaw, grid: &CircleGrid, h: f64) -> Result<(f64, f64)> {
    lyapunov_and_variance_with(law, grid, h, Discretization::Interpolation)
}

pub fn lyapunov_and_variance_with(
    law: &MatrixLaw,
    grid: &CircleGrid,
    h: f64,
    disc: Discretization,
) -> Result<(f64, f64)> {
    if !(1e-4..=1e-2).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "h must lie in [1e-4, 1e-2], got {h}"
        )));
    }
    let lp = real_lambda(law, grid, h, disc)?.ln();
    let l0 = real_lambda(law, grid, 0.0, disc)?.ln();
    let lm = real_lambda(law, grid, -h, disc)?.ln();
    Ok((
        (lp - lm) / (2.0 * h),
        ((lp - 2.0 * l0 + lm) / (h * h)).max(0.0),
    ))
}

/// Discretized stationary measure `ν̂` (left eigenvector of `M₀`), clipped at
/// zero and renormalized.
pub fn stationary_weights(law: &MatrixLaw, grid: &CircleGrid) -> Result<Vec<f64>> {
    let mut m = build_operator(law, grid, Complex64::new(0.0, 0.0))?;
    let eig = leading_eig(&mut m)?;
    let mut w: Vec<f64> = eig.left.iter().map(|c| c.re.max(0.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// `‖M_{it}^{64}‖_∞^{1/64}` for each `t`.
pub fn imaginary_spectral_radius(
    law: &MatrixLaw,
    grid: &CircleGrid,
    t_values: &[f64],
) -> Result<Vec<f64>> {
    t_values
        .iter()
        .map(|&t| {
            let m = build_operator(law, grid, Complex64::new(0.0, t))?;
            Ok(power_norm_root(&m.op, RADIUS_POWER))
        })
        .collect()
}

fn power_norm_root(op: &SparseOp, k: usize) -> f64 {
    let n = op.dim();
    let mut d = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        d[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let mut out = d.clone();
    // keep the running product bounded; track the scale in logs
    let mut log_scale = 0.0;
    for _ in 0..k {
        op.mul_dense(&d, &mut out);
        std::mem::swap(&mut d, &mut out);
        let norm = inf_norm(&d, n);
        if norm > 0.0 {
            d.iter_mut().for_each(|x| *x /= norm);
            log_scale += norm.ln();
        } else {
            return 0.0;
        }
    }
    (log_scale / k as f64).exp()
}

fn inf_norm(d: &[Complex64], n: usize) -> f64 {
    (0..n)
        .map(|i| d[i * n..(i + 1) * n].iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Modulus of the second eigenvalue of `M₀`, from deflated power iteration.
pub fn subleading_modulus(model: &SpectralModel, eig: &EigenPair, iterations: usize) -> f64 {
    let n = model.op.dim();
    let r: Vec<f64> = eig.right.iter().map(|c| c.re).collect();
    let l: Vec<f64> = eig.left.iter().map(|c| c.re).collect();
    let lr: f64 = l.iter().zip(&r).map(|(a, b)| a * b).sum();
    let lambda = eig.lambda.re;
    let deflate = |v: &mut [f64]| {
        let c = l.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / lr;
        v.iter_mut().zip(&r).for_each(|(x, y)| *x -= c * y);
    };
    // deterministic start vector with no symmetry
    let mut v: Vec<f64> = (0..n)
        .map(|j| (j as f64 * 0.754_877_666).fract() - 0.5)
        .collect();
    deflate(&mut v);
    normalize_inf(&mut v);
    let mut w = vec![0.0; n];
    let mut logs = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        model.op.mul_real(&v, &mut w);
        deflate(&mut w);
        let m = normalize_inf(&mut w);
        if m == 0.0 {
            return 0.0;
        }
        logs.push(m.ln());
        std::mem::swap(&mut v, &mut w);
    }
    let tail = &logs[logs.len() / 2..];
    (tail.iter().sum::<f64>() / tail.len() as f64).exp() / lambda
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralDiagnostics {
    pub grid_n: usize,
    pub h: f64,
    pub discretization: Discretization,
    pub lambda_0: f64,
    pub max_row_sum_error: f64,
    pub stationarity_l1: f64,
    pub min_left_weight: f64,
    pub iterations: usize,
    pub lambda_mu_double_grid: f64,
    pub richardson_gap: f64,
    pub subleading_ratio: f64,
}

/// Everything the `spectral` command reports.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralSummary {
    pub lambda_mu: f64,
    pub upsilon_sq: f64,
    pub nu_weights: Vec<f64>,
    pub diagnostics: SpectralDiagnostics,
}

pub fn spectral_summary(
    law: &MatrixLaw,
    grid: &CircleGrid,
    h: f64,
    disc: Discretization,
) -> Result<SpectralSummary> {
    let (lambda_mu, upsilon_sq) = lyapunov_and_variance_with(law, grid, h, disc)?;
    let double = CircleGrid::new(2 * grid.len())?;
    let (lambda_mu_2, _) = lyapunov_and_variance_with(law, &double, h, disc)?;
    let mut m = build_operator_with(law, grid, Complex64::new(0.0, 0.0), disc)?;
    let eig = leading_eig(&mut m)?;
    let row_err =
        m.op.row_sums()
            .iter()
            .fold(0.0f64, |a, s| a.max((s - 1.0).norm()));
    let left: Vec<f64> = eig.left.iter().map(|c| c.re).collect();
    let min_left = left.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let nu_weights = stationary_weights(law, grid)?;
    let mut nu_m = vec![0.0; grid.len()];
    m.op.tmul_real(&nu_weights, &mut nu_m);
    let stationarity: f64 = nu_m
        .iter()
        .zip(&nu_weights)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let subleading = subleading_modulus(&m, &eig, 400);
    Ok(SpectralSummary {
        lambda_mu,
        upsilon_sq,
        nu_weights,
        diagnostics: SpectralDiagnostics {
            grid_n: grid.len(),
            h,
            discretization: disc,
            lambda_0: eig.lambda.re,
            max_row_sum_error: row_err,
            stationarity_l1: stationarity,
            min_left_weight: min_left,
            iterations: eig.iterations,
            lambda_mu_double_grid: lambda_mu_2,
            richardson_gap: (lambda_mu - lambda_mu_2).abs(),
            subleading_ratio: subleading,
        },
    })
}

/// Wasserstein-1 distance on the circle `ℝ/πℤ` between two weight vectors on
/// the same grid.
pub fn circle_w1(a: &[f64], b: &[f64], spacing: f64) -> f64 {
    let mut acc = 0.0;
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            acc += x - y;
            acc
        })
        .collect();
    let mut sorted = diffs.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = sorted[sorted.len() / 2];
    diffs.iter_mut().map(|d| (*d - median).abs()).sum::<f64>() * spacing
}
