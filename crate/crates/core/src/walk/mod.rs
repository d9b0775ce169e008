//! Forward simulation of `S_n = σ(g_n⋯g₁, x)`, exit times, and Monte Carlo
//! estimators, plus an exact enumeration oracle for short walks.
//!
//! Path `p` of an ensemble is driven by the random stream `(seed, p)` and
//! consumes exactly one draw per step, so every estimator sharing a seed sees
//! the same paths.

pub(crate) mod engine;
mod enumerate;
pub(crate) mod kernel;
mod schedule;
mod target;

#[cfg(test)]
pub(crate) use enumerate::for_each_word;
pub use enumerate::{enumerate_exact, enumerate_moments, PathView, ENUMERATION_CAP};
pub use schedule::{estimate_schedule, ScheduleRow, MAX_TAIL};
pub use target::{Piece, ProductTarget, StepFunction, SumTarget, TGrid, TargetFunction};

use crate::error::{Error, Result};
use crate::geom::{canonicalize, ProjectivePoint};
use crate::law::MatrixLaw;
use crate::rng::SamplerState;
use crate::stats::{KahanSum, Moments};
use engine::{merge_moments, run_chunked};
use kernel::{Cursor, Kernel};
use serde::Serialize;
use std::collections::BTreeMap;

/// Largest `|λ̂|` accepted by [`estimate_v`].
pub const CENTERING_TOL: f64 = 1e-3;

/// Ratio of the last-node integrand to its peak above which a ρ-integral grid
/// is rejected.
pub const GRID_TAIL_TOL: f64 = 1e-3;

/// Which walk is killed: `t + S_k` (`Plus`) or `t − S_k` (`Minus`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `Strict` kills on `t + sign·S_k < 0`, `Large` on `≤ 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Inequality {
    #[default]
    Strict,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitTime {
    Exited(usize),
    Survived,
}

#[inline]
pub(crate) fn killed(v: f64, ineq: Inequality) -> bool {
    match ineq {
        Inequality::Strict => v < 0.0,
        Inequality::Large => v <= 0.0,
    }
}

/// First `k` (1-based) with `t + sign·sums[k-1]` killed.
pub(crate) fn exit_time_of(t: f64, sums: &[f64], sign: Sign, ineq: Inequality) -> ExitTime {
    sums.iter()
        .position(|s| killed(t + sign.value() * s, ineq))
        .map_or(ExitTime::Survived, |k| ExitTime::Exited(k + 1))
}

/// One trajectory of length `n`.
#[derive(Clone, Debug)]
pub struct WalkPath {
    pub start: ProjectivePoint,
    /// `increments[k-1] = σ(g_k, g_{k-1}⋯g₁x)`.
    pub increments: Vec<f64>,
    /// `prefix_sums[k] = S_k`, with `prefix_sums[0] = 0`.
    pub prefix_sums: Vec<f64>,
    /// `running_min[k] = min_{1≤i≤k} S_i`; `running_min[0]` is `+∞`.
    pub running_min: Vec<f64>,
    pub end_point: ProjectivePoint,
}

impl WalkPath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

/// Simulates `n` steps from `x`, drawing one uniform per step from `s`.
pub fn simulate_path(
    law: &MatrixLaw,
    x: &ProjectivePoint,
    n: usize,
    s: &mut SamplerState,
) -> WalkPath {
    assert_eq!(law.dim(), x.dim(), "law and point dimensions differ");
    let kernel = Kernel::new(law);
    let mut v = x.vec().to_vec();
    let mut next = v.clone();
    let mut increments = Vec::with_capacity(n);
    let mut prefix_sums = Vec::with_capacity(n + 1);
    let mut running_min = Vec::with_capacity(n + 1);
    prefix_sums.push(0.0);
    running_min.push(f64::INFINITY);
    let mut acc = KahanSum::default();
    for _ in 0..n {
        let i = law.sample_index(s);
        let inc = kernel.one_step(i, &v, &mut next);
        std::mem::swap(&mut v, &mut next);
        acc.add(inc);
        increments.push(inc);
        prefix_sums.push(acc.value());
        let m = running_min.last().copied().unwrap_or(f64::INFINITY);
        running_min.push(m.min(acc.value()));
    }
    canonicalize(&mut v);
    WalkPath {
        start: x.clone(),
        increments,
        prefix_sums,
        running_min,
        end_point: ProjectivePoint::from_unit_unchecked(v),
    }
}

/// Smallest `k ≥ 1` with `t + sign·S_k < 0`.
pub fn first_exit_time(path: &WalkPath, t: f64, sign: Sign) -> ExitTime {
    first_exit_time_with(path, t, sign, Inequality::Strict)
}

pub fn first_exit_time_with(path: &WalkPath, t: f64, sign: Sign, ineq: Inequality) -> ExitTime {
    exit_time_of(t, &path.prefix_sums[1..], sign, ineq)
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
}

impl EstimateWithCI {
    pub fn from_moments(m: &Moments, seed: u64) -> Self {
        Self {
            value: m.mean(),
            stderr: m.stderr(),
            n_samples: m.count,
            seed,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }
}

/// Ensemble parameters shared by the estimators.
#[derive(Clone, Debug)]
pub struct WalkConfig {
    pub x: ProjectivePoint,
    pub n: usize,
    pub paths: u64,
    pub seed: u64,
    pub sign: Sign,
    pub inequality: Inequality,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
}

impl WalkConfig {
    pub fn new(x: ProjectivePoint, n: usize, paths: u64, seed: u64) -> Self {
        Self {
            x,
            n,
            paths,
            seed,
            sign: Sign::Plus,
            inequality: Inequality::Strict,
            workers: 0,
        }
    }

    pub fn sign(mut self, sign: Sign) -> Self {
        self.sign = sign;
        self
    }

    pub fn inequality(mut self, ineq: Inequality) -> Self {
        self.inequality = ineq;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self, law: &MatrixLaw) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::InvalidArgument("paths must be >= 1".into()));
        }
        if self.x.dim() != law.dim() {
            return Err(Error::DimensionMismatch {
                expected: law.dim(),
                got: self.x.dim(),
            });
        }
        Ok(())
    }
}

/// Whether the caller has checked that the law has zero Lyapunov exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Centering {
    /// Carries the measured `λ̂`.
    Verified(f64),
    Unchecked,
}

/// Runs `f(cursor, out)` on every path and returns the moments of `out`.
pub(crate) fn path_moments<F>(law: &MatrixLaw, cfg: &WalkConfig, k: usize, f: F) -> Vec<Moments>
where
    F: Fn(&mut Cursor, &mut [f64]) + Sync + Send,
{
    let kernel = Kernel::new(law);
    let x = cfg.x.vec();
    run_chunked(
        cfg.paths,
        cfg.workers,
        || (kernel.cursor(), vec![0.0; k]),
        || vec![Moments::default(); k],
        |(cur, out), acc, p| {
            cur.reset(x, SamplerState::new(cfg.seed, p));
            out.iter_mut().for_each(|o| *o = 0.0);
            f(cur, out);
            acc.iter_mut().zip(out.iter()).for_each(|(m, &v)| m.push(v));
        },
        merge_moments,
    )
}

fn single(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    f: impl Fn(&mut Cursor) -> f64 + Sync + Send,
) -> EstimateWithCI {
    let m = path_moments(law, cfg, 1, |c, out| out[0] = f(c));
    EstimateWithCI::from_moments(&m[0], cfg.seed)
}

/// `E[(t + S_n) 1{τ > n}]`.
pub fn estimate_v(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    t: f64,
    centering: Centering,
) -> Result<EstimateWithCI> {
    cfg.validate(law)?;
    if let Centering::Verified(l) = centering {
        if !(l.abs() < CENTERING_TOL) {
            return Err(Error::NotCentered { lambda_hat: l });
        }
    }
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let est = single(law, cfg, |c| {
        c.set_barrier(t, sign, ineq);
        match c.run_killed(n) {
            None => t + sign.value() * c.sum(),
            Some(_) => 0.0,
        }
    });
    Ok(est.with_meta("estimator", "V"))
}

/// `P(τ > n)`.
pub fn estimate_persistence(law: &MatrixLaw, cfg: &WalkConfig, t: f64) -> Result<EstimateWithCI> {
    cfg.validate(law)?;
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let est = single(law, cfg, |c| {
        c.set_barrier(t, sign, ineq);
        c.run_killed(n).is_none() as u8 as f64
    });
    Ok(est.with_meta("estimator", "persistence"))
}

/// `P(τ = n)`.
pub fn estimate_exit_local(law: &MatrixLaw, cfg: &WalkConfig, t: f64) -> Result<EstimateWithCI> {
    cfg.validate(law)?;
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let est = single(law, cfg, |c| {
        c.set_barrier(t, sign, ineq);
        (c.run_killed(n) == Some(n)) as u8 as f64
    });
    Ok(est.with_meta("estimator", "exit_local"))
}

/// Local probability with the values behind it.
#[derive(Clone, Debug)]
pub struct LocalProbEstimate {
    pub estimate: EstimateWithCI,
    /// `t + sign·S_n` for every path with `τ > n − 1`, in path order.
    pub samples: Vec<f64>,
}

/// `P(t + S_n ∈ [a, b], τ > n − 1)`.
pub fn estimate_local_prob(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    t: f64,
    a: f64,
    b: f64,
) -> Result<LocalProbEstimate> {
    cfg.validate(law)?;
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "need a < b, got [{a}, {b}]"
        )));
    }
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let kernel = Kernel::new(law);
    let x = cfg.x.vec();
    let (m, samples) = run_chunked(
        cfg.paths,
        cfg.workers,
        || kernel.cursor(),
        || (Moments::default(), Vec::new()),
        |cur, (m, samples), p| {
            cur.reset(x, SamplerState::new(cfg.seed, p));
            cur.set_barrier(t, sign, ineq);
            let mut hit = 0.0;
            if cur.run_killed(n - 1).is_none() {
                cur.step();
                let v = t + sign.value() * cur.sum();
                samples.push(v);
                if a <= v && v <= b {
                    hit = 1.0;
                }
            }
            m.push(hit);
        },
        |a, b| {
            a.0.merge(&b.0);
            a.1.extend_from_slice(&b.1);
        },
    );
    let estimate = EstimateWithCI::from_moments(&m, cfg.seed).with_meta("estimator", "local_prob");
    Ok(LocalProbEstimate { estimate, samples })
}

/// `E[h(G_n x, t + S_n); τ_{x,t} > n − 1]` at one `t`.
pub fn estimate_rho_inner(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    h: &dyn TargetFunction,
    t: f64,
) -> Result<EstimateWithCI> {
    cfg.validate(law)?;
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let d = law.dim();
    let est = single(law, cfg, |c| {
        c.set_barrier(t, sign, ineq);
        if c.run_killed(n - 1).is_some() {
            return 0.0;
        }
        c.step();
        let mut dir = vec![0.0; d];
        c.direction(&mut dir);
        h.eval(&dir, t + sign.value() * c.sum())
    });
    Ok(est.with_meta("estimator", "rho_inner"))
}

#[derive(Clone)]
struct RhoAcc {
    total: Moments,
    nodes: Vec<f64>,
}

/// `∫₀^∞ t E[h(G_n x, t + S_n); τ_{x,t} > n − 1] dt` by the trapezoid rule on
/// `grid`, with one path ensemble shared by every node.
pub fn estimate_rho_integral(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    h: &dyn TargetFunction,
    grid: &TGrid,
) -> Result<EstimateWithCI> {
    cfg.validate(law)?;
    let (n, sign, ineq) = (cfg.n, cfg.sign, cfg.inequality);
    let (lo, hi) = h.t_support();
    let kernel = Kernel::new(law);
    let d = law.dim();
    let x = cfg.x.vec();
    let step = grid.step();
    let last = grid.len() - 1;
    let acc = run_chunked(
        cfg.paths,
        cfg.workers,
        || (kernel.cursor(), vec![0.0; d]),
        || RhoAcc {
            total: Moments::default(),
            nodes: vec![0.0; grid.len()],
        },
        |(cur, dir), acc, p| {
            cur.reset(x, SamplerState::new(cfg.seed, p));
            // τ > n−1 ⇔ t ≥ −min_{k≤n−1} sign·S_k (strict); t > … (large)
            let m = cur.run_tracking_min(n - 1, sign);
            cur.step();
            let s = sign.value() * cur.sum();
            cur.direction(dir);
            let j0 = ((lo - s) / step).floor().max((-m / step).floor()).max(0.0);
            let j1 = ((hi - s) / step).ceil().min(last as f64);
            let mut y = 0.0;
            if j0 <= j1 {
                for j in j0 as usize..=j1 as usize {
                    let tj = grid.node(j);
                    if killed(tj + m, ineq) {
                        continue;
                    }
                    let v = tj * h.eval(dir, tj + s);
                    if v != 0.0 {
                        acc.nodes[j] += v;
                        y += grid.weight(j) * v;
                    }
                }
            }
            acc.total.push(y);
        },
        |a, b| {
            a.total.merge(&b.total);
            a.nodes.iter_mut().zip(&b.nodes).for_each(|(x, y)| *x += y);
        },
    );
    let peak = acc.nodes.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    let tail = acc.nodes[last].abs();
    if peak > 0.0 && tail > GRID_TAIL_TOL * peak {
        return Err(Error::GridTooShort { ratio: tail / peak });
    }
    Ok(EstimateWithCI::from_moments(&acc.total, cfg.seed)
        .with_meta("estimator", "rho_integral")
        .with_meta("grid_upper", grid.upper())
        .with_meta("grid_step", step))
}

#[cfg(test)]
mod tests;
