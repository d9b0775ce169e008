//! Time reversal of the walk: the dual walk, the reversed array `S̃^{x,m}_n`,
//! boundary sampling and a two-sided check of the reversal identity.
//!
//! For a word `g₁,…,g_m` the reversed array is
//!
//! ```text
//! S̃_n = −σ*(g_n⁻¹⋯g₁⁻¹, y) + δ(g_{n+1}⋯g_m x, g_n⁻¹⋯g₁⁻¹ y) − δ(g₁⋯g_m x, y).
//! ```
//!
//! The dual action of `g⁻¹` is `gᵀ`, so the σ* part is the log-norm growth of
//! `g_nᵀ⋯g₁ᵀ φ`. By the cohomological equation the same array equals
//! `−σ(g₁⋯g_n, g_{n+1}⋯g_m x)`, which does not involve `y`.

use crate::error::{Error, Result};
use crate::geom::{
    act, canonicalize, cocycle_sigma, delta_raw, dot, DualProjectivePoint, ProjectivePoint,
    SquareMatrix, GENERAL_POSITION_TOL,
};
use crate::law::MatrixLaw;
use crate::rng::SamplerState;
use crate::stats::{KahanSum, Moments};
use crate::walk::engine::run_chunked;
use crate::walk::kernel::Kernel;
use crate::walk::{EstimateWithCI, ExitTime, ProductTarget, StepFunction, ENUMERATION_CAP};
use serde::Serialize;

/// Default depth for boundary samples.
pub const DEFAULT_DEPTH: usize = 100;

/// Largest tolerated fraction of words dropped for general-position failure.
pub const MAX_DROP_RATE: f64 = 1e-6;

/// The three terms of `S̃_n`; `sigma_star` already carries its minus sign.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerturbationTriple {
    pub sigma_star: f64,
    pub delta_future: f64,
    pub delta_base: f64,
}

impl PerturbationTriple {
    pub fn value(&self) -> f64 {
        self.sigma_star + self.delta_future - self.delta_base
    }
}

#[derive(Clone, Debug)]
pub struct ReversedPath {
    pub x: ProjectivePoint,
    pub y: DualProjectivePoint,
    pub m: usize,
    /// `values[n] = S̃^{x,m}_n`, `0 ≤ n ≤ m`.
    pub values: Vec<f64>,
    pub terms: Vec<PerturbationTriple>,
    pub general_position_ok: bool,
    /// Smallest `|φ(v)|` met while evaluating δ.
    pub min_pairing: f64,
}

impl ReversedPath {
    /// Fails with `NotInGeneralPosition` when some δ was undefined.
    pub fn checked(self) -> Result<Self> {
        if self.general_position_ok {
            Ok(self)
        } else {
            Err(Error::NotInGeneralPosition {
                pairing: self.min_pairing,
            })
        }
    }
}

fn check_word(d: usize, gs: &[SquareMatrix]) -> Result<()> {
    if gs.is_empty() {
        return Err(Error::InvalidArgument("horizon m must be >= 1".into()));
    }
    for g in gs {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.dim(),
            });
        }
    }
    Ok(())
}

/// `z[k] = g_{k+1}⋯g_m x` for `0 ≤ k ≤ m`.
fn backward_points(x: &ProjectivePoint, gs: &[SquareMatrix]) -> Vec<ProjectivePoint> {
    let m = gs.len();
    let mut z = vec![x.clone(); m + 1];
    for k in (1..=m).rev() {
        z[k - 1] = act(&gs[k - 1], &z[k]);
    }
    z
}

/// Reversed array from the dual cocycle and δ. Pairs outside general
/// position mark the path not-ok; the affected values are NaN.
pub fn reversed_array(
    x: &ProjectivePoint,
    y: &DualProjectivePoint,
    gs: &[SquareMatrix],
) -> Result<ReversedPath> {
    let d = x.dim();
    if y.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.dim(),
        });
    }
    check_word(d, gs)?;
    let m = gs.len();
    let z = backward_points(x, gs);
    let mut ok = true;
    let mut min_pairing = f64::INFINITY;
    let mut delta_of = |v: &[f64], phi: &[f64]| {
        min_pairing = min_pairing.min(dot(v, phi).abs());
        match delta_raw(v, phi) {
            Ok(x) => x,
            Err(_) => {
                ok = false;
                f64::NAN
            }
        }
    };
    let base = delta_of(z[0].vec(), y.vec());
    let mut terms = vec![PerturbationTriple {
        sigma_star: 0.0,
        delta_future: base,
        delta_base: base,
    }];
    let mut phi = y.clone();
    let mut sigma_star = 0.0;
    for (k, g) in gs.iter().enumerate() {
        // σ*(g⁻¹, φ) with dual action (g⁻¹)⁻ᵀ = gᵀ.
        let gt = g.transpose();
        let w = gt.apply(phi.vec());
        sigma_star += crate::geom::norm(&w).ln();
        phi = DualProjectivePoint::new(w)?;
        let future = delta_of(z[k + 1].vec(), phi.vec());
        terms.push(PerturbationTriple {
            sigma_star: -sigma_star,
            delta_future: future,
            delta_base: base,
        });
    }
    let mut values: Vec<f64> = terms.iter().map(PerturbationTriple::value).collect();
    values[0] = 0.0;
    Ok(ReversedPath {
        x: x.clone(),
        y: y.clone(),
        m,
        values,
        terms,
        general_position_ok: ok,
        min_pairing,
    })
}

/// Reversed array through the cohomological equation:
/// `S̃_n = −Σ_{k≤n} σ(g_k, g_{k+1}⋯g_m x)`.
pub fn reversed_array_primal(x: &ProjectivePoint, gs: &[SquareMatrix]) -> Result<Vec<f64>> {
    check_word(x.dim(), gs)?;
    let z = backward_points(x, gs);
    let mut out = vec![0.0; gs.len() + 1];
    for k in 1..=gs.len() {
        out[k] = out[k - 1] - cocycle_sigma(&gs[k - 1], &z[k]);
    }
    Ok(out)
}

/// `τ = min{1 ≤ k ≤ m−1 : t + S̃_k < 0}`.
pub fn perturbed_exit_time(rp: &ReversedPath, t: f64) -> Result<ExitTime> {
    if !rp.general_position_ok {
        return Err(Error::DegeneratePath);
    }
    Ok(rp.values[1..rp.m]
        .iter()
        .position(|&s| t + s < 0.0)
        .map_or(ExitTime::Survived, |k| ExitTime::Exited(k + 1)))
}

fn draw_word(law: &MatrixLaw, s: &mut SamplerState, out: &mut [usize]) {
    out.iter_mut().for_each(|i| *i = law.sample_index(s));
}

/// Applies `word[0]⋯word[p−1]` (rightmost first) to the unit vector `v`.
fn apply_word_rightmost_first(
    kernel: &Kernel,
    word: &[usize],
    v: &mut Vec<f64>,
    tmp: &mut Vec<f64>,
) {
    for &i in word.iter().rev() {
        kernel.one_step(i, v, tmp);
        std::mem::swap(v, tmp);
    }
}

fn check_depth(law: &MatrixLaw, depth: usize, d: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    if d != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: d,
        });
    }
    Ok(())
}

/// `g₁⋯g_p x0`, an approximation of the boundary point `ξ(ω)`.
pub fn boundary_sample(
    law: &MatrixLaw,
    s: &mut SamplerState,
    depth: usize,
    x0: &ProjectivePoint,
) -> Result<ProjectivePoint> {
    check_depth(law, depth, x0.dim())?;
    let kernel = Kernel::new(law);
    let mut word = vec![0; depth];
    draw_word(law, s, &mut word);
    let mut v = x0.vec().to_vec();
    let mut tmp = v.clone();
    apply_word_rightmost_first(&kernel, &word, &mut v, &mut tmp);
    Ok(ProjectivePoint::from_unit_unchecked(v))
}

/// Boundary samples at depths `p` and `2p` from the same draws, with their
/// projective distance.
pub fn boundary_sample_pair(
    law: &MatrixLaw,
    s: &mut SamplerState,
    depth: usize,
    x0: &ProjectivePoint,
) -> Result<(ProjectivePoint, ProjectivePoint, f64)> {
    check_depth(law, depth, x0.dim())?;
    let kernel = Kernel::new(law);
    let mut word = vec![0; 2 * depth];
    draw_word(law, s, &mut word);
    let mut tmp = x0.vec().to_vec();
    let mut short = x0.vec().to_vec();
    apply_word_rightmost_first(&kernel, &word[..depth], &mut short, &mut tmp);
    let mut long = x0.vec().to_vec();
    apply_word_rightmost_first(&kernel, &word, &mut long, &mut tmp);
    let (a, b) = (
        ProjectivePoint::from_unit_unchecked(short),
        ProjectivePoint::from_unit_unchecked(long),
    );
    let dist = crate::geom::proj_distance(&a, &b);
    Ok((a, b, dist))
}

/// A sample of `ν̂*`: the boundary point of `μ⁻¹` acting on `ℙ(V*)`, that is
/// `g₁ᵀ⋯g_pᵀ y0`.
pub fn dual_boundary_sample(
    law: &MatrixLaw,
    s: &mut SamplerState,
    depth: usize,
    y0: &DualProjectivePoint,
) -> Result<DualProjectivePoint> {
    check_depth(law, depth, y0.dim())?;
    let kernel = Kernel::transposed(law);
    let mut word = vec![0; depth];
    draw_word(law, s, &mut word);
    let mut v = y0.vec().to_vec();
    let mut tmp = v.clone();
    apply_word_rightmost_first(&kernel, &word, &mut v, &mut tmp);
    Ok(DualProjectivePoint::from_unit_unchecked(v))
}

/// A sample of `ν̂*` started from a Gaussian direction drawn from `s`.
/// A random start keeps `y` off the rational lines that integer atoms can
/// map exactly onto `x^⊥`.
pub fn sample_nu_star(
    law: &MatrixLaw,
    s: &mut SamplerState,
    depth: usize,
) -> Result<DualProjectivePoint> {
    let y0 = loop {
        let v: Vec<f64> = (0..law.dim()).map(|_| s.normal()).collect();
        if crate::geom::norm(&v) > 1e-3 {
            break DualProjectivePoint::from_unit_unchecked(v);
        }
    };
    dual_boundary_sample(law, s, depth, &y0)
}

#[derive(Clone, Copy, PartialEq)]
enum Run {
    Complete,
    Killed,
    Degenerate,
}

/// Fast reversed array on atom indices, for the ensemble runners.
struct Reverser<'a> {
    fwd: Kernel<'a>,
    dual: Kernel<'a>,
    d: usize,
    z: Vec<f64>,
    phi: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Reverser<'a> {
    fn new(law: &'a MatrixLaw) -> Self {
        let d = law.dim();
        Self {
            fwd: Kernel::new(law),
            dual: Kernel::transposed(law),
            d,
            z: Vec::new(),
            phi: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    /// Fills `out[k] = S̃^{x,m}_k` for `k < out.len()`, with `m = word.len()`.
    /// With a barrier `t`, stops at the first `k` with `t + S̃_k < 0`.
    fn run(
        &mut self,
        x: &[f64],
        y: &[f64],
        word: &[usize],
        out: &mut [f64],
        barrier: Option<f64>,
    ) -> Run {
        let (d, m) = (self.d, word.len());
        let upto = out.len() - 1;
        self.z.resize((m + 1) * d, 0.0);
        self.z[m * d..].copy_from_slice(x);
        for k in (1..=m).rev() {
            let (head, tail) = self.z.split_at_mut(k * d);
            self.fwd
                .push_unit(word[k - 1], &tail[..d], &mut head[(k - 1) * d..]);
        }
        let pair0 = dot(&self.z[..d], y).abs();
        if pair0 <= GENERAL_POSITION_TOL {
            return Run::Degenerate;
        }
        let base = -pair0.min(1.0).ln();
        self.phi.copy_from_slice(y);
        let mut sigma_star = 0.0;
        out[0] = 0.0;
        for k in 1..=upto {
            sigma_star += self.dual.one_step(word[k - 1], &self.phi, &mut self.tmp);
            std::mem::swap(&mut self.phi, &mut self.tmp);
            let pair = dot(&self.z[k * d..(k + 1) * d], &self.phi).abs();
            if pair <= GENERAL_POSITION_TOL {
                return Run::Degenerate;
            }
            out[k] = -sigma_star - pair.min(1.0).ln() - base;
            if barrier.is_some_and(|t| t + out[k] < 0.0) {
                return Run::Killed;
            }
        }
        Run::Complete
    }

    /// Unit vector of `g₁⋯g_m x` from the last `run`.
    fn front(&self) -> &[f64] {
        &self.z[..self.d]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReversalMode {
    /// Exact sum over all words of length `n`.
    Enumerate { workers: usize },
    /// Monte Carlo over `paths` words; both sides share the words.
    MonteCarlo {
        paths: u64,
        seed: u64,
        workers: usize,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct ReversalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    /// Standard error of the per-word difference; zero in enumerate mode.
    pub gap_stderr: f64,
    /// Words visited.
    pub samples: u64,
    /// Words dropped for general-position failure.
    pub dropped: u64,
}

#[derive(Clone, Default)]
struct SideSums {
    lhs: KahanSum,
    rhs: KahanSum,
    lhs_m: Moments,
    rhs_m: Moments,
    diff_m: Moments,
    dropped: u64,
    dropped_mass: KahanSum,
}

impl SideSums {
    fn merge(&mut self, o: &SideSums) {
        self.lhs.merge(&o.lhs);
        self.rhs.merge(&o.rhs);
        self.lhs_m.merge(&o.lhs_m);
        self.rhs_m.merge(&o.rhs_m);
        self.diff_m.merge(&o.diff_m);
        self.dropped += o.dropped;
        self.dropped_mass.merge(&o.dropped_mass);
    }
}

struct WordScratch<'a> {
    rev: Reverser<'a>,
    word: Vec<usize>,
    v: Vec<f64>,
    tmp: Vec<f64>,
    reversed: Vec<f64>,
}

/// Both integrands for one word, or `None` on a general-position failure.
///
/// Forward side: `φ(g_n⋯g₁x) ∫_{τ>n−1} h(t + S_n) ψ(t) dt`.
/// Reversed side: `φ(g₁⋯g_n x) ∫ h(u) ψ(u + S̃_n) 1{u + S̃_k ≥ 0, 1 ≤ k ≤ n−1} du`.
fn word_sides<F: Fn(&[f64]) -> f64>(
    ws: &mut WordScratch,
    x: &[f64],
    y: &[f64],
    h: &ProductTarget<F>,
    psi: &StepFunction,
) -> Option<(f64, f64)> {
    let n = ws.word.len();
    ws.v.copy_from_slice(x);
    let (mut s, mut lower) = (0.0, f64::NEG_INFINITY);
    for k in 0..n {
        s += ws.rev.fwd.one_step(ws.word[k], &ws.v, &mut ws.tmp);
        std::mem::swap(&mut ws.v, &mut ws.tmp);
        if k + 1 < n {
            lower = lower.max(-s);
        }
    }
    canonicalize(&mut ws.v);
    let lhs = (h.proj)(&ws.v) * h.step.overlap_integral(s, psi, 0.0, lower);

    if ws.rev.run(x, y, &ws.word, &mut ws.reversed, None) == Run::Degenerate {
        return None;
    }
    let lower_rev = ws.reversed[1..n]
        .iter()
        .fold(f64::NEG_INFINITY, |a, &v| a.max(-v));
    ws.v.copy_from_slice(ws.rev.front());
    canonicalize(&mut ws.v);
    let rhs = (h.proj)(&ws.v) * h.step.overlap_integral(0.0, psi, ws.reversed[n], lower_rev);
    Some((lhs, rhs))
}

/// Evaluates both sides of the reversal identity
/// `∫ E[h(g_n⋯g₁x, t+S_n); τ_{x,t} > n−1] ψ(t) dt`
/// `= ∫ E[h(g₁⋯g_n x, u) ψ(u + S̃_n); u + S̃_k ≥ 0, 1 ≤ k ≤ n−1] du`.
pub fn reversal_check<F: Fn(&[f64]) -> f64 + Sync>(
    law: &MatrixLaw,
    x: &ProjectivePoint,
    y: &DualProjectivePoint,
    h: &ProductTarget<F>,
    psi: &StepFunction,
    n: usize,
    mode: ReversalMode,
) -> Result<ReversalCheck> {
    let d = law.dim();
    if x.dim() != d || y.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.dim() != d { x.dim() } else { y.dim() },
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let (xv, yv) = (x.vec(), y.vec());
    let scratch = || WordScratch {
        rev: Reverser::new(law),
        word: vec![0; n],
        v: vec![0.0; d],
        tmp: vec![0.0; d],
        reversed: vec![0.0; n + 1],
    };
    let probs = law.probs();
    let k = probs.len();
    match mode {
        ReversalMode::Enumerate { workers } => {
            let words = (k as f64).powi(n as i32);
            if words > ENUMERATION_CAP {
                return Err(Error::TooLarge {
                    words,
                    cap: ENUMERATION_CAP,
                });
            }
            let total = k.pow(n as u32) as u64;
            let acc = run_chunked(
                total,
                workers,
                scratch,
                SideSums::default,
                |ws, acc, j| {
                    let mut rest = j as usize;
                    let mut p = 1.0;
                    for pos in (0..n).rev() {
                        ws.word[pos] = rest % k;
                        rest /= k;
                        p *= probs[ws.word[pos]];
                    }
                    match word_sides(ws, xv, yv, h, psi) {
                        Some((l, r)) => {
                            acc.lhs.add(p * l);
                            acc.rhs.add(p * r);
                        }
                        None => {
                            acc.dropped += 1;
                            acc.dropped_mass.add(p);
                        }
                    }
                },
                SideSums::merge,
            );
            let rate = acc.dropped_mass.value();
            if rate > MAX_DROP_RATE {
                return Err(Error::ExcessiveDrops { rate });
            }
            let (lhs, rhs) = (acc.lhs.value(), acc.rhs.value());
            Ok(ReversalCheck {
                lhs,
                rhs,
                gap: (lhs - rhs).abs(),
                lhs_stderr: 0.0,
                rhs_stderr: 0.0,
                gap_stderr: 0.0,
                samples: total,
                dropped: acc.dropped,
            })
        }
        ReversalMode::MonteCarlo {
            paths,
            seed,
            workers,
        } => {
            if paths == 0 {
                return Err(Error::InvalidArgument("paths must be >= 1".into()));
            }
            let acc = run_chunked(
                paths,
                workers,
                scratch,
                SideSums::default,
                |ws, acc, p| {
                    let mut s = SamplerState::new(seed, p);
                    draw_word(law, &mut s, &mut ws.word);
                    match word_sides(ws, xv, yv, h, psi) {
                        Some((l, r)) => {
                            acc.lhs_m.push(l);
                            acc.rhs_m.push(r);
                            acc.diff_m.push(l - r);
                        }
                        None => acc.dropped += 1,
                    }
                },
                SideSums::merge,
            );
            let rate = acc.dropped as f64 / paths as f64;
            if rate > MAX_DROP_RATE {
                return Err(Error::ExcessiveDrops { rate });
            }
            let (lhs, rhs) = (acc.lhs_m.mean(), acc.rhs_m.mean());
            Ok(ReversalCheck {
                lhs,
                rhs,
                gap: (lhs - rhs).abs(),
                lhs_stderr: acc.lhs_m.stderr(),
                rhs_stderr: acc.rhs_m.stderr(),
                gap_stderr: acc.diff_m.stderr(),
                samples: paths,
                dropped: acc.dropped,
            })
        }
    }
}

/// Reversed-walk persistence with `y ~ ν̂*` and horizon `m = n + depth`.
#[derive(Clone, Debug)]
pub struct ReversedPersistence {
    /// `P(t + S̃_k ≥ 0, 1 ≤ k ≤ n)`.
    pub persistence: EstimateWithCI,
    /// `t + S̃_n` on surviving paths, in path order.
    pub survivors: Vec<f64>,
    pub dropped: u64,
}

#[derive(Clone, Default)]
struct PersistAcc {
    m: Moments,
    survivors: Vec<f64>,
    dropped: u64,
}

/// Persistence of the perturbed reversed walk `t + S̃^{x,n+depth}_k`.
/// Each path draws `y` from `ν̂*` at the given depth (as in `sample_nu_star`),
/// then the word.
#[allow(clippy::too_many_arguments)]
pub fn reversed_persistence(
    law: &MatrixLaw,
    x: &ProjectivePoint,
    t: f64,
    n: usize,
    depth: usize,
    paths: u64,
    seed: u64,
    workers: usize,
) -> Result<ReversedPersistence> {
    let d = law.dim();
    check_depth(law, depth, x.dim())?;
    if n == 0 || paths == 0 {
        return Err(Error::InvalidArgument("n and paths must be >= 1".into()));
    }
    let m = n + depth;
    let xv = x.vec();
    let acc = run_chunked(
        paths,
        workers,
        || {
            (
                Reverser::new(law),
                vec![0usize; depth],
                vec![0usize; m],
                vec![0.0; d],
                vec![0.0; d],
                vec![0.0; n + 1],
            )
        },
        PersistAcc::default,
        |(rev, yword, word, y, tmp, out), acc, p| {
            let mut s = SamplerState::new(seed, p);
            y.iter_mut().for_each(|c| *c = s.normal());
            canonicalize(y);
            draw_word(law, &mut s, yword);
            apply_word_rightmost_first(&rev.dual, yword, y, tmp);
            draw_word(law, &mut s, word);
            let alive = match rev.run(xv, y, word, out, Some(t)) {
                Run::Degenerate => {
                    acc.dropped += 1;
                    return;
                }
                Run::Killed => false,
                Run::Complete => true,
            };
            acc.m.push(alive as u8 as f64);
            if alive {
                acc.survivors.push(t + out[n]);
            }
        },
        |a, b| {
            a.m.merge(&b.m);
            a.survivors.extend_from_slice(&b.survivors);
            a.dropped += b.dropped;
        },
    );
    let rate = acc.dropped as f64 / paths as f64;
    if rate > MAX_DROP_RATE {
        return Err(Error::ExcessiveDrops { rate });
    }
    let persistence = EstimateWithCI::from_moments(&acc.m, seed)
        .with_meta("horizon", m)
        .with_meta("depth", depth);
    Ok(ReversedPersistence {
        persistence,
        survivors: acc.survivors,
        dropped: acc.dropped,
    })
}
