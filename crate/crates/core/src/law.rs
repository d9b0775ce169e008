//! Finite-support probability laws on invertible matrices.

use crate::error::{Error, Result};
use crate::geom::{proj_distance, ProjectivePoint, SquareMatrix};
use crate::rng::SamplerState;
use serde::{Deserialize, Serialize};
use std::path::Path;

const PROB_SUM_TOL: f64 = 1e-12;

/// A law `μ = Σ pᵢ δ_{e^{s} gᵢ}` where `s` is the log-shift.
#[derive(Clone, Debug)]
pub struct MatrixLaw {
    dim: usize,
    support: Vec<SquareMatrix>,
    probs: Vec<f64>,
    log_shift: f64,
    cdf: Vec<f64>,
}

impl MatrixLaw {
    pub fn new(support: Vec<SquareMatrix>, probs: Vec<f64>, log_shift: f64) -> Result<Self> {
        let Some(first) = support.first() else {
            return Err(Error::InvalidLaw("support is empty".into()));
        };
        let dim = first.dim();
        if let Some((i, g)) = support.iter().enumerate().find(|(_, g)| g.dim() != dim) {
            return Err(Error::InvalidLaw(format!(
                "matrix {i} has dimension {} != {dim}",
                g.dim()
            )));
        }
        if probs.len() != support.len() {
            return Err(Error::InvalidLaw(format!(
                "{} probabilities for {} matrices",
                probs.len(),
                support.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::InvalidLaw(format!(
                "probability {i} is not positive: {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidLaw(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if !log_shift.is_finite() {
            return Err(Error::InvalidLaw("log_shift must be finite".into()));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self {
            dim,
            support,
            probs,
            log_shift,
            cdf,
        })
    }

    pub fn uniform(support: Vec<SquareMatrix>) -> Result<Self> {
        let k = support.len();
        Self::new(support, vec![1.0 / k as f64; k], 0.0)
    }

    /// Dirac mass at `g`.
    pub fn dirac(g: SquareMatrix) -> Self {
        Self::new(vec![g], vec![1.0], 0.0).expect("a single invertible matrix is a valid law")
    }

    /// The reference law: uniform on `{A, A⁻¹, B, B⁻¹}` with
    /// `A = [[2,1],[1,1]]`, `B = [[1,1],[1,2]]` and no shift.
    pub fn l0() -> Self {
        let a = SquareMatrix::new(2, vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        let b = SquareMatrix::new(2, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let (ai, bi) = (a.inverse(), b.inverse());
        Self::uniform(vec![a, ai, b, bi]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[SquareMatrix] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_shift(&self) -> f64 {
        self.log_shift
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Support atoms with the scalar factor `e^{log_shift}` applied.
    pub fn scaled_support(&self) -> Vec<SquareMatrix> {
        let c = self.log_shift.exp();
        self.support.iter().map(|g| g.scaled(c)).collect()
    }

    /// Index drawn by inverse CDF from one uniform.
    #[inline]
    pub fn sample_index(&self, s: &mut SamplerState) -> usize {
        let u = s.uniform();
        self.index_for_uniform(u)
    }

    #[inline]
    pub(crate) fn index_for_uniform(&self, u: f64) -> usize {
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }

    /// Draws `e^{log_shift} · gᵢ`.
    pub fn sample(&self, s: &mut SamplerState) -> SquareMatrix {
        let i = self.sample_index(s);
        self.support[i].scaled(self.log_shift.exp())
    }

    /// `∫ max{‖g‖, ‖g⁻¹‖}^α μ(dg)`, shift included.
    pub fn exp_moment(&self, alpha: f64) -> f64 {
        assert!(alpha > 0.0, "alpha must be positive");
        let c = self.log_shift.exp();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(g, p)| {
                let m = (c * g.op_norm()).max(g.inverse().op_norm() / c);
                p * m.powf(alpha)
            })
            .sum()
    }

    /// Same law with every atom multiplied by `e^{-lambda_hat}`.
    pub fn recenter(&self, lambda_hat: f64) -> MatrixLaw {
        assert!(lambda_hat.is_finite(), "lambda_hat must be finite");
        let mut out = self.clone();
        out.log_shift -= lambda_hat;
        out
    }

    /// The law of `g⁻¹` under `μ`.
    pub fn inverse_law(&self) -> MatrixLaw {
        let support = self.support.iter().map(SquareMatrix::inverse).collect();
        MatrixLaw::new(support, self.probs.clone(), -self.log_shift).unwrap()
    }

    /// Conditional law on the atoms listed in `indices`.
    pub fn restrict(&self, indices: &[usize]) -> Result<MatrixLaw> {
        let total: f64 = indices.iter().map(|&i| self.probs[i]).sum();
        let support = indices.iter().map(|&i| self.support[i].clone()).collect();
        let probs = indices.iter().map(|&i| self.probs[i] / total).collect();
        MatrixLaw::new(support, probs, self.log_shift)
    }

    /// `log max_i max{‖gᵢ‖, ‖gᵢ⁻¹‖}` for the shifted atoms, the step bound of the walk.
    pub fn max_log_norm(&self) -> f64 {
        self.scaled_support()
            .iter()
            .map(SquareMatrix::log_norm_bound)
            .fold(0.0, f64::max)
    }

    /// Heuristic proximality / irreducibility screen.
    pub fn irreducibility_diagnostic(&self, s: &SamplerState) -> DiagnosticReport {
        irreducibility_diagnostic(self, s, &DiagnosticOptions::default())
    }

    pub fn from_json_str(text: &str) -> Result<MatrixLaw> {
        parse_law(text).map_err(|msg| Error::LawFile {
            path: "<inline>".into(),
            msg,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MatrixLaw> {
        let path = path.as_ref();
        let file = |msg: String| Error::LawFile {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file(e.to_string()))?;
        parse_law(&text).map_err(file)
    }

    pub fn to_json(&self) -> String {
        let file = LawFile {
            dim: self.dim,
            matrices: self.support.iter().map(|g| g.entries().to_vec()).collect(),
            probs: self.probs.clone(),
            log_shift: self.log_shift,
        };
        serde_json::to_string_pretty(&file).expect("law serializes")
    }

    /// FNV-1a hash of the canonical JSON form, used to stamp reports.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_json().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawFile {
    dim: usize,
    matrices: Vec<Vec<f64>>,
    probs: Vec<f64>,
    #[serde(default)]
    log_shift: f64,
}

fn parse_law(text: &str) -> std::result::Result<MatrixLaw, String> {
    let file: LawFile = serde_json::from_str(text).map_err(|e| crate::error::json_error(&e))?;
    let at = |key: &str, i: usize| match locate_array_element(text, key, i) {
        Some(line) => format!("line {line}: "),
        None => String::new(),
    };
    if file.dim < 2 {
        return Err(format!("{}dim must be >= 2", at("dim", usize::MAX)));
    }
    if file.matrices.is_empty() {
        return Err(format!(
            "{}matrices must be non-empty",
            at("matrices", usize::MAX)
        ));
    }
    if file.matrices.len() != file.probs.len() {
        return Err(format!(
            "{}{} matrices but {} probabilities",
            at("probs", usize::MAX),
            file.matrices.len(),
            file.probs.len()
        ));
    }
    let mut support = Vec::with_capacity(file.matrices.len());
    for (i, m) in file.matrices.into_iter().enumerate() {
        let g = SquareMatrix::new(file.dim, m)
            .map_err(|e| format!("{}matrices[{i}]: {e}", at("matrices", i)))?;
        support.push(g);
    }
    for (i, p) in file.probs.iter().enumerate() {
        if !(*p > 0.0) {
            return Err(format!(
                "{}probs[{i}] = {p} is not positive",
                at("probs", i)
            ));
        }
    }
    MatrixLaw::new(support, file.probs, file.log_shift)
        .map_err(|e| format!("{}{e}", at("probs", usize::MAX)))
}

/// 1-based line of the `index`-th element of the top-level array stored under
/// `key`; `usize::MAX` asks for the line of the key itself.
fn locate_array_element(text: &str, key: &str, index: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let key_pos = text.find(&needle)?;
    let line_of = |pos: usize| text[..pos].bytes().filter(|&b| b == b'\n').count() + 1;
    if index == usize::MAX {
        return Some(line_of(key_pos));
    }
    let open = key_pos + text[key_pos..].find('[')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut count = 0usize;
    let mut expecting = true;
    for (off, &b) in bytes[open..].iter().enumerate() {
        let pos = open + off;
        match b {
            b'[' => {
                depth += 1;
                if depth == 2 && expecting {
                    if count == index {
                        return Some(line_of(pos));
                    }
                    expecting = false;
                }
                if depth == 1 {
                    expecting = true;
                }
            }
            b']' => {
                if depth == 1 {
                    return None;
                }
                depth -= 1;
            }
            b',' if depth == 1 => {
                count += 1;
                expecting = true;
            }
            b' ' | b'\n' | b'\r' | b'\t' => {}
            _ if depth == 1 && expecting => {
                if count == index {
                    return Some(line_of(pos));
                }
                expecting = false;
            }
            _ => {}
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct DiagnosticOptions {
    /// Longest word examined for a proximal element.
    pub max_word_len: usize,
    /// Squarings used to amplify the top singular gap.
    pub squarings: u32,
    pub samples: usize,
    pub depth: usize,
    pub cluster_tol: f64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self {
            max_word_len: 3,
            squarings: 10,
            samples: 256,
            depth: 200,
            cluster_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Suspect,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticReport {
    /// Word (indices into the support, applied right to left) of a product
    /// with a simple dominant eigenvalue, if one was found.
    pub proximal_witness: Option<Vec<usize>>,
    /// Smallest `σ₂/σ₁` seen on the amplified powers.
    pub best_gap_ratio: f64,
    /// Number of distinct lines among the endpoints `G_n x`.
    pub distinct_lines: usize,
    pub samples: usize,
    pub verdict: Verdict,
}

/// `σ₂/σ₁` of `g^(2^squarings)`, computed with running renormalization.
fn amplified_gap_ratio(g: &SquareMatrix, squarings: u32) -> f64 {
    let d = g.dim();
    let frob = |m: &SquareMatrix| m.entries().iter().map(|x| x * x).sum::<f64>().sqrt();
    let f0 = frob(g);
    let mut m = g.scaled(1.0 / f0);
    let mut log_scale = f0.ln();
    for _ in 0..squarings {
        m = m.mul(&m);
        log_scale *= 2.0;
        let f = frob(&m);
        m = m.scaled(1.0 / f);
        log_scale += f.ln();
    }
    if d == 2 {
        let log_det = (1u64 << squarings) as f64 * g.det().abs().ln();
        let log_s1 = log_scale + m.op_norm().ln();
        (log_det - 2.0 * log_s1).exp()
    } else {
        let sv = m.singular_values();
        sv[1] / sv[0]
    }
}

pub fn irreducibility_diagnostic(
    law: &MatrixLaw,
    s: &SamplerState,
    opts: &DiagnosticOptions,
) -> DiagnosticReport {
    let support = law.scaled_support();
    let k = support.len();
    let mut witness = None;
    let mut best = f64::INFINITY;
    let mut words: Vec<(Vec<usize>, SquareMatrix)> =
        (0..k).map(|i| (vec![i], support[i].clone())).collect();
    'outer: for len in 1..=opts.max_word_len {
        for (w, g) in &words {
            let r = amplified_gap_ratio(g, opts.squarings);
            best = best.min(r);
            if r < 1e-6 {
                witness = Some(w.clone());
                break 'outer;
            }
        }
        if len == opts.max_word_len || words.len() * k > 4096 {
            break;
        }
        words = words
            .iter()
            .flat_map(|(w, g)| {
                support.iter().enumerate().map(move |(i, h)| {
                    let mut w2 = w.clone();
                    w2.push(i);
                    (w2, h.mul(g))
                })
            })
            .collect();
    }

    let d = law.dim();
    let mut ends: Vec<ProjectivePoint> = Vec::new();
    for i in 0..opts.samples {
        let mut st = s.substream(i as u64);
        let mut v: Vec<f64> = (0..d).map(|_| st.normal()).collect();
        for _ in 0..opts.depth {
            let g = &support[law.sample_index(&mut st)];
            v = g.apply(&v);
            let n = crate::geom::norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
        }
        let p = ProjectivePoint::from_unit_unchecked(v);
        if !ends.iter().any(|q| proj_distance(q, &p) < opts.cluster_tol) {
            ends.push(p);
        }
    }
    let distinct = ends.len();
    let verdict = if witness.is_some() && distinct > 2 * d {
        Verdict::Pass
    } else {
        Verdict::Suspect
    };
    DiagnosticReport {
        proximal_witness: witness,
        best_gap_ratio: best,
        distinct_lines: distinct,
        samples: opts.samples,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{cocycle_sigma, ProjectivePoint};

    fn golden() -> f64 {
        (1.0 + 5f64.sqrt()) / 2.0
    }

    #[test]
    fn rejects_bad_laws() {
        let id = SquareMatrix::identity(2);
        assert!(MatrixLaw::new(vec![], vec![], 0.0).is_err());
        assert!(MatrixLaw::new(vec![id.clone()], vec![0.9], 0.0).is_err());
        assert!(MatrixLaw::new(vec![id.clone(), id.clone()], vec![1.5, -0.5], 0.0).is_err());
        assert!(MatrixLaw::new(
            vec![id.clone(), SquareMatrix::identity(3)],
            vec![0.5, 0.5],
            0.0
        )
        .is_err());
    }

    #[test]
    fn one_point_law_always_returns_identity() {
        let law = MatrixLaw::dirac(SquareMatrix::identity(2));
        let mut s = SamplerState::new(1, 0);
        for _ in 0..100 {
            assert_eq!(law.sample(&mut s), SquareMatrix::identity(2));
        }
    }

    #[test]
    fn two_point_law_is_reproducible() {
        let law = MatrixLaw::new(
            vec![SquareMatrix::identity(2), SquareMatrix::scalar(2, 2.0)],
            vec![0.5, 0.5],
            0.0,
        )
        .unwrap();
        let draw = |seed| {
            let mut s = SamplerState::new(seed, 9);
            (0..64)
                .map(|_| law.sample_index(&mut s))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
        let mut replay = SamplerState::at(42, 9, 10);
        assert_eq!(law.sample_index(&mut replay), draw(42)[10]);
    }

    #[test]
    fn empirical_frequencies_within_binomial_bounds() {
        let law = MatrixLaw::new(
            vec![
                SquareMatrix::identity(2),
                SquareMatrix::scalar(2, 2.0),
                SquareMatrix::scalar(2, 3.0),
            ],
            vec![0.2, 0.3, 0.5],
            0.0,
        )
        .unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        let mut s = SamplerState::new(2024, 0);
        for _ in 0..n {
            counts[law.sample_index(&mut s)] += 1;
        }
        for (c, p) in counts.iter().zip(law.probs()) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*c as f64 - n as f64 * p).abs() < 4.0 * sd,
                "{c} vs {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn exp_moment_examples() {
        assert_eq!(
            MatrixLaw::dirac(SquareMatrix::identity(2)).exp_moment(1.0),
            1.0
        );
        let three = MatrixLaw::dirac(SquareMatrix::scalar(2, 3.0));
        assert!((three.exp_moment(2.0) - 9.0).abs() < 1e-12);
        // every atom of L0 has ‖g‖ = ‖g⁻¹‖ = φ², so the 1/2-moment is φ
        assert!((MatrixLaw::l0().exp_moment(0.5) - golden()).abs() < 1e-12);
        // with a shift c < 1 each term becomes (φ²/c)^{1/2}
        let shifted = MatrixLaw::l0().recenter(0.3);
        let expect = (golden().powi(2) * 0.3f64.exp()).sqrt();
        assert!((shifted.exp_moment(0.5) - expect).abs() < 1e-12);
    }

    #[test]
    fn exp_moment_monotone_in_alpha() {
        let law = MatrixLaw::l0();
        let mut prev = 0.0;
        for k in 1..20 {
            let m = law.exp_moment(k as f64 * 0.1);
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn recenter_shifts_cocycle_exactly() {
        let law = MatrixLaw::dirac(SquareMatrix::scalar(2, 3.0)).recenter(3f64.ln());
        let x = ProjectivePoint::new(vec![0.3, 0.9]).unwrap();
        let mut s = SamplerState::new(0, 0);
        assert!(cocycle_sigma(&law.sample(&mut s), &x).abs() < 1e-15);

        let l0 = MatrixLaw::l0();
        let twice = l0.recenter(0.2).recenter(0.3);
        let once = l0.recenter(0.5);
        assert!((twice.log_shift() - once.log_shift()).abs() < 1e-15);
        let a = 0.37;
        let shifted = l0.recenter(a);
        for (g_old, g_new) in l0.scaled_support().iter().zip(shifted.scaled_support()) {
            let diff = cocycle_sigma(&g_new, &x) - (cocycle_sigma(g_old, &x) - a);
            assert!(diff.abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostic_verdicts() {
        let s = SamplerState::new(5, 0);
        let rot = MatrixLaw::dirac(SquareMatrix::rotation(1.0));
        let r = rot.irreducibility_diagnostic(&s);
        assert!(r.proximal_witness.is_none());
        assert_eq!(r.verdict, Verdict::Suspect);

        let diag = MatrixLaw::dirac(SquareMatrix::diag(&[2.0, 0.5]).unwrap());
        let r = diag.irreducibility_diagnostic(&s);
        assert!(r.proximal_witness.is_some());
        assert!(r.distinct_lines <= 2);
        assert_eq!(r.verdict, Verdict::Suspect);

        let r = MatrixLaw::l0().irreducibility_diagnostic(&s);
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn json_round_trip_and_errors() {
        let law = MatrixLaw::l0().recenter(0.25);
        let back = MatrixLaw::from_json_str(&law.to_json()).unwrap();
        assert_eq!(back.support(), law.support());
        assert_eq!(back.log_shift(), law.log_shift());

        let bad_syntax = "{\n  \"dim\": 2,\n  \"matrices\": [[1,0,0,1]],\n  \"probs\": [1.0,]\n}";
        let msg = MatrixLaw::from_json_str(bad_syntax)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 4"), "{msg}");

        let singular = "{\n  \"dim\": 2,\n  \"matrices\": [\n    [1,0,0,1],\n    [1,2,2,4]\n  ],\n  \"probs\": [0.5, 0.5]\n}";
        let msg = MatrixLaw::from_json_str(singular).unwrap_err().to_string();
        assert!(
            msg.contains("line 5") && msg.contains("matrices[1]"),
            "{msg}"
        );

        let unknown = "{\"dim\": 2, \"matrices\": [[1,0,0,1]], \"probs\": [1], \"extra\": 1}";
        assert!(MatrixLaw::from_json_str(unknown).is_err());

        let bad_prob =
            "{\n\"dim\": 2,\n\"matrices\": [[1,0,0,1],[2,0,0,2]],\n\"probs\": [\n1.5,\n-0.5\n]\n}";
        let msg = MatrixLaw::from_json_str(bad_prob).unwrap_err().to_string();
        assert!(msg.contains("line 6") && msg.contains("probs[1]"), "{msg}");
    }
}
