//! Brute-force oracle: exact expectations by summing over all words.

use super::kernel::Kernel;
use super::{ExitTime, Inequality, Sign};
use crate::error::{Error, Result};
use crate::geom::{canonicalize, ProjectivePoint};
use crate::law::MatrixLaw;
use crate::stats::KahanSum;

/// Largest number of words an enumeration may visit.
pub const ENUMERATION_CAP: f64 = 1e7;

/// One enumerated word with its walk.
pub struct PathView<'a> {
    pub t: f64,
    /// `sums[k] = S_k`, with `sums[0] = 0`.
    pub sums: &'a [f64],
    /// Canonical unit vector of `g_n⋯g₁x`.
    pub end: &'a [f64],
    pub word: &'a [usize],
    pub prob: f64,
}

impl PathView<'_> {
    pub fn n(&self) -> usize {
        self.word.len()
    }

    pub fn exit_time(&self, sign: Sign, ineq: Inequality) -> ExitTime {
        super::exit_time_of(self.t, &self.sums[1..], sign, ineq)
    }

    /// `τ > k`.
    pub fn survives(&self, k: usize, sign: Sign, ineq: Inequality) -> bool {
        match self.exit_time(sign, ineq) {
            ExitTime::Exited(e) => e > k,
            ExitTime::Survived => true,
        }
    }

    /// `t + sign·S_n`.
    pub fn value(&self, sign: Sign) -> f64 {
        self.t + sign.value() * self.sums[self.n()]
    }
}

fn check_cap(k: usize, n: usize) -> Result<()> {
    let words = (k as f64).powi(n as i32);
    if words > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            words,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Calls `visit(word, prob)` for every word of length `n` over `k` letters,
/// in lexicographic order.
#[cfg(test)]
pub(crate) fn for_each_word(
    probs: &[f64],
    n: usize,
    mut visit: impl FnMut(&[usize], f64),
) -> Result<()> {
    check_cap(probs.len(), n)?;
    let mut word = vec![0usize; n];
    loop {
        let p = word.iter().map(|&i| probs[i]).product();
        visit(&word, p);
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            word[pos] += 1;
            if word[pos] < probs.len() {
                break;
            }
            word[pos] = 0;
        }
    }
}

/// `(E f, E f²)` over all words of length `n`.
pub fn enumerate_moments(
    law: &MatrixLaw,
    x: &ProjectivePoint,
    t: f64,
    n: usize,
    f: impl Fn(&PathView) -> f64,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if x.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: x.dim(),
        });
    }
    check_cap(law.len(), n)?;
    let kernel = Kernel::new(law);
    let d = law.dim();
    let mut st = Dfs {
        kernel: &kernel,
        probs: law.probs(),
        t,
        n,
        vecs: vec![vec![0.0; d]; n + 1],
        sums: vec![0.0; n + 1],
        word: vec![0; n],
        end: vec![0.0; d],
        m1: KahanSum::default(),
        m2: KahanSum::default(),
    };
    st.vecs[0].copy_from_slice(x.vec());
    st.go(0, 1.0, &f);
    Ok((st.m1.value(), st.m2.value()))
}

/// `E f` over all words of length `n`.
pub fn enumerate_exact(
    law: &MatrixLaw,
    x: &ProjectivePoint,
    t: f64,
    n: usize,
    f: impl Fn(&PathView) -> f64,
) -> Result<f64> {
    enumerate_moments(law, x, t, n, f).map(|m| m.0)
}

struct Dfs<'k, 'a> {
    kernel: &'k Kernel<'a>,
    probs: &'k [f64],
    t: f64,
    n: usize,
    vecs: Vec<Vec<f64>>,
    sums: Vec<f64>,
    word: Vec<usize>,
    end: Vec<f64>,
    m1: KahanSum,
    m2: KahanSum,
}

impl Dfs<'_, '_> {
    fn go(&mut self, level: usize, prob: f64, f: &impl Fn(&PathView) -> f64) {
        if level == self.n {
            self.end.copy_from_slice(&self.vecs[level]);
            canonicalize(&mut self.end);
            let view = PathView {
                t: self.t,
                sums: &self.sums,
                end: &self.end,
                word: &self.word,
                prob,
            };
            let v = f(&view);
            self.m1.add(prob * v);
            self.m2.add(prob * v * v);
            return;
        }
        for i in 0..self.probs.len() {
            let (head, tail) = self.vecs.split_at_mut(level + 1);
            let s = self.kernel.one_step(i, &head[level], &mut tail[0]);
            self.sums[level + 1] = self.sums[level] + s;
            self.word[level] = i;
            self.go(level + 1, prob * self.probs[i], f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SquareMatrix;

    #[test]
    fn words_in_order_and_probabilities_sum_to_one() {
        let mut seen = Vec::new();
        let mut total = 0.0;
        for_each_word(&[0.25, 0.75], 3, |w, p| {
            seen.push(w.to_vec());
            total += p;
        })
        .unwrap();
        assert_eq!(seen.len(), 8);
        assert_eq!(seen[1], vec![0, 0, 1]);
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cap_enforced() {
        let law = MatrixLaw::l0();
        let x = ProjectivePoint::basis(2, 0);
        let r = enumerate_exact(&law, &x, 0.0, 12, |_| 1.0);
        assert!(matches!(r, Err(Error::TooLarge { .. })));
    }

    #[test]
    fn hand_checked_two_atom_law() {
        // diag(e, 1/e) and diag(1/e, e) on span e₁: σ = ±1 with probs ¼, ¾.
        let e = std::f64::consts::E;
        let g1 = SquareMatrix::diag(&[e, 1.0 / e]).unwrap();
        let g2 = SquareMatrix::diag(&[1.0 / e, e]).unwrap();
        let law = MatrixLaw::new(vec![g1, g2], vec![0.25, 0.75], 0.0).unwrap();
        let x = ProjectivePoint::basis(2, 0);
        // P(τ > 3) with t = 1.5: exits once S_k ≤ -2. Surviving words:
        // +++, ++-, +-+, -++, +--(S = 1, 0, -1 ok), -+- (-1, 0, -1 ok)
        let p = enumerate_exact(&law, &x, 1.5, 3, |v| {
            v.survives(3, Sign::Plus, Inequality::Strict) as u8 as f64
        })
        .unwrap();
        let (a, b) = (0.25f64, 0.75f64);
        let expected = a * a * a + 3.0 * a * a * b + 2.0 * a * b * b;
        assert!((p - expected).abs() < 1e-15);
    }
}
