//! Streaming walk kernel.
//!
//! The cursor keeps an unnormalized vector `w` and an accumulated log offset
//! `L`, so that `S_k = L + ½ ln‖w‖²`. Exit tests compare `‖w‖²` against a
//! precomputed threshold, and logarithms are only taken on rescaling or when a
//! caller asks for `S_k`.

use super::{Inequality, Sign};
use crate::geom::canonicalize;
use crate::law::MatrixLaw;
use crate::rng::SamplerState;

const RESCALE_HI: f64 = 1e200;
const RESCALE_LO: f64 = 1e-200;

pub(crate) struct Kernel<'a> {
    law: &'a MatrixLaw,
    dim: usize,
    mats: Vec<f64>,
}

impl<'a> Kernel<'a> {
    pub fn new(law: &'a MatrixLaw) -> Self {
        let mats = law
            .scaled_support()
            .iter()
            .flat_map(|g| g.entries().to_vec())
            .collect();
        Self {
            law,
            dim: law.dim(),
            mats,
        }
    }

    /// Kernel of the transposed atoms `gᵢᵀ`, same probabilities.
    pub fn transposed(law: &'a MatrixLaw) -> Self {
        let mats = law
            .scaled_support()
            .iter()
            .flat_map(|g| g.transpose().entries().to_vec())
            .collect();
        Self {
            law,
            dim: law.dim(),
            mats,
        }
    }

    pub fn cursor(&self) -> Cursor<'_, 'a> {
        Cursor {
            kernel: self,
            rng: SamplerState::new(0, 0),
            w: vec![0.0; self.dim],
            tmp: vec![0.0; self.dim],
            n2: 1.0,
            log_offset: 0.0,
            k: 0,
            barrier: None,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// `(σ(gᵢ, v), gᵢv/‖gᵢv‖)` for a unit vector `v`.
    pub fn one_step(&self, i: usize, v: &[f64], out: &mut [f64]) -> f64 {
        let d = self.dim;
        let m = &self.mats[i * d * d..(i + 1) * d * d];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r * d..(r + 1) * d]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let n = out.iter().map(|a| a * a).sum::<f64>().sqrt();
        out.iter_mut().for_each(|a| *a /= n);
        n.ln()
    }

    /// `gᵢv/‖gᵢv‖` without the cocycle.
    pub fn push_unit(&self, i: usize, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let m = &self.mats[i * d * d..(i + 1) * d * d];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r * d..(r + 1) * d]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let n = out.iter().map(|a| a * a).sum::<f64>().sqrt();
        out.iter_mut().for_each(|a| *a /= n);
    }
}

pub(crate) struct Cursor<'k, 'a> {
    kernel: &'k Kernel<'a>,
    rng: SamplerState,
    w: Vec<f64>,
    tmp: Vec<f64>,
    n2: f64,
    log_offset: f64,
    k: usize,
    barrier: Option<(f64, Sign, Inequality)>,
    lo: f64,
    hi: f64,
}

impl Cursor<'_, '_> {
    /// Restarts at unit vector `x` with the random stream `rng`.
    pub fn reset(&mut self, x: &[f64], rng: SamplerState) {
        self.w.copy_from_slice(x);
        self.n2 = x.iter().map(|a| a * a).sum();
        self.log_offset = 0.0;
        self.k = 0;
        self.rng = rng;
        self.update_thresholds();
    }

    /// Installs the killing barrier `t + sign·S_k < 0` (or `≤ 0`).
    pub fn set_barrier(&mut self, t: f64, sign: Sign, ineq: Inequality) {
        self.barrier = Some((t, sign, ineq));
        self.update_thresholds();
    }

    fn update_thresholds(&mut self) {
        let Some((t, sign, ineq)) = self.barrier else {
            self.lo = f64::NEG_INFINITY;
            self.hi = f64::INFINITY;
            return;
        };
        match sign {
            Sign::Plus => {
                let lo = (2.0 * (-t - self.log_offset)).exp();
                self.lo = if ineq == Inequality::Large {
                    lo.next_up()
                } else {
                    lo
                };
                self.hi = f64::INFINITY;
            }
            Sign::Minus => {
                let hi = (2.0 * (t - self.log_offset)).exp();
                self.hi = if ineq == Inequality::Large {
                    hi.next_down()
                } else {
                    hi
                };
                self.lo = f64::NEG_INFINITY;
            }
        }
    }

    #[cfg(test)]
    pub fn steps(&self) -> usize {
        self.k
    }

    /// `S_k`.
    pub fn sum(&self) -> f64 {
        self.log_offset + 0.5 * self.n2.ln()
    }

    /// Canonical unit vector of the current direction.
    pub fn direction(&self, out: &mut [f64]) {
        let n = self.n2.sqrt();
        out.iter_mut().zip(&self.w).for_each(|(o, w)| *o = w / n);
        canonicalize(out);
    }

    /// Unit vector of the current direction, without sign canonicalization.
    pub fn unit(&self, out: &mut [f64]) {
        let n = self.n2.sqrt();
        out.iter_mut().zip(&self.w).for_each(|(o, w)| *o = w / n);
    }

    #[inline]
    pub fn alive(&self) -> bool {
        self.n2 >= self.lo && self.n2 <= self.hi
    }

    /// One random step.
    #[inline]
    pub fn step(&mut self) {
        let kern = self.kernel;
        let i = kern.law.index_for_uniform(self.rng.uniform());
        let d = kern.dim;
        if d == 2 {
            let m = &kern.mats[4 * i..4 * i + 4];
            let (a, b) = (self.w[0], self.w[1]);
            let x = m[0] * a + m[1] * b;
            let y = m[2] * a + m[3] * b;
            self.w[0] = x;
            self.w[1] = y;
            self.n2 = x * x + y * y;
        } else {
            let m = &kern.mats[i * d * d..(i + 1) * d * d];
            for r in 0..d {
                self.tmp[r] = m[r * d..(r + 1) * d]
                    .iter()
                    .zip(&self.w)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            std::mem::swap(&mut self.w, &mut self.tmp);
            self.n2 = self.w.iter().map(|a| a * a).sum();
        }
        self.k += 1;
        if !(RESCALE_LO..=RESCALE_HI).contains(&self.n2) {
            self.rescale();
        }
    }

    fn rescale(&mut self) {
        let n = self.n2.sqrt();
        self.w.iter_mut().for_each(|a| *a /= n);
        self.log_offset += n.ln();
        self.n2 = self.w.iter().map(|a| a * a).sum();
        self.update_thresholds();
    }

    /// Steps until `k = upto` or the barrier kills the walk; returns the exit
    /// time if it happened.
    #[inline]
    pub fn run_killed(&mut self, upto: usize) -> Option<usize> {
        if self.kernel.dim == 2 {
            return self.run_killed_plane(upto);
        }
        while self.k < upto {
            self.step();
            if !self.alive() {
                return Some(self.k);
            }
        }
        None
    }

    // The planar loops keep the state in locals so the dependency chain
    // stays in registers.
    fn run_killed_plane(&mut self, upto: usize) -> Option<usize> {
        let kern = self.kernel;
        let (mut a, mut b) = (self.w[0], self.w[1]);
        let (mut lo, mut hi) = (self.lo, self.hi);
        let mut k = self.k;
        let mut out = None;
        while k < upto {
            let i = kern.law.index_for_uniform(self.rng.uniform());
            let m = &kern.mats[4 * i..4 * i + 4];
            let x = m[0] * a + m[1] * b;
            let y = m[2] * a + m[3] * b;
            a = x;
            b = y;
            k += 1;
            let mut n2 = x * x + y * y;
            if !(RESCALE_LO..=RESCALE_HI).contains(&n2) {
                self.w[0] = a;
                self.w[1] = b;
                self.n2 = n2;
                self.rescale();
                (a, b, n2, lo, hi) = (self.w[0], self.w[1], self.n2, self.lo, self.hi);
            }
            if !(n2 >= lo && n2 <= hi) {
                out = Some(k);
                break;
            }
        }
        self.w[0] = a;
        self.w[1] = b;
        self.n2 = a * a + b * b;
        self.k = k;
        out
    }

    /// Like `run_killed`, also returning `min sign·S_j` over the steps taken
    /// (`+∞` if none). The sign is that of the installed barrier.
    pub fn run_killed_tracking(&mut self, upto: usize) -> (Option<usize>, f64) {
        let sign = self.barrier.map_or(Sign::Plus, |b| b.1);
        if self.kernel.dim != 2 {
            let mut best = f64::INFINITY;
            while self.k < upto {
                self.step();
                best = best.min(sign.value() * self.sum());
                if !self.alive() {
                    return (Some(self.k), best);
                }
            }
            return (None, best);
        }
        let kern = self.kernel;
        let (mut a, mut b) = (self.w[0], self.w[1]);
        let (mut lo, mut hi) = (self.lo, self.hi);
        let mut k = self.k;
        let mut out = None;
        // Extreme of ‖w‖² in the current scale: min for Plus, max for Minus.
        let plus = sign == Sign::Plus;
        let mut ext = if plus { f64::INFINITY } else { 0.0 };
        let mut best = f64::INFINITY;
        let flush = |ext: f64, offset: f64, best: &mut f64| {
            if ext.is_finite() && ext > 0.0 {
                *best = best.min(sign.value() * (offset + 0.5 * ext.ln()));
            }
        };
        while k < upto {
            let i = kern.law.index_for_uniform(self.rng.uniform());
            let m = &kern.mats[4 * i..4 * i + 4];
            let x = m[0] * a + m[1] * b;
            let y = m[2] * a + m[3] * b;
            a = x;
            b = y;
            k += 1;
            let mut n2 = x * x + y * y;
            if !(RESCALE_LO..=RESCALE_HI).contains(&n2) {
                flush(ext, self.log_offset, &mut best);
                self.w[0] = a;
                self.w[1] = b;
                self.n2 = n2;
                self.rescale();
                (a, b, n2, lo, hi) = (self.w[0], self.w[1], self.n2, self.lo, self.hi);
                ext = if plus { f64::INFINITY } else { 0.0 };
            }
            ext = if plus { ext.min(n2) } else { ext.max(n2) };
            if !(n2 >= lo && n2 <= hi) {
                out = Some(k);
                break;
            }
        }
        flush(ext, self.log_offset, &mut best);
        self.w[0] = a;
        self.w[1] = b;
        self.n2 = a * a + b * b;
        self.k = k;
        (out, best)
    }

    /// Steps until `k = upto` without a barrier check; returns
    /// `min sign·S_j` over the steps taken (`+∞` if none).
    pub fn run_tracking_min(&mut self, upto: usize, sign: Sign) -> f64 {
        let mut best = f64::INFINITY;
        // record threshold in the current scale
        let mut rec = f64::NAN;
        let better = |n2: f64, rec: f64| match sign {
            Sign::Plus => !(n2 >= rec),
            Sign::Minus => !(n2 <= rec),
        };
        while self.k < upto {
            let before = self.log_offset;
            self.step();
            if self.log_offset != before && best.is_finite() {
                rec = (2.0 * (sign.value() * best - self.log_offset)).exp();
            }
            if better(self.n2, rec) {
                rec = self.n2;
                best = sign.value() * self.sum();
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SquareMatrix;

    #[test]
    fn killed_tracking_matches_brute_force() {
        let law = MatrixLaw::l0().recenter(0.3363);
        let k = Kernel::new(&law);
        let mut c = k.cursor();
        for p in 0..200 {
            for sign in [Sign::Plus, Sign::Minus] {
                c.reset(&[0.6, 0.8], SamplerState::new(4, p));
                c.set_barrier(2.0, sign, Inequality::Strict);
                let (exit, best) = c.run_killed_tracking(300);
                let end = c.steps();
                let path = crate::walk::simulate_path(
                    &law,
                    &crate::ProjectivePoint::new(vec![0.6, 0.8]).unwrap(),
                    300,
                    &mut SamplerState::new(4, p),
                );
                let sums = &path.prefix_sums[1..=end];
                let brute = sums
                    .iter()
                    .map(|s| sign.value() * s)
                    .fold(f64::INFINITY, f64::min);
                assert!((best - brute).abs() < 1e-9);
                let first = sums
                    .iter()
                    .position(|s| 2.0 + sign.value() * s < 0.0)
                    .map(|j| j + 1);
                assert_eq!(exit, first);
            }
        }
    }

    #[test]
    fn cursor_matches_log_sum_through_rescales() {
        let law = MatrixLaw::dirac(SquareMatrix::scalar(2, 1e30));
        let k = Kernel::new(&law);
        let mut c = k.cursor();
        c.reset(&[0.6, 0.8], SamplerState::new(1, 0));
        for _ in 0..50 {
            c.step();
        }
        assert!((c.sum() - 50.0 * 1e30f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn tracking_min_sees_every_step() {
        let law = MatrixLaw::l0();
        let k = Kernel::new(&law);
        let mut c = k.cursor();
        c.reset(&[1.0, 0.0], SamplerState::new(4, 2));
        let m = c.run_tracking_min(300, Sign::Plus);
        let mut c2 = k.cursor();
        c2.reset(&[1.0, 0.0], SamplerState::new(4, 2));
        let mut best = f64::INFINITY;
        for _ in 0..300 {
            c2.step();
            best = best.min(c2.sum());
        }
        assert!((m - best).abs() < 1e-12);
    }
}
