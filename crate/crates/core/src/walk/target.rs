//! Target functions `h(x, t)` and the `t`-grid used for ρ-integrals.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// A function on `ℙ(V) × ℝ`, vanishing in `t` outside `t_support()`.
pub trait TargetFunction: Sync {
    /// `x` is the canonical unit vector of the line.
    fn eval(&self, x: &[f64], t: f64) -> f64;

    /// Closed interval outside of which `eval` is zero.
    fn t_support(&self) -> (f64, f64);
}

/// One piece `v·1{a ≤ t < b}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub v: f64,
}

/// Finite sum of half-open indicator pieces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepFunction {
    pieces: Vec<Piece>,
}

impl StepFunction {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        for (i, p) in pieces.iter().enumerate() {
            if !(p.a.is_finite() && p.b.is_finite() && p.v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "piece {i}: non-finite value"
                )));
            }
            if p.a >= p.b {
                return Err(Error::InvalidArgument(format!(
                    "piece {i}: need a < b, got {} >= {}",
                    p.a, p.b
                )));
            }
        }
        Ok(Self { pieces })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `1{a ≤ t < b}`.
    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![Piece { a, b, v: 1.0 }])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.v == 0.0)
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.a <= t && t < p.b)
            .map(|p| p.v)
            .sum()
    }

    /// Smallest closed interval containing every piece.
    pub fn support(&self) -> (f64, f64) {
        if self.pieces.is_empty() {
            return (0.0, 0.0);
        }
        let lo = self
            .pieces
            .iter()
            .map(|p| p.a)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .pieces
            .iter()
            .map(|p| p.b)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn integral(&self) -> f64 {
        self.pieces.iter().map(|p| p.v * (p.b - p.a)).sum()
    }

    /// `∫_{t ≥ lower} self(t + c) · other(t + c_other) dt`, exactly.
    pub fn overlap_integral(&self, c: f64, other: &StepFunction, c_other: f64, lower: f64) -> f64 {
        let mut total = 0.0;
        for p in &self.pieces {
            for q in &other.pieces {
                let lo = (p.a - c).max(q.a - c_other).max(lower);
                let hi = (p.b - c).min(q.b - c_other);
                if hi > lo {
                    total += p.v * q.v * (hi - lo);
                }
            }
        }
        total
    }

    /// `t ↦ self(t) + other(t)`.
    pub fn plus(&self, other: &StepFunction) -> StepFunction {
        let mut pieces = self.pieces.clone();
        pieces.extend_from_slice(&other.pieces);
        StepFunction { pieces }
    }
}

impl FromStr for StepFunction {
    type Err = Error;

    /// Parses `"a1:b1:v1,a2:b2:v2"`; an empty string is the zero function.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::zero());
        }
        let pieces = s
            .split(',')
            .enumerate()
            .map(|(i, item)| {
                let parts: Vec<&str> = item.split(':').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidArgument(format!(
                        "piece {i}: expected a:b:v, got {item:?}"
                    )));
                }
                let num = |x: &str| {
                    x.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("piece {i}: {x:?} is not a number"))
                    })
                };
                Ok(Piece {
                    a: num(parts[0])?,
                    b: num(parts[1])?,
                    v: num(parts[2])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pieces)
    }
}

impl fmt::Display for StepFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .pieces
            .iter()
            .map(|p| format!("{}:{}:{}", p.a, p.b, p.v))
            .collect();
        write!(f, "{}", items.join(","))
    }
}

impl TargetFunction for StepFunction {
    fn eval(&self, _x: &[f64], t: f64) -> f64 {
        self.at(t)
    }

    fn t_support(&self) -> (f64, f64) {
        self.support()
    }
}

/// `h(x, t) = f(x) · step(t)`.
pub struct ProductTarget<F> {
    pub proj: F,
    pub step: StepFunction,
}

impl<F: Fn(&[f64]) -> f64 + Sync> TargetFunction for ProductTarget<F> {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let s = self.step.at(t);
        if s == 0.0 {
            0.0
        } else {
            (self.proj)(x) * s
        }
    }

    fn t_support(&self) -> (f64, f64) {
        self.step.support()
    }
}

/// Pointwise sum of two targets.
pub struct SumTarget<A, B>(pub A, pub B);

impl<A: TargetFunction, B: TargetFunction> TargetFunction for SumTarget<A, B> {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.0.eval(x, t) + self.1.eval(x, t)
    }

    fn t_support(&self) -> (f64, f64) {
        let (a, b) = (self.0.t_support(), self.1.t_support());
        (a.0.min(b.0), a.1.max(b.1))
    }
}

/// Uniform grid `t_j = j·step`, `j = 0..len`, on `[0, upper]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TGrid {
    step: f64,
    len: usize,
}

impl TGrid {
    pub fn new(upper: f64, step: f64) -> Result<Self> {
        if !(upper > 0.0 && step > 0.0 && upper.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad grid: upper {upper}, step {step}"
            )));
        }
        let len = (upper / step).ceil() as usize + 1;
        Ok(Self { step, len })
    }

    /// Default grid for a target supported in `t ≤ t_h`: upper limit
    /// `t_h + 10·υ√n`, step `min(0.1, υ√n/200)`.
    pub fn for_target(t_h: f64, upsilon: f64, n: usize) -> Result<Self> {
        let scale = upsilon * (n as f64).sqrt();
        Self::new(t_h.max(0.0) + 10.0 * scale, (scale / 200.0).min(0.1))
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn upper(&self) -> f64 {
        self.node(self.len - 1)
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    /// Trapezoid weight of node `j`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.len {
            self.step / 2.0
        } else {
            self.step
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let h: StepFunction = "0:1:2, 0.5:3:-1".parse().unwrap();
        assert_eq!(h.at(0.25), 2.0);
        assert_eq!(h.at(0.75), 1.0);
        assert_eq!(h.at(1.0), -1.0);
        assert_eq!(h.at(3.0), 0.0);
        assert_eq!(h.support(), (0.0, 3.0));
        assert_eq!(h.integral(), 2.0 - 2.5);
        assert_eq!(h.to_string().parse::<StepFunction>().unwrap(), h);
        assert!("".parse::<StepFunction>().unwrap().is_zero());
    }

    #[test]
    fn parse_errors() {
        assert!("1:0:1".parse::<StepFunction>().is_err());
        assert!("0:1".parse::<StepFunction>().is_err());
        assert!("0:x:1".parse::<StepFunction>().is_err());
    }

    #[test]
    fn overlap_integral_exact() {
        let f = StepFunction::indicator(0.0, 2.0).unwrap();
        let g = StepFunction::indicator(1.0, 4.0).unwrap();
        // f(t) g(t + 0.5): [0,2) ∩ [0.5,3.5) = [0.5, 2)
        assert_eq!(f.overlap_integral(0.0, &g, 0.5, f64::NEG_INFINITY), 1.5);
        assert_eq!(f.overlap_integral(0.0, &g, 0.5, 1.0), 1.0);
        assert_eq!(f.overlap_integral(0.0, &g, 10.0, 0.0), 0.0);
    }

    #[test]
    fn trapezoid_weights() {
        let g = TGrid::new(1.0, 0.25).unwrap();
        assert_eq!(g.len(), 5);
        let total: f64 = (0..g.len()).map(|j| g.weight(j)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let int_t: f64 = (0..g.len()).map(|j| g.weight(j) * g.node(j)).sum();
        assert!((int_t - 0.5).abs() < 1e-15);
    }
}
