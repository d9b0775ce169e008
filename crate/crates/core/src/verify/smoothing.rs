//! Piecewise-linear ramps that sandwich the indicator of `(0, ∞)`.

use crate::error::{Error, Result};

/// `χ_ε(t)`: 0 for `t ≤ −ε`, `(t + ε)/ε` on `(−ε, 0)`, 1 for `t ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingFamily {
    eps: f64,
}

impl SmoothingFamily {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn chi(&self, t: f64) -> f64 {
        if t <= -self.eps {
            0.0
        } else if t >= 0.0 {
            1.0
        } else {
            (t + self.eps) / self.eps
        }
    }

    /// `1 − χ_ε(t)`.
    pub fn chi_bar(&self, t: f64) -> f64 {
        1.0 - self.chi(t)
    }

    /// `χ_ε(t − ε) ≤ 1{t > 0} ≤ χ_ε(t)`.
    pub fn sandwich_holds(&self, t: f64) -> bool {
        let ind = (t > 0.0) as u8 as f64;
        self.chi(t - self.eps) <= ind && ind <= self.chi(t)
    }
}
