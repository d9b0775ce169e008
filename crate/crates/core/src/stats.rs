//! Small statistics helpers shared by the estimators and the checks.

use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Count, sum and sum of squares of one observable.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    pub count: u64,
    sum: KahanSum,
    sumsq: KahanSum,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sumsq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum.merge(&other.sum);
        self.sumsq.merge(&other.sumsq);
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum.value() / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        ((self.sumsq.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Merges `parts` pairwise in index order, so the result only depends on the
/// partition, never on scheduling.
pub fn tree_reduce<T: Clone>(parts: &[T], merge: &impl Fn(&mut T, &T)) -> Option<T> {
    match parts.len() {
        0 => None,
        1 => Some(parts[0].clone()),
        n => {
            let (l, r) = parts.split_at(n / 2);
            let mut a = tree_reduce(l, merge)?;
            let b = tree_reduce(r, merge)?;
            merge(&mut a, &b);
            Some(a)
        }
    }
}

/// Rayleigh density `t e^{-t²/2}` on `t ≥ 0`.
pub fn rayleigh_pdf(t: f64) -> f64 {
    if t >= 0.0 {
        t * (-t * t / 2.0).exp()
    } else {
        0.0
    }
}

/// Rayleigh distribution function `1 − e^{-t²/2}` on `t ≥ 0`.
pub fn rayleigh_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t * t / 2.0).exp_m1()
    } else {
        0.0
    }
}

/// Kolmogorov distance between the empirical law of `samples` and a
/// continuous distribution function.
pub fn kolmogorov_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Composite Simpson rule with `intervals` (rounded up to even) sub-intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals.max(2) + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-20);
    }

    #[test]
    fn moments_basic() {
        let mut m = Moments::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(x);
        }
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_normalized() {
        assert_eq!(rayleigh_cdf(0.0), 0.0);
        assert!((rayleigh_cdf(40.0) - 1.0).abs() < 1e-15);
        assert_eq!(rayleigh_pdf(-1.0), 0.0);
        let total = simpson(rayleigh_pdf, 0.0, 40.0, 20_000);
        assert!((total - 1.0).abs() < 1e-10);
        let partial = simpson(rayleigh_pdf, 0.0, 1.3, 2_000);
        assert!((partial - rayleigh_cdf(1.3)).abs() < 1e-12);
    }

    #[test]
    fn tree_reduce_is_partition_only() {
        let parts: Vec<f64> = (0..37).map(|i| (i as f64).sin() * 1e-3 + 1.0).collect();
        let a = tree_reduce(&parts, &|a: &mut f64, b: &f64| *a += *b).unwrap();
        let b = tree_reduce(&parts, &|a: &mut f64, b: &f64| *a += *b).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = kolmogorov_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }
}
