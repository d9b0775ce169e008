//! One ensemble for a whole `n`-schedule and several starting values `t`.
//!
//! Each path is killed at the largest `t` only; the running minimum of
//! `sign·S_k` decides survival for the smaller ones. Path `p` uses the same
//! stream as in the single-`n` estimators, so every entry equals the
//! corresponding single estimate bit for bit.
//!
//! With `tail > 0` the last `tail` steps before each `n` are averaged exactly:
//! the path is stopped at `n − tail` and all continuations are enumerated
//! with their probabilities. This is the conditional expectation of the plain
//! indicator given the state at `n − tail`, so it has the same mean and a
//! smaller variance.

use super::engine::{merge_moments, run_chunked};
use super::kernel::Kernel;
use super::{killed, EstimateWithCI, Inequality, Sign, WalkConfig};
use crate::error::{Error, Result};
use crate::law::MatrixLaw;
use crate::rng::SamplerState;
use crate::stats::Moments;

/// Estimates at one `(t, n)`.
#[derive(Clone, Debug)]
pub struct ScheduleRow {
    pub t: f64,
    pub n: usize,
    /// `P(t + S_n ∈ [a, b], τ > n − 1)`.
    pub local: EstimateWithCI,
    /// `P(τ = n)`.
    pub exit: EstimateWithCI,
    /// `P(τ > n)`.
    pub persistence: EstimateWithCI,
}

/// Largest exactly averaged tail; `4^6` continuations per snapshot for L0.
pub const MAX_TAIL: usize = 6;

/// Rows ordered by `t` (as given), then by `n`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_schedule(
    law: &MatrixLaw,
    cfg: &WalkConfig,
    ts: &[f64],
    schedule: &[usize],
    a: f64,
    b: f64,
    tail: usize,
) -> Result<Vec<ScheduleRow>> {
    cfg.validate(law)?;
    if ts.is_empty() || schedule.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one t and one n".into(),
        ));
    }
    if schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "schedule must be strictly increasing and start at n >= 1".into(),
        ));
    }
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("t values must be finite".into()));
    }
    if tail > MAX_TAIL {
        return Err(Error::InvalidArgument(format!(
            "tail {tail} exceeds {MAX_TAIL}"
        )));
    }
    let (sign, ineq) = (cfg.sign, cfg.inequality);
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (nt, nn) = (ts.len(), schedule.len());
    // Layout: [(n, t, {local, exit, persistence})].
    let idx = |i: usize, j: usize, q: usize| (j * nt + i) * 3 + q;
    let kernel = Kernel::new(law);
    let x = cfg.x.vec();
    let d = law.dim();
    let tail_ctx = Tail {
        kernel: &kernel,
        probs: law.probs(),
        ts,
        sign,
        ineq,
        a,
        b,
        t_max,
    };
    let acc = run_chunked(
        cfg.paths,
        cfg.workers,
        || {
            (
                kernel.cursor(),
                vec![0.0; 3 * nt * nn],
                vec![vec![0.0; d]; tail + 1],
            )
        },
        || vec![Moments::default(); 3 * nt * nn],
        |(cur, out, vecs), acc, p| {
            out.iter_mut().for_each(|o| *o = 0.0);
            cur.reset(x, SamplerState::new(cfg.seed, p));
            cur.set_barrier(t_max, sign, ineq);
            let mut min_s = f64::INFINITY;
            if tail > 0 {
                for (j, &n) in schedule.iter().enumerate() {
                    let start = n.saturating_sub(tail);
                    let (exit, m) = cur.run_killed_tracking(start);
                    min_s = min_s.min(m);
                    if exit.is_some() {
                        break;
                    }
                    cur.unit(&mut vecs[0]);
                    let s0 = sign.value() * cur.sum();
                    let cells = &mut out[idx(0, j, 0)..idx(0, j + 1, 0)];
                    tail_ctx.descend(vecs, 0, n - start, s0, min_s, 1.0, cells);
                }
                acc.iter_mut().zip(out.iter()).for_each(|(m, &v)| m.push(v));
                return;
            }
            for (j, &n) in schedule.iter().enumerate() {
                let (exit, m) = cur.run_killed_tracking(n - 1);
                min_s = min_s.min(m);
                if exit.is_some() {
                    break;
                }
                cur.step();
                let s = sign.value() * cur.sum();
                for (i, &t) in ts.iter().enumerate() {
                    if killed(t + min_s, ineq) {
                        continue;
                    }
                    let v = t + s;
                    if a <= v && v <= b {
                        out[idx(i, j, 0)] = 1.0;
                    }
                    if killed(v, ineq) {
                        out[idx(i, j, 1)] = 1.0;
                    } else {
                        out[idx(i, j, 2)] = 1.0;
                    }
                }
                min_s = min_s.min(s);
                if !cur.alive() {
                    break;
                }
            }
            acc.iter_mut().zip(out.iter()).for_each(|(m, &v)| m.push(v));
        },
        merge_moments,
    );
    let est = |m: &Moments, name: &str| {
        EstimateWithCI::from_moments(m, cfg.seed).with_meta("estimator", name)
    };
    let mut rows = Vec::with_capacity(nt * nn);
    for (i, &t) in ts.iter().enumerate() {
        for (j, &n) in schedule.iter().enumerate() {
            rows.push(ScheduleRow {
                t,
                n,
                local: est(&acc[idx(i, j, 0)], "local_prob"),
                exit: est(&acc[idx(i, j, 1)], "exit_local"),
                persistence: est(&acc[idx(i, j, 2)], "persistence"),
            });
        }
    }
    Ok(rows)
}

/// Exact average over the last steps.
struct Tail<'k, 'a> {
    kernel: &'k Kernel<'a>,
    probs: &'k [f64],
    ts: &'k [f64],
    sign: Sign,
    ineq: Inequality,
    a: f64,
    b: f64,
    t_max: f64,
}

impl Tail<'_, '_> {
    /// `s` is `sign·S` at the current level and `min_s` the minimum of
    /// `sign·S_j` over the steps before it. Adds the weight of every
    /// continuation to `cells[3i + q]`.
    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        vecs: &mut [Vec<f64>],
        level: usize,
        depth: usize,
        s: f64,
        min_s: f64,
        w: f64,
        cells: &mut [f64],
    ) {
        if level == depth {
            for (i, &t) in self.ts.iter().enumerate() {
                if killed(t + min_s, self.ineq) {
                    continue;
                }
                let v = t + s;
                if self.a <= v && v <= self.b {
                    cells[3 * i] += w;
                }
                cells[3 * i + if killed(v, self.ineq) { 1 } else { 2 }] += w;
            }
            return;
        }
        // Steps strictly before the last one count for survival.
        let min_next = if level > 0 { min_s.min(s) } else { min_s };
        if killed(self.t_max + min_next, self.ineq) {
            return;
        }
        for (i, &p) in self.probs.iter().enumerate() {
            let (head, rest) = vecs.split_at_mut(level + 1);
            let sigma = self.kernel.one_step(i, &head[level], &mut rest[0]);
            self.descend(
                vecs,
                level + 1,
                depth,
                s + self.sign.value() * sigma,
                min_next,
                w * p,
                cells,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ProjectivePoint;
    use crate::walk::{estimate_exit_local, estimate_local_prob, estimate_persistence, Sign};

    #[test]
    fn matches_single_estimators_exactly() {
        let law = MatrixLaw::l0().recenter(0.3363);
        let x = ProjectivePoint::basis(2, 0);
        for sign in [Sign::Plus, Sign::Minus] {
            let cfg = WalkConfig::new(x.clone(), 40, 5000, 17).sign(sign);
            let rows =
                estimate_schedule(&law, &cfg, &[1.0, 2.5], &[3, 7, 8, 40], 0.0, 1.0, 0).unwrap();
            assert_eq!(rows.len(), 8);
            for r in &rows {
                let c = WalkConfig::new(x.clone(), r.n, 5000, 17).sign(sign);
                let local = estimate_local_prob(&law, &c, r.t, 0.0, 1.0)
                    .unwrap()
                    .estimate;
                assert_eq!(
                    r.local.value.to_bits(),
                    local.value.to_bits(),
                    "t={} n={}",
                    r.t,
                    r.n
                );
                assert_eq!(
                    r.exit.value.to_bits(),
                    estimate_exit_local(&law, &c, r.t).unwrap().value.to_bits()
                );
                assert_eq!(
                    r.persistence.value.to_bits(),
                    estimate_persistence(&law, &c, r.t).unwrap().value.to_bits()
                );
            }
        }
    }

    #[test]
    fn exact_tail_matches_enumeration() {
        use crate::walk::{enumerate_exact, Inequality};
        let law = MatrixLaw::l0().recenter(0.3363);
        let x = ProjectivePoint::basis(2, 0);
        // With tail ≥ n the whole walk is enumerated and the estimate is exact.
        let cfg = WalkConfig::new(x.clone(), 5, 3, 2);
        let rows = estimate_schedule(&law, &cfg, &[0.5, 1.5], &[2, 5], 0.0, 1.0, 5).unwrap();
        for r in &rows {
            let ex = |f: &dyn Fn(&crate::walk::PathView) -> f64| {
                enumerate_exact(&law, &x, r.t, r.n, f).unwrap()
            };
            let alive =
                |v: &crate::walk::PathView| v.survives(r.n - 1, Sign::Plus, Inequality::Strict);
            let local =
                ex(&|v| (alive(v) && (0.0..=1.0).contains(&v.value(Sign::Plus))) as u8 as f64);
            let exit = ex(&|v| (alive(v) && v.value(Sign::Plus) < 0.0) as u8 as f64);
            let pers = ex(&|v| v.survives(r.n, Sign::Plus, Inequality::Strict) as u8 as f64);
            assert!((r.local.value - local).abs() < 1e-12);
            assert!((r.exit.value - exit).abs() < 1e-12);
            assert!((r.persistence.value - pers).abs() < 1e-12);
            assert!(r.local.stderr < 1e-12);
        }
        // Partial tails stay unbiased.
        let cfg = WalkConfig::new(x.clone(), 7, 40_000, 3);
        let rows = estimate_schedule(&law, &cfg, &[1.0], &[7], 0.0, 1.0, 3).unwrap();
        let exact = enumerate_exact(&law, &x, 1.0, 7, |v| {
            (v.survives(6, Sign::Plus, Inequality::Strict)
                && (0.0..=1.0).contains(&v.value(Sign::Plus))) as u8 as f64
        })
        .unwrap();
        assert!((rows[0].local.value - exact).abs() < 4.0 * rows[0].local.stderr);
    }

    #[test]
    fn rejects_bad_schedule() {
        let law = MatrixLaw::l0();
        let cfg = WalkConfig::new(ProjectivePoint::basis(2, 0), 4, 10, 1);
        assert!(estimate_schedule(&law, &cfg, &[1.0], &[4, 4], 0.0, 1.0, 0).is_err());
        assert!(estimate_schedule(&law, &cfg, &[1.0], &[0, 4], 0.0, 1.0, 0).is_err());
        assert!(estimate_schedule(&law, &cfg, &[], &[4], 0.0, 1.0, 0).is_err());
    }
}
