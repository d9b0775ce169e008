use super::*;
use crate::geom::{cocycle_sigma, proj_distance, SquareMatrix};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn e1() -> ProjectivePoint {
    ProjectivePoint::basis(2, 0)
}

fn identity_law() -> MatrixLaw {
    MatrixLaw::dirac(SquareMatrix::identity(2))
}

/// L0 shifted close to zero drift; the oracle comparisons below do not
/// depend on the exact shift.
fn l0_shifted() -> MatrixLaw {
    MatrixLaw::l0().recenter(0.337)
}

fn cfg(n: usize, paths: u64, seed: u64) -> WalkConfig {
    WalkConfig::new(e1(), n, paths, seed)
}

/// Asserts `|mc − E f| ≤ 4σ`, with `σ` the larger of the exact and reported
/// standard errors.
fn assert_4sigma(mc: &EstimateWithCI, moments: (f64, f64), what: &str) {
    let (m1, m2) = moments;
    let exact_se = ((m2 - m1 * m1).max(0.0) / mc.n_samples as f64).sqrt();
    let se = exact_se.max(mc.stderr);
    assert!(
        (mc.value - m1).abs() <= 4.0 * se + 1e-12,
        "{what}: mc {} ± {} vs exact {m1}",
        mc.value,
        se
    );
}

#[test]
fn identity_law_paths_are_flat() {
    let mut s = SamplerState::new(1, 0);
    let x = ProjectivePoint::new(vec![0.3, -0.7]).unwrap();
    let p = simulate_path(&identity_law(), &x, 20, &mut s);
    assert!(p.increments.iter().all(|&v| v.abs() < 1e-15));
    assert!(proj_distance(&p.end_point, &x) < 1e-15);
}

#[test]
fn scalar_law_paths_are_linear() {
    let law = MatrixLaw::dirac(SquareMatrix::scalar(2, 3.0));
    let p = simulate_path(&law, &e1(), 30, &mut SamplerState::new(2, 0));
    for k in 0..=30 {
        assert!((p.prefix_sums[k] - k as f64 * 3f64.ln()).abs() < 1e-12);
    }
    assert_eq!(p.running_min[1], 3f64.ln());
}

#[test]
fn path_matches_direct_product() {
    let law = MatrixLaw::l0();
    let mut s = SamplerState::new(3, 7);
    let p = simulate_path(&law, &e1(), 50, &mut s);
    // replay the indices and form the product with rescaling
    let mut r = SamplerState::new(3, 7);
    let mut prod = SquareMatrix::identity(2);
    let mut log_scale = 0.0;
    for _ in 0..50 {
        let g = law.sample(&mut r);
        prod = g.mul(&prod);
        let c = prod.op_norm();
        prod = prod.scaled(1.0 / c);
        log_scale += c.ln();
    }
    let direct = log_scale + cocycle_sigma(&prod, &e1());
    assert!((p.prefix_sums[50] - direct).abs() < 1e-8);
    for k in 1..=50 {
        assert!((p.prefix_sums[k] - p.prefix_sums[k - 1] - p.increments[k - 1]).abs() < 1e-12);
    }
}

#[test]
fn exit_time_examples() {
    let law = l0_shifted();
    let p = simulate_path(&law, &e1(), 100, &mut SamplerState::new(5, 0));
    if p.prefix_sums[1] <= 0.0 {
        assert_eq!(first_exit_time(&p, -1.0, Sign::Plus), ExitTime::Exited(1));
    }
    assert_eq!(first_exit_time(&p, 1e6, Sign::Plus), ExitTime::Survived);
    assert_eq!(first_exit_time(&p, 1e6, Sign::Minus), ExitTime::Survived);
    let flat = simulate_path(&identity_law(), &e1(), 5, &mut SamplerState::new(0, 0));
    assert_eq!(first_exit_time(&flat, 0.0, Sign::Plus), ExitTime::Survived);
    assert_eq!(
        first_exit_time_with(&flat, 0.0, Sign::Plus, Inequality::Large),
        ExitTime::Exited(1)
    );
}

#[test]
fn exit_time_distribution_matches_enumeration() {
    let law = l0_shifted();
    let n = 5;
    let paths = 100_000u64;
    let mut counts = [0u64; 6];
    for p in 0..paths {
        let path = simulate_path(&law, &e1(), n, &mut SamplerState::new(11, p));
        match first_exit_time(&path, 1.0, Sign::Plus) {
            ExitTime::Exited(k) => counts[k - 1] += 1,
            ExitTime::Survived => counts[5] += 1,
        }
    }
    for (slot, &c) in counts.iter().enumerate() {
        let exact = enumerate_exact(&law, &e1(), 1.0, n, |v| {
            match v.exit_time(Sign::Plus, Inequality::Strict) {
                ExitTime::Exited(k) => (k - 1 == slot) as u8 as f64,
                ExitTime::Survived => (slot == 5) as u8 as f64,
            }
        })
        .unwrap();
        let f = c as f64 / paths as f64;
        let se = (exact * (1.0 - exact) / paths as f64).sqrt();
        assert!(
            (f - exact).abs() <= 4.0 * se + 1e-12,
            "slot {slot}: {f} vs {exact}"
        );
    }
}

#[test]
fn trivial_estimates_on_identity_law() {
    let law = identity_law();
    let c = cfg(10, 1000, 1);
    assert_eq!(
        estimate_v(&law, &c, 2.0, Centering::Verified(0.0))
            .unwrap()
            .value,
        2.0
    );
    assert_eq!(
        estimate_v(&law, &c, -1.0, Centering::Unchecked)
            .unwrap()
            .value,
        0.0
    );
    assert_eq!(estimate_persistence(&law, &c, 0.5).unwrap().value, 1.0);
    assert_eq!(estimate_persistence(&law, &c, -0.5).unwrap().value, 0.0);
    assert_eq!(
        estimate_local_prob(&law, &c, 1.0, 0.0, 2.0)
            .unwrap()
            .estimate
            .value,
        1.0
    );
    assert_eq!(
        estimate_local_prob(&law, &c, 1.0, 2.0, 3.0)
            .unwrap()
            .estimate
            .value,
        0.0
    );
    assert_eq!(estimate_exit_local(&law, &c, 1.0).unwrap().value, 0.0);
    assert_eq!(estimate_exit_local(&law, &c, -1.0).unwrap().value, 0.0);
    assert_eq!(
        estimate_exit_local(&law, &cfg(1, 1000, 1), -1.0)
            .unwrap()
            .value,
        1.0
    );
}

#[test]
fn not_centered_is_rejected() {
    let r = estimate_v(
        &MatrixLaw::l0(),
        &cfg(5, 10, 0),
        1.0,
        Centering::Verified(0.33),
    );
    assert!(matches!(r, Err(Error::NotCentered { .. })));
}

#[test]
fn estimators_match_enumeration_on_shifted_l0() {
    let law = l0_shifted();
    let x = e1();
    let paths = 200_000;
    let v = estimate_v(&law, &cfg(6, paths, 21), 1.0, Centering::Unchecked).unwrap();
    let ex = enumerate_moments(&law, &x, 1.0, 6, |p| {
        if p.survives(6, Sign::Plus, Inequality::Strict) {
            p.value(Sign::Plus)
        } else {
            0.0
        }
    })
    .unwrap();
    assert_4sigma(&v, ex, "V");

    let pers = estimate_persistence(&law, &cfg(4, paths, 22), 1.0).unwrap();
    let ex = enumerate_moments(&law, &x, 1.0, 4, |p| {
        p.survives(4, Sign::Plus, Inequality::Strict) as u8 as f64
    })
    .unwrap();
    assert_4sigma(&pers, ex, "persistence");

    let loc = estimate_local_prob(&law, &cfg(5, paths, 23), 1.0, 0.0, 1.0).unwrap();
    let ex = enumerate_moments(&law, &x, 1.0, 5, |p| {
        let v = p.value(Sign::Plus);
        (p.survives(4, Sign::Plus, Inequality::Strict) && (0.0..=1.0).contains(&v)) as u8 as f64
    })
    .unwrap();
    assert_4sigma(&loc.estimate, ex, "local");
    assert!(loc.samples.len() as u64 <= paths);

    let exit = estimate_exit_local(&law, &cfg(4, paths, 24), 1.0).unwrap();
    let ex = enumerate_moments(&law, &x, 1.0, 4, |p| {
        (p.exit_time(Sign::Plus, Inequality::Strict) == ExitTime::Exited(4)) as u8 as f64
    })
    .unwrap();
    assert_4sigma(&exit, ex, "exit local");
}

#[test]
fn rho_integral_matches_enumeration() {
    let law = l0_shifted();
    let h = StepFunction::indicator(0.0, 1.0).unwrap();
    let n = 5;
    let grid = TGrid::new(16.0, 0.05).unwrap();
    let est = estimate_rho_integral(&law, &cfg(n, 100_000, 31), &h, &grid).unwrap();
    let ex = enumerate_moments(&law, &e1(), 0.0, n, |p| {
        let min = p.sums[1..n].iter().fold(f64::INFINITY, |a, &b| a.min(b));
        (0..grid.len())
            .map(|j| {
                let t = grid.node(j);
                if t + min < 0.0 {
                    0.0
                } else {
                    grid.weight(j) * t * h.at(t + p.sums[n])
                }
            })
            .sum()
    })
    .unwrap();
    assert_4sigma(&est, ex, "rho integral");
    assert!(est.value > 0.0);
}

#[test]
fn rho_integral_zero_and_linearity() {
    let law = l0_shifted();
    let c = cfg(8, 20_000, 5);
    let grid = TGrid::new(20.0, 0.05).unwrap();
    let zero = estimate_rho_integral(&law, &c, &StepFunction::zero(), &grid).unwrap();
    assert_eq!(zero.value, 0.0);
    let h1 = StepFunction::indicator(0.0, 1.0).unwrap();
    let h2: StepFunction = "0.5:2:3".parse().unwrap();
    let a = estimate_rho_integral(&law, &c, &h1, &grid).unwrap().value;
    let b = estimate_rho_integral(&law, &c, &h2, &grid).unwrap().value;
    let ab = estimate_rho_integral(&law, &c, &SumTarget(h1, h2), &grid)
        .unwrap()
        .value;
    assert!((a + b - ab).abs() <= 1e-12 * ab.abs().max(1.0));
}

#[test]
fn short_grid_is_flagged() {
    let law = l0_shifted();
    let h = StepFunction::indicator(0.0, 1.0).unwrap();
    let grid = TGrid::new(2.0, 0.05).unwrap();
    let r = estimate_rho_integral(&law, &cfg(30, 5000, 2), &h, &grid);
    assert!(matches!(r, Err(Error::GridTooShort { .. })));
}

#[test]
fn ensemble_replays_simulate_path() {
    let law = l0_shifted();
    let c = cfg(40, 1, 99);
    let v = estimate_v(&law, &c, 3.0, Centering::Unchecked)
        .unwrap()
        .value;
    let p = simulate_path(&law, &e1(), 40, &mut SamplerState::new(99, 0));
    let expected = match first_exit_time(&p, 3.0, Sign::Plus) {
        ExitTime::Survived => 3.0 + p.prefix_sums[40],
        ExitTime::Exited(_) => 0.0,
    };
    assert!((v - expected).abs() < 1e-9);
}

#[test]
fn results_do_not_depend_on_workers() {
    let law = l0_shifted();
    let base = cfg(60, 5000, 8);
    let a = estimate_v(&law, &base.clone().workers(1), 1.0, Centering::Unchecked).unwrap();
    let b = estimate_v(&law, &base.clone().workers(3), 1.0, Centering::Unchecked).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
}

#[test]
fn persistence_and_v_monotone() {
    let law = l0_shifted();
    let paths = 50_000;
    let p = |n, t| estimate_persistence(&law, &cfg(n, paths, 4), t).unwrap();
    let (a, b) = (p(20, 1.0), p(40, 1.0));
    assert!(b.value <= a.value + 2.0 * a.stderr.hypot(b.stderr));
    let (a, b) = (p(20, 1.0), p(20, 2.0));
    assert!(b.value + 2.0 * a.stderr.hypot(b.stderr) >= a.value);
    let v = |t| estimate_v(&law, &cfg(20, paths, 4), t, Centering::Unchecked).unwrap();
    let (a, b) = (v(1.0), v(2.0));
    assert!(b.value + 2.0 * a.stderr.hypot(b.stderr) >= a.value);
}

#[test]
fn v_is_q_harmonic() {
    let law = l0_shifted();
    let (n, t, paths) = (40, 1.0, 200_000);
    let lhs = estimate_v(&law, &cfg(n, paths, 1), t, Centering::Unchecked).unwrap();
    let mut rhs = 0.0;
    let mut var = 0.0;
    for (i, (g, p)) in law.scaled_support().iter().zip(law.probs()).enumerate() {
        let s = cocycle_sigma(g, &e1());
        if t + s < 0.0 {
            continue;
        }
        let gx = crate::geom::act(g, &e1());
        let c = WalkConfig::new(gx, n - 1, paths, 100 + i as u64);
        let e = estimate_v(&law, &c, t + s, Centering::Unchecked).unwrap();
        rhs += p * e.value;
        var += (p * e.stderr).powi(2);
    }
    let se = (lhs.stderr.powi(2) + var).sqrt();
    assert!(
        (lhs.value - rhs).abs() <= 3.0 * se,
        "{} vs {rhs} (se {se})",
        lhs.value
    );
}

#[test]
fn projective_contraction() {
    let law = MatrixLaw::l0();
    let x = e1();
    let x2 = ProjectivePoint::basis(2, 1);
    let median = |n: usize| {
        let mut d: Vec<f64> = (0..2001)
            .map(|p| {
                let a = simulate_path(&law, &x, n, &mut SamplerState::new(6, p));
                let b = simulate_path(&law, &x2, n, &mut SamplerState::new(6, p));
                proj_distance(&a.end_point, &b.end_point)
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[1000]
    };
    let (m10, m40) = (median(10), median(40));
    assert!(m40 < m10 * 1e-3, "{m10} {m40}");
}

fn small_law() -> impl Strategy<Value = MatrixLaw> {
    (2usize..=3)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), k),
                prop::collection::vec(0.2f64..1.0, k),
                -0.3f64..0.3,
            )
        })
        .prop_filter_map("singular atom", |(ms, ws, shift)| {
            let support: Option<Vec<SquareMatrix>> = ms
                .into_iter()
                .map(|e| {
                    let g = SquareMatrix::new(2, e).ok()?;
                    (g.det().abs() > 0.2).then_some(g)
                })
                .collect();
            let total: f64 = ws.iter().sum();
            let probs = ws.iter().map(|w| w / total).collect();
            MatrixLaw::new(support?, probs, shift).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, rng_seed: RngSeed::Fixed(2024), ..ProptestConfig::default() })]

    #[test]
    fn estimators_agree_with_oracle(law in small_law(), n in 1usize..=6, t in 0.0f64..2.0, seed in 0u64..1000) {
        let x = ProjectivePoint::new(vec![1.0, 0.4]).unwrap();
        let c = WalkConfig::new(x.clone(), n, 20_000, seed);
        let pers = estimate_persistence(&law, &c, t).unwrap();
        let ex = enumerate_moments(&law, &x, t, n, |p| p.survives(n, Sign::Plus, Inequality::Strict) as u8 as f64).unwrap();
        assert_4sigma(&pers, ex, "persistence");
        let v = estimate_v(&law, &c, t, Centering::Unchecked).unwrap();
        let ex = enumerate_moments(&law, &x, t, n, |p| {
            if p.survives(n, Sign::Plus, Inequality::Strict) { p.value(Sign::Plus) } else { 0.0 }
        }).unwrap();
        assert_4sigma(&v, ex, "V");
        let cm = c.clone().sign(Sign::Minus);
        let pm = estimate_persistence(&law, &cm, t).unwrap();
        let ex = enumerate_moments(&law, &x, t, n, |p| p.survives(n, Sign::Minus, Inequality::Strict) as u8 as f64).unwrap();
        assert_4sigma(&pm, ex, "checked persistence");
    }
}
