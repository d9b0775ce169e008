//! The ten acceptance criteria at full scale, run in order with one summary
//! line each. Takes several minutes; every row of every check must pass.

use condwalk::verify::{
    run_suite, AppendixConfig, CaravennaConfig, CcltConfig, CheckKind, ClltConfig,
    ExperimentConfig, IdentitiesConfig, LltConfig, OracleConfig, Record, ReversalConfig, RhoConfig,
    SpectralCheckConfig, Suite,
};
use std::time::{Duration, Instant};

struct Outcome {
    label: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

impl Outcome {
    fn line(&self) -> String {
        let ok = self.pass && self.elapsed <= self.limit;
        format!(
            "{} {:<28} {:>7.1}s (limit {:>4}s)  {}",
            if ok { "PASS" } else { "FAIL" },
            self.label,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs(),
            self.detail
        )
    }
}

/// Every row passes and each required row name prefix is present.
fn judge(rows: &[Record], required: &[&str]) -> (bool, String) {
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.clone())
        .collect();
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|p| !rows.iter().any(|r| r.name.starts_with(p)))
        .collect();
    let detail = if failed.is_empty() && missing.is_empty() {
        format!("{} rows", rows.len())
    } else {
        format!("failed {failed:?} missing {missing:?}")
    };
    (failed.is_empty() && missing.is_empty(), detail)
}

fn run_check(
    suite: &Suite,
    label: &'static str,
    kind: CheckKind,
    limit_s: u64,
    required: &[&str],
) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match suite.run(kind) {
        Ok(rows) => judge(&rows, required),
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome {
        label,
        pass,
        detail,
        elapsed: start.elapsed(),
        limit: Duration::from_secs(limit_s),
    }
}

/// All checks at toy scale; enough to exercise every parallel code path.
fn reduced() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        centering_grid: 1024,
        v_paths: 4000,
        seed: 20,
        ..Default::default()
    };
    c.identities = IdentitiesConfig {
        instances: 500,
        max_len: 6,
    };
    c.reversal = ReversalConfig {
        n_max: 4,
        cases: 3,
        ..Default::default()
    };
    c.oracle = OracleConfig {
        laws: 4,
        n_max: 5,
        paths: 4000,
    };
    c.spectral = SpectralCheckConfig {
        n: 100,
        paths: 4000,
        occupation_n: 50,
        occupation_paths: 4000,
        radius_ts: vec![1.0],
    };
    c.llt = LltConfig {
        schedule: vec![32, 64],
        paths: 4000,
        enumeration_n: 5,
    };
    c.cclt = CcltConfig {
        n: 64,
        paths: 20_000,
    };
    c.cllt = ClltConfig {
        schedule: vec![32, 64, 128],
        paths: 20_000,
        tail: 2,
    };
    c.caravenna = CaravennaConfig {
        n: 64,
        paths: 20_000,
        u_steps: 6,
        u_spacing: 0.5,
    };
    c.rho = RhoConfig {
        n: 32,
        paths: 4000,
        v_paths: 4000,
    };
    c.appendix = AppendixConfig {
        schedule: vec![32, 64],
        paths: 10_000,
        depth: 30,
        t: 1.0,
    };
    c
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut detail = String::new();
    for workers in [1, 4, 8, 4] {
        let mut c = reduced();
        c.workers = workers;
        match run_suite(&c) {
            Ok(r) => {
                if let Some(e) = &r.error {
                    detail = format!("workers {workers}: {e}");
                }
                reports.push((r.to_csv(), r.to_json()));
            }
            Err(e) => detail = format!("workers {workers}: {e}"),
        }
    }
    let identical = reports.len() == 4 && reports.iter().all(|r| *r == reports[0]);
    if detail.is_empty() {
        detail = format!(
            "{} rows, byte-identical under 1/4/8 workers and on repeat",
            reports[0].0.lines().count() - 1
        );
    }
    Outcome {
        label: "C10 determinism",
        pass: identical && detail.contains("byte-identical"),
        detail,
        elapsed: start.elapsed(),
        limit: Duration::from_secs(300),
    }
}

#[test]
fn acceptance() {
    let cfg = ExperimentConfig::default();
    let prep = Instant::now();
    let suite = Suite::prepare(&cfg).expect("suite setup");
    println!(
        "setup: lambda_hat {:.6} upsilon^2 {:.6} residual {:.1e} in {:.1}s",
        suite.lambda_hat,
        suite.upsilon_sq,
        suite.lambda_residual,
        prep.elapsed().as_secs_f64()
    );
    let outcomes = vec![
        run_check(
            &suite,
            "C1 algebraic identities",
            CheckKind::Identities,
            10,
            &[
                "cocycle",
                "dual_cocycle",
                "cohomological",
                "cohomological_restated",
                "reversed_array",
            ],
        ),
        run_check(
            &suite,
            "C2 reversal identity",
            CheckKind::Reversal,
            60,
            &["case"],
        ),
        run_check(
            &suite,
            "C3 estimator oracle",
            CheckKind::Oracle,
            120,
            &[
                "V law",
                "persistence law",
                "local_prob law",
                "exit_local law",
                "rho_inner law",
            ],
        ),
        run_check(
            &suite,
            "C4 spectral consistency",
            CheckKind::Spectral,
            60,
            &["lambda_recentered", "upsilon_sq", "nu_w1", "richardson"],
        ),
        run_check(
            &suite,
            "C5 conditioned CLT",
            CheckKind::Cclt,
            300,
            &["survivors", "ks_rayleigh", "sqrt_n_persistence"],
        ),
        run_check(
            &suite,
            "C6 main CLLT scaling",
            CheckKind::Cllt,
            600,
            &[
                "cauchy_local",
                "cauchy_exit",
                "factorization",
                "bound_local",
                "bound_exit",
            ],
        ),
        run_check(
            &suite,
            "C7 Caravenna-type",
            CheckKind::Caravenna,
            300,
            &["max_normalized_deviation"],
        ),
        run_check(
            &suite,
            "C8 rho harmonicity",
            CheckKind::Rho,
            180,
            &["r_harmonic_gap", "q_harmonic_v"],
        ),
        run_check(
            &suite,
            "C9 appendix shape",
            CheckKind::Appendix,
            300,
            &["loglog_slope", "ks_decreasing"],
        ),
        determinism(),
    ];
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !(o.pass && o.elapsed <= o.limit))
        .map(|o| o.label)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
