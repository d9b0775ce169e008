use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use condwalk::reversal::{reversal_check, ReversalMode};
use condwalk::spectral::{spectral_summary, CircleGrid, Discretization};
use condwalk::verify::{run_suite, ExperimentConfig};
use condwalk::walk::{
    estimate_exit_local, estimate_local_prob, estimate_persistence, estimate_v, Centering,
    EstimateWithCI, ProductTarget, Sign, StepFunction, WalkConfig,
};
use condwalk::{DualProjectivePoint, MatrixLaw, ProjectivePoint};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "condwalk",
    version,
    about = "Conditioned random walks on linear groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimates of V, persistence, exit and local probabilities.
    Simulate(SimulateArgs),
    /// Both sides of the reversal identity for a step target.
    ReversalCheck(ReversalArgs),
    /// Lyapunov exponent, variance and stationary weights on a circle grid.
    Spectral(SpectralArgs),
    /// Runs the checks of an experiment config and writes report.csv/report.json.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SignArg {
    Plus,
    Minus,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Enumerate,
    Mc,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Law JSON file, or `builtin:l0`.
    #[arg(long)]
    law: String,
    /// Starting direction, comma separated.
    #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
    x: String,
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "plus")]
    sign: SignArg,
    /// Interval of the local probability.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    b: f64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReversalArgs {
    #[arg(long)]
    law: String,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "enumerate")]
    mode: ModeArg,
    /// Step function in t, `a1:b1:v1,...`.
    #[arg(long, allow_hyphen_values = true)]
    h: String,
    #[arg(long, allow_hyphen_values = true)]
    psi: String,
    #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
    x: String,
    /// Dual direction.
    #[arg(long, default_value = "1,1", allow_hyphen_values = true)]
    y: String,
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SpectralArgs {
    #[arg(long)]
    law: String,
    #[arg(long, default_value_t = 512)]
    grid: usize,
    /// Step of the central difference in z.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn load_law(spec: &str) -> Result<MatrixLaw> {
    if spec == "builtin:l0" {
        return Ok(MatrixLaw::l0());
    }
    Ok(MatrixLaw::load(spec)?)
}

fn parse_vec(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("{what}: {p:?} is not a number"))
        })
        .collect()
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let law = load_law(&a.law)?;
    let x = ProjectivePoint::new(parse_vec(&a.x, "--x")?)?;
    let sign = match a.sign {
        SignArg::Plus => Sign::Plus,
        SignArg::Minus => Sign::Minus,
    };
    if !(a.a < a.b) {
        bail!("--a must be below --b");
    }
    let cfg = WalkConfig::new(x, a.n, a.paths, a.seed)
        .sign(sign)
        .workers(a.workers);
    // The law is taken as given; centering is the caller's business here.
    let rows: Vec<(&str, EstimateWithCI)> = vec![
        ("V", estimate_v(&law, &cfg, a.t, Centering::Unchecked)?),
        ("persistence", estimate_persistence(&law, &cfg, a.t)?),
        ("exit_local", estimate_exit_local(&law, &cfg, a.t)?),
        (
            "local_prob",
            estimate_local_prob(&law, &cfg, a.t, a.a, a.b)?.estimate,
        ),
    ];
    let mut csv = String::from("estimator,value,stderr,n_samples,n,t,seed\n");
    for (name, e) in rows {
        writeln!(
            csv,
            "{name},{},{},{},{},{},{}",
            e.value, e.stderr, e.n_samples, a.n, a.t, e.seed
        )?;
    }
    write_out(&a.out, &csv)
}

fn reversal(a: &ReversalArgs) -> Result<()> {
    let law = load_law(&a.law)?;
    let x = ProjectivePoint::new(parse_vec(&a.x, "--x")?)?;
    let y = DualProjectivePoint::new(parse_vec(&a.y, "--y")?)?;
    let h = ProductTarget {
        proj: |_: &[f64]| 1.0,
        step: a.h.parse::<StepFunction>().context("--h")?,
    };
    let psi: StepFunction = a.psi.parse().context("--psi")?;
    let (mode, name) = match a.mode {
        ModeArg::Enumerate => (ReversalMode::Enumerate { workers: a.workers }, "enumerate"),
        ModeArg::Mc => (
            ReversalMode::MonteCarlo {
                paths: a.paths,
                seed: a.seed,
                workers: a.workers,
            },
            "mc",
        ),
    };
    let r = reversal_check(&law, &x, &y, &h, &psi, a.n, mode)?;
    let csv = format!(
        "n,mode,lhs,rhs,gap,lhs_stderr,rhs_stderr,gap_stderr,samples,dropped\n{},{name},{},{},{},{},{},{},{},{}\n",
        a.n, r.lhs, r.rhs, r.gap, r.lhs_stderr, r.rhs_stderr, r.gap_stderr, r.samples, r.dropped
    );
    write_out(&a.out, &csv)
}

fn spectral(a: &SpectralArgs) -> Result<()> {
    let law = load_law(&a.law)?;
    let grid = CircleGrid::new(a.grid)?;
    let summary = spectral_summary(&law, &grid, a.h, Discretization::default())?;
    write_out(&a.out, &(serde_json::to_string_pretty(&summary)? + "\n"))
}

/// 0 when every check passes, 1 on a failed or aborted check, 2 on a bad config.
fn verify(a: &VerifyArgs) -> ExitCode {
    let cfg = match ExperimentConfig::load(&a.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let Some(dir) = a.out_dir.clone().or_else(|| cfg.out_dir.clone()) else {
        eprintln!("config error: no output directory (use --out-dir or out_dir)");
        return ExitCode::from(2);
    };
    let report = match run_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = report.write(&dir) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for r in report.records.iter().filter(|r| !r.pass) {
        eprintln!(
            "FAIL {} {} n={}: empirical {} reference {}",
            r.check, r.name, r.n, r.empirical, r.reference
        );
    }
    if let Some(e) = &report.error {
        eprintln!("aborted: {e}");
    }
    let failed = report.records.iter().filter(|r| !r.pass).count();
    println!(
        "{} rows, {failed} failed, report in {}",
        report.records.len(),
        dir.display()
    );
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ReversalCheck(a) => reversal(a),
        Command::Spectral(a) => spectral(a),
        Command::Verify(a) => return verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
