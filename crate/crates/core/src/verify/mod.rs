//! Experiment harness: recenters a law, runs the enabled checks and writes
//! `report.csv` / `report.json`.
//!
//! Every check draws its paths from its own seed, derived from the suite seed
//! and a fixed per-check tag, so a report depends only on the configuration.

mod checks;
mod smoothing;

pub use checks::{
    check_algebraic_identities, check_appendix, check_caravenna, check_conditioned_clt,
    check_main_cllt, check_oracle, check_reversal, check_rho_harmonicity, check_spectral,
    check_unconditioned_llt,
};
pub use smoothing::SmoothingFamily;

use crate::error::{Error, Result};
use crate::geom::ProjectivePoint;
use crate::law::MatrixLaw;
use crate::rng::derive_seed;
use crate::spectral::{lyapunov_and_variance, CircleGrid};
use crate::walk::{estimate_v, Centering, EstimateWithCI, StepFunction, WalkConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Smallest ensemble a configuration may request.
pub const MIN_PATHS: u64 = 1000;

/// Survivor floor for conditioned checks.
pub const MIN_SURVIVORS: usize = 1000;

pub const CSV_HEADER: &str = "check,name,n,empirical,stderr,reference,ratio,tolerance,pass";

const NORMALIZATION_NOTE: &str =
    "rho-integrals use the unscaled definition int_0^inf t E[h; tau > n-1] dt; \
harmonicity compares h and Rh on one n and one seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Identities,
    Reversal,
    Oracle,
    Spectral,
    Llt,
    Cclt,
    Cllt,
    Caravenna,
    Rho,
    Appendix,
}

impl CheckKind {
    pub const ALL: [CheckKind; 10] = [
        CheckKind::Identities,
        CheckKind::Reversal,
        CheckKind::Oracle,
        CheckKind::Spectral,
        CheckKind::Llt,
        CheckKind::Cclt,
        CheckKind::Cllt,
        CheckKind::Caravenna,
        CheckKind::Rho,
        CheckKind::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Identities => "identities",
            CheckKind::Reversal => "reversal",
            CheckKind::Oracle => "oracle",
            CheckKind::Spectral => "spectral",
            CheckKind::Llt => "llt",
            CheckKind::Cclt => "cclt",
            CheckKind::Cllt => "cllt",
            CheckKind::Caravenna => "caravenna",
            CheckKind::Rho => "rho",
            CheckKind::Appendix => "appendix",
        }
    }

    fn tag(self) -> u64 {
        100 + self as u64
    }
}

/// `f(θ) = c0 + c1·cos 2θ + s1·sin 2θ` on `ℙ(ℝ²)`; only `c0` in other
/// dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjHarmonic(pub f64, pub f64, pub f64);

impl ProjHarmonic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.len() != 2 {
            return self.0;
        }
        let (c, s) = (x[0] * x[0] - x[1] * x[1], 2.0 * x[0] * x[1]);
        self.0 + self.1 * c + self.2 * s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// Step function in `t`, as `"a1:b1:v1,..."`.
    pub step: String,
    pub proj: ProjHarmonic,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            step: "0:1:1".into(),
            proj: ProjHarmonic(1.0, 0.5, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitiesConfig {
    pub instances: usize,
    pub max_len: usize,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self {
            instances: 10_000,
            max_len: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReversalConfig {
    /// Atoms of the sub-law on which the identity is enumerated.
    pub atoms: Vec<usize>,
    pub n_max: usize,
    pub cases: usize,
}

impl Default for ReversalConfig {
    fn default() -> Self {
        Self {
            atoms: vec![0, 1],
            n_max: 6,
            cases: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub laws: usize,
    pub n_max: usize,
    pub paths: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            laws: 20,
            n_max: 7,
            paths: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralCheckConfig {
    pub n: usize,
    pub paths: u64,
    /// Steps before the occupation snapshot.
    pub occupation_n: usize,
    pub occupation_paths: u64,
    pub radius_ts: Vec<f64>,
}

impl Default for SpectralCheckConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            paths: 100_000,
            occupation_n: 200,
            occupation_paths: 200_000,
            radius_ts: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LltConfig {
    pub schedule: Vec<usize>,
    pub paths: u64,
    pub enumeration_n: usize,
}

impl Default for LltConfig {
    fn default() -> Self {
        Self {
            schedule: vec![256, 512, 1024, 2048, 4096],
            paths: 200_000,
            enumeration_n: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcltConfig {
    pub n: usize,
    pub paths: u64,
}

impl Default for CcltConfig {
    fn default() -> Self {
        Self {
            n: 2500,
            paths: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaravennaConfig {
    pub n: usize,
    pub paths: u64,
    /// `u_k = k·u_spacing·υ̂√n` for `k = 0..=u_steps`.
    pub u_steps: usize,
    pub u_spacing: f64,
}

impl Default for CaravennaConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            paths: 4_000_000,
            u_steps: 12,
            u_spacing: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClltConfig {
    pub schedule: Vec<usize>,
    pub paths: u64,
    /// Steps averaged exactly before each `n`.
    pub tail: usize,
}

impl Default for ClltConfig {
    fn default() -> Self {
        Self {
            schedule: vec![256, 512, 1024, 2048, 4096],
            paths: 20_000_000,
            tail: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoConfig {
    pub n: usize,
    pub paths: u64,
    pub v_paths: u64,
}

impl Default for RhoConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            paths: 1_000_000,
            v_paths: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppendixConfig {
    pub schedule: Vec<usize>,
    pub paths: u64,
    pub depth: usize,
    pub t: f64,
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self {
            schedule: vec![64, 128, 256, 512, 1024, 2048],
            paths: 600_000,
            depth: 100,
            t: 1.0,
        }
    }
}

/// Everything a suite run needs; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Law file, or `builtin:l0`. Relative paths resolve against `base_dir`.
    pub law: String,
    pub checks: Vec<CheckKind>,
    pub seed: u64,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
    pub x: Vec<f64>,
    pub ts: Vec<f64>,
    pub interval: [f64; 2],
    pub target: TargetConfig,
    pub centering_grid: usize,
    pub spectral_grid: usize,
    pub h: f64,
    /// Paths for each `V̂` reference.
    pub v_paths: u64,
    pub identities: IdentitiesConfig,
    pub reversal: ReversalConfig,
    pub oracle: OracleConfig,
    pub spectral: SpectralCheckConfig,
    pub llt: LltConfig,
    pub cclt: CcltConfig,
    pub cllt: ClltConfig,
    pub caravenna: CaravennaConfig,
    pub rho: RhoConfig,
    pub appendix: AppendixConfig,
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            law: "builtin:l0".into(),
            checks: CheckKind::ALL.to_vec(),
            seed: 1,
            workers: 0,
            x: vec![1.0, 0.0],
            ts: vec![1.0, 3.0],
            interval: [0.0, 1.0],
            target: TargetConfig::default(),
            centering_grid: 32_768,
            spectral_grid: crate::spectral::DEFAULT_GRID,
            h: crate::spectral::DEFAULT_H,
            v_paths: 1_000_000,
            identities: IdentitiesConfig::default(),
            reversal: ReversalConfig::default(),
            oracle: OracleConfig::default(),
            spectral: SpectralCheckConfig::default(),
            llt: LltConfig::default(),
            cclt: CcltConfig::default(),
            cllt: ClltConfig::default(),
            caravenna: CaravennaConfig::default(),
            rho: RhoConfig::default(),
            appendix: AppendixConfig::default(),
            out_dir: None,
            base_dir: PathBuf::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(crate::error::json_error(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let schedules = [
            ("llt", &self.llt.schedule),
            ("cllt", &self.cllt.schedule),
            ("appendix", &self.appendix.schedule),
        ];
        for (name, s) in schedules {
            if s.is_empty() || s[0] == 0 || s.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!(
                    "{name}.schedule must be non-empty, positive and strictly increasing"
                ));
            }
        }
        let paths = [
            ("v_paths", self.v_paths),
            ("oracle.paths", self.oracle.paths),
            ("spectral.paths", self.spectral.paths),
            ("spectral.occupation_paths", self.spectral.occupation_paths),
            ("llt.paths", self.llt.paths),
            ("cclt.paths", self.cclt.paths),
            ("cllt.paths", self.cllt.paths),
            ("caravenna.paths", self.caravenna.paths),
            ("rho.paths", self.rho.paths),
            ("rho.v_paths", self.rho.v_paths),
            ("appendix.paths", self.appendix.paths),
        ];
        for (name, p) in paths {
            if p < MIN_PATHS {
                return bad(format!("{name} = {p} is below the floor of {MIN_PATHS}"));
            }
        }
        if self.ts.is_empty() || self.ts.iter().any(|t| !t.is_finite()) {
            return bad("ts must be a non-empty list of finite values".into());
        }
        if self.x.is_empty()
            || self.x.iter().all(|&c| c == 0.0)
            || self.x.iter().any(|c| !c.is_finite())
        {
            return bad("x must be a finite non-zero vector".into());
        }
        if !self.interval.iter().all(|v| v.is_finite()) {
            return bad("interval must be finite".into());
        }
        if self.centering_grid < 16 || self.spectral_grid < 16 {
            return bad("spectral grids need at least 16 nodes".into());
        }
        if !(self.h > 0.0) {
            return bad("h must be positive".into());
        }
        let ns = [
            self.cclt.n,
            self.caravenna.n,
            self.rho.n,
            self.spectral.n,
            self.spectral.occupation_n,
        ];
        if ns.contains(&0) || self.oracle.n_max == 0 || self.reversal.n_max == 0 {
            return bad("every n must be >= 1".into());
        }
        if self.rho.n < 2 {
            return bad("rho.n must be >= 2".into());
        }
        if self.cllt.tail > crate::walk::MAX_TAIL {
            return bad(format!("cllt.tail exceeds {}", crate::walk::MAX_TAIL));
        }
        if self.appendix.depth == 0 {
            return bad("appendix.depth must be >= 1".into());
        }
        if !(self.caravenna.u_spacing > 0.0) {
            return bad("caravenna.u_spacing must be positive".into());
        }
        self.target_step()?;
        Ok(())
    }

    pub fn target_step(&self) -> Result<StepFunction> {
        self.target
            .step
            .parse()
            .map_err(|e| Error::Config(format!("target.step: {e}")))
    }

    pub fn load_law(&self) -> Result<MatrixLaw> {
        if self.law.eq_ignore_ascii_case("builtin:l0") {
            return Ok(MatrixLaw::l0());
        }
        let p = Path::new(&self.law);
        let p = if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        };
        MatrixLaw::load(p)
    }

    fn start(&self) -> Result<ProjectivePoint> {
        ProjectivePoint::new(self.x.clone()).map_err(|e| Error::Config(format!("x: {e}")))
    }
}

/// Where a reference value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Transfer-operator numerics (`λ̂`, `υ̂`, `ν̂`), possibly combined with `V̂`.
    Spectral,
    /// Exact enumeration over all words.
    Enumeration,
    /// A scaled quantity compared with itself at a smaller `n`, or a
    /// `V̂` reference taken at a smaller `n`.
    Stabilization,
    /// An algebraic identity with reference zero.
    Exact,
    /// The single fitted constant of a bound audit.
    Fitted,
}

/// One row of a report. Rows without a test carry `tolerance = NaN` and
/// `pass = true`.
#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub check: String,
    pub name: String,
    pub n: usize,
    pub empirical: f64,
    pub stderr: f64,
    pub reference: f64,
    pub ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub provenance: Provenance,
}

impl Record {
    pub(crate) fn new(
        check: CheckKind,
        name: impl Into<String>,
        n: usize,
        provenance: Provenance,
    ) -> Self {
        Self {
            check: check.name().into(),
            name: name.into(),
            n,
            empirical: f64::NAN,
            stderr: f64::NAN,
            reference: f64::NAN,
            ratio: f64::NAN,
            tolerance: f64::NAN,
            pass: true,
            provenance,
        }
    }

    pub(crate) fn values(mut self, empirical: f64, stderr: f64, reference: f64) -> Self {
        self.empirical = empirical;
        self.stderr = stderr;
        self.reference = reference;
        self.ratio = if reference != 0.0 {
            empirical / reference
        } else {
            f64::NAN
        };
        self
    }

    pub(crate) fn test(mut self, tolerance: f64, pass: bool) -> Self {
        self.tolerance = tolerance;
        self.pass = pass;
        self
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.check,
            self.name,
            self.n,
            self.empirical,
            self.stderr,
            self.reference,
            self.ratio,
            self.tolerance,
            self.pass
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub seed: u64,
    pub law: String,
    pub law_hash: String,
    pub dim: usize,
    pub atoms: usize,
    pub centering_grid: usize,
    pub spectral_grid: usize,
    pub h: f64,
    pub lambda_hat: f64,
    pub upsilon_sq: f64,
    /// `λ̂` of the recentered law on the centering grid.
    pub lambda_residual: f64,
    pub checks: Vec<CheckKind>,
    pub normalization: String,
    pub version: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub environment: Environment,
    pub records: Vec<Record>,
    pub pass: bool,
    /// Set when a check aborted the run; the records before it are kept.
    pub error: Option<String>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        Ok(())
    }

    pub fn records_of(&self, check: CheckKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.check == check.name())
    }
}

/// Recentered law and shared references for the checks.
pub struct Suite {
    pub cfg: ExperimentConfig,
    /// The law as loaded.
    pub raw_law: MatrixLaw,
    /// `raw_law` recentered by `lambda_hat`.
    pub law: MatrixLaw,
    pub x: ProjectivePoint,
    pub lambda_hat: f64,
    pub upsilon_sq: f64,
    pub lambda_residual: f64,
    v_cache: Mutex<BTreeMap<(usize, u64), EstimateWithCI>>,
}

impl Suite {
    /// Loads the law and recenters it with `λ̂` from the centering grid.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let raw_law = cfg.load_law()?;
        let x = cfg.start()?;
        if x.dim() != raw_law.dim() {
            return Err(Error::Config(format!(
                "x has dimension {} but the law has {}",
                x.dim(),
                raw_law.dim()
            )));
        }
        let grid = CircleGrid::new(cfg.centering_grid)?;
        let (lambda_hat, upsilon_sq) = lyapunov_and_variance(&raw_law, &grid, cfg.h)?;
        let law = raw_law.recenter(lambda_hat);
        let (lambda_residual, _) = lyapunov_and_variance(&law, &grid, cfg.h)?;
        Ok(Self {
            cfg: cfg.clone(),
            raw_law,
            law,
            x,
            lambda_hat,
            upsilon_sq,
            lambda_residual,
            v_cache: Mutex::new(BTreeMap::new()),
        })
    }

    /// Suite over a law with known spectral data; skips the centering pass.
    #[cfg(test)]
    pub(crate) fn from_parts(
        cfg: &ExperimentConfig,
        law: MatrixLaw,
        lambda_hat: f64,
        upsilon_sq: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            x: cfg.start()?,
            law: law.recenter(lambda_hat),
            raw_law: law,
            lambda_hat,
            upsilon_sq,
            lambda_residual: 0.0,
            v_cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn upsilon(&self) -> f64 {
        self.upsilon_sq.max(0.0).sqrt()
    }

    pub fn seed(&self, check: CheckKind) -> u64 {
        derive_seed(self.cfg.seed, check.tag())
    }

    /// `V̂(x, t)` at horizon `n`, shared across checks.
    pub fn v_hat(&self, n: usize, t: f64) -> Result<EstimateWithCI> {
        let key = (n, t.to_bits());
        if let Some(v) = self.v_cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let cfg = WalkConfig::new(
            self.x.clone(),
            n,
            self.cfg.v_paths,
            derive_seed(self.cfg.seed, 7),
        )
        .workers(self.cfg.workers);
        let v = estimate_v(
            &self.law,
            &cfg,
            t,
            Centering::Verified(self.lambda_residual),
        )?;
        self.v_cache.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }

    pub fn walk_config(&self, n: usize, paths: u64, check: CheckKind) -> WalkConfig {
        WalkConfig::new(self.x.clone(), n, paths, self.seed(check)).workers(self.cfg.workers)
    }

    pub fn run(&self, check: CheckKind) -> Result<Vec<Record>> {
        match check {
            CheckKind::Identities => check_algebraic_identities(self),
            CheckKind::Reversal => check_reversal(self),
            CheckKind::Oracle => check_oracle(self),
            CheckKind::Spectral => check_spectral(self),
            CheckKind::Llt => check_unconditioned_llt(self),
            CheckKind::Cclt => check_conditioned_clt(self),
            CheckKind::Cllt => check_main_cllt(self),
            CheckKind::Caravenna => check_caravenna(self),
            CheckKind::Rho => check_rho_harmonicity(self),
            CheckKind::Appendix => check_appendix(self),
        }
    }

    fn environment(&self) -> Environment {
        Environment {
            seed: self.cfg.seed,
            law: self.cfg.law.clone(),
            law_hash: format!("{:016x}", self.raw_law.content_hash()),
            dim: self.raw_law.dim(),
            atoms: self.raw_law.len(),
            centering_grid: self.cfg.centering_grid,
            spectral_grid: self.cfg.spectral_grid,
            h: self.cfg.h,
            lambda_hat: self.lambda_hat,
            upsilon_sq: self.upsilon_sq,
            lambda_residual: self.lambda_residual,
            checks: self.cfg.checks.clone(),
            normalization: NORMALIZATION_NOTE.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Runs every enabled check in order. Setup failures are returned as errors;
/// a failing check stops the run and is reported in `Report::error`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Report> {
    let suite = Suite::prepare(cfg)?;
    let mut records = Vec::new();
    let mut error = None;
    for &check in &cfg.checks {
        match suite.run(check) {
            Ok(rows) => records.extend(rows),
            Err(e) => {
                error = Some(format!("{}: {e}", check.name()));
                break;
            }
        }
    }
    let pass = error.is_none() && records.iter().all(|r| r.pass);
    Ok(Report {
        environment: suite.environment(),
        records,
        pass,
        error,
    })
}
