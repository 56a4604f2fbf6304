//! Config-driven experiment runner.
//!
//! A run writes into one output directory:
//!
//! * `manifest.txt`, first, before any computation: version, study, seed,
//!   the planned artifacts and the config echo. A failing stage appends
//!   `status = failed`, the stage name and the error.
//! * study CSVs (solves, estimates, checks), one per stage.
//! * `summary.csv`, last, with theory-versus-measured rows.
//!
//! Every random quantity is keyed by a task seed derived from the master seed
//! and a stream index within the task, so results do not depend on the thread
//! count and any replicate can be regenerated alone (see [`seed_report`]).

mod config;
mod studies;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::particles::stream_key;
use crate::{fmt_f64, Error, Result};

pub use config::{ExperimentConfig, KEYS};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SBM_RANGE_OUT";
/// Output root when neither `--out` nor [`OUTPUT_ROOT_VAR`] is given.
pub const DEFAULT_OUTPUT_ROOT: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    RateUpper,
    RateLower,
    McVsPde,
    FkCertify,
    BoundsSuite,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::RateUpper,
        Study::RateLower,
        Study::McVsPde,
        Study::FkCertify,
        Study::BoundsSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::RateUpper => "rate_upper",
            Study::RateLower => "rate_lower",
            Study::McVsPde => "mc_vs_pde",
            Study::FkCertify => "fk_certify",
            Study::BoundsSuite => "bounds_suite",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Study::RateUpper => {
                "P(R_t >= rho t) from blow-up PDE solves over t_grid, fitted to -I t + a ln t + b \
                 and compared with rho^2/2 - beta"
            }
            Study::RateLower => {
                "P(R_t <= rho t), unconditional and conditioned on survival, from paired blow-up solves; \
                 the conditional decay is compared with beta - rho sqrt(beta/2)"
            }
            Study::McVsPde => {
                "particle-system estimates of P(R_t >= rho t) (direct, or splitting when `levels` is set) \
                 against the PDE value at each t"
            }
            Study::FkCertify => {
                "Feynman-Kac estimates and mild-form residuals of a smoke solve and of the forcing \
                 surrogate of the range problem at (t_grid[0], rho t_grid[0]), plus the a-priori bound"
            }
            Study::BoundsSuite => {
                "chi tail ratios over z_grid, the identity of the planar tail, and the 2^d maximal \
                 radius bound (with the one-dimensional reflection principle) at a = rho t"
            }
        }
    }

    /// Keys the study reads besides the mechanism, `d`, `seed`, `threads` and `output`.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Study::RateUpper | Study::RateLower => {
                &["rho", "t_grid", "nodes", "dt_over_h2", "tol", "blowup", "forcing_power", "forcing_margin", "tolerance"]
            }
            Study::McVsPde => &[
                "rho", "t_grid", "nodes", "dt_over_h2", "tol", "blowup", "forcing_power", "forcing_margin",
                "particles", "replicates", "levels", "engine", "engine_dt",
            ],
            Study::FkCertify => &[
                "rho", "t_grid", "h", "dt", "t_end", "nodes", "dt_over_h2", "forcing_power", "forcing_margin",
                "surrogate", "paths", "path_steps",
            ],
            Study::BoundsSuite => &["rho", "t_grid", "dims", "z_grid", "paths", "path_steps"],
        }
    }
}

/// The study catalog with parameter documentation.
pub fn list_studies() -> String {
    let mut out = String::from("studies:\n");
    for study in Study::ALL {
        let _ = writeln!(out, "  {:<13} {}", study.name(), study.description());
        let _ = writeln!(out, "  {:<13} keys: {}", "", study.keys().join(", "));
    }
    out.push_str("\nconfig keys (key = value, one per line, # comments):\n");
    for (key, default, doc) in KEYS {
        let default = if default.is_empty() { "-" } else { default };
        let _ = writeln!(out, "  {key:<15} [{default}] {doc}");
    }
    out
}

/// Seed of task `index` within a run.
pub fn task_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A unit of random work: streams `stream_key(stage, i)` for `i < stages[stage]`
/// under `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub label: String,
    pub seed: u64,
    pub stages: Vec<u64>,
}

/// Every random task a run of `config` performs, in execution order.
pub fn plan(config: &ExperimentConfig) -> Vec<Task> {
    let mut labels: Vec<(String, Vec<u64>)> = Vec::new();
    match config.study {
        Study::RateUpper | Study::RateLower => {}
        Study::McVsPde => {
            let stages = if config.levels.is_empty() {
                vec![config.replicates]
            } else {
                vec![config.replicates; config.levels.len()]
            };
            for t in &config.t_grid {
                labels.push((format!("particles t={t}"), stages.clone()));
            }
        }
        Study::FkCertify => {
            for problem in ["smoke", "range"] {
                for kind in ["fk_estimate", "mild_residual"] {
                    for point in 0..studies::LATTICE_POINTS {
                        labels.push((format!("{kind} {problem} point {point}"), vec![config.paths]));
                    }
                }
            }
        }
        Study::BoundsSuite => {
            for d in &config.dims {
                for t in &config.t_grid {
                    labels.push((format!("max_radius d={d} t={t}"), vec![config.paths]));
                }
            }
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, (label, stages))| Task {
            label,
            seed: task_seed(config.seed, i as u64),
            stages,
        })
        .collect()
}

/// SHA-256 over the study name and every `(task seed, stage, index, stream key)`.
pub fn seed_digest(config: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.study.name().as_bytes());
    for task in plan(config) {
        for (stage, &count) in task.stages.iter().enumerate() {
            for i in 0..count {
                hasher.update(task.seed.to_le_bytes());
                hasher.update((stage as u64).to_le_bytes());
                hasher.update(i.to_le_bytes());
                hasher.update(stream_key(stage as u64, i).to_le_bytes());
            }
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Reproducibility report: the task seeds and stream keys. With `full`, every
/// stream key is listed; otherwise one line per stage.
pub fn seed_report(config: &ExperimentConfig, full: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "study = {}", config.study.name());
    let _ = writeln!(out, "seed = {}", config.seed);
    let tasks = plan(config);
    if tasks.is_empty() {
        out.push_str("tasks = 0 (deterministic study)\n");
    }
    for task in &tasks {
        let _ = writeln!(out, "task \"{}\" seed = {}", task.label, task.seed);
        for (stage, &count) in task.stages.iter().enumerate() {
            let stage = stage as u64;
            if full {
                for i in 0..count {
                    let _ = writeln!(out, "  stage {stage} replicate {i} stream {:#018x}", stream_key(stage, i));
                }
            } else if count > 0 {
                let _ = writeln!(
                    out,
                    "  stage {stage} replicates 0..{count} streams {:#018x}..={:#018x}",
                    stream_key(stage, 0),
                    stream_key(stage, count - 1)
                );
            }
        }
    }
    let _ = writeln!(out, "digest = {}", seed_digest(config));
    out
}

/// One theory-versus-measured line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub quantity: String,
    pub configuration: String,
    pub measured: f64,
    pub stderr: f64,
    pub theory: f64,
    pub verdict: Option<bool>,
}

impl SummaryRow {
    pub fn relative_error(&self) -> f64 {
        (self.measured - self.theory).abs() / self.theory.abs()
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "configuration", "measured", "stderr", "theory", "relative_error", "verdict"])?;
    for r in rows {
        let verdict = match r.verdict {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "na",
        };
        w.write_record([
            r.quantity.clone(),
            r.configuration.clone(),
            fmt_f64(r.measured),
            fmt_f64(r.stderr),
            fmt_f64(r.theory),
            fmt_f64(r.relative_error()),
            verdict.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Vec<SummaryRow>,
}

impl RunOutcome {
    /// No summary row carries a failing verdict.
    pub fn all_pass(&self) -> bool {
        self.summary.iter().all(|r| r.verdict != Some(false))
    }
}

/// State shared by the stages of one run.
pub(crate) struct Run<'a> {
    pub config: &'a ExperimentConfig,
    pub dir: PathBuf,
    verbose: bool,
    tasks: Vec<Task>,
    next_task: usize,
}

impl Run<'_> {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn log(&self, message: &str) {
        if self.verbose {
            eprintln!("[{}] {message}", self.config.study.name());
        }
    }

    /// Seed of the next planned task; panics if the study departs from [`plan`].
    pub fn task_seed(&mut self, label: &str) -> u64 {
        let task = &self.tasks[self.next_task];
        assert_eq!(task.label, label, "study execution departs from its seed plan");
        self.next_task += 1;
        task.seed
    }

    /// Run one named stage; a failure is recorded in the manifest.
    pub fn stage<T>(&mut self, name: &str, body: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.log(&format!("stage {name}"));
        body(self).inspect_err(|e| {
            let mut file = fs::OpenOptions::new().append(true).open(self.path(MANIFEST));
            if let Ok(file) = file.as_mut() {
                let _ = writeln!(file, "status = failed\nfailed_stage = {name}\nerror = {e}");
            }
        })
    }
}

const MANIFEST: &str = "manifest.txt";
const SUMMARY: &str = "summary.csv";

fn manifest_text(config: &ExperimentConfig, artifacts: &[&str]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "study = {}", config.study.name());
    let _ = writeln!(out, "seed = {}", config.seed);
    let _ = writeln!(out, "seed_digest = {}", seed_digest(config));
    let _ = writeln!(out, "artifacts = {}", artifacts.join(", "));
    for (key, value) in &config.entries {
        if key != "seed" && key != "threads" {
            let _ = writeln!(out, "config.{key} = {value}");
        }
    }
    out
}

/// The output root: the explicit path, else [`OUTPUT_ROOT_VAR`], else [`DEFAULT_OUTPUT_ROOT`].
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Execute a validated config under `root/<output>`.
pub fn run(config: &ExperimentConfig, root: &Path, verbose: bool) -> Result<RunOutcome> {
    config.validate()?;
    let dir = root.join(&config.output);
    fs::create_dir_all(&dir)?;
    let artifacts = studies::artifacts(config.study);
    for file in artifacts.iter().chain([&SUMMARY]) {
        let path = dir.join(file);
        if path.exists() {
            fs::remove_file(path)?;
        }
    }
    let mut listed = artifacts.to_vec();
    listed.push(SUMMARY);
    fs::write(dir.join(MANIFEST), manifest_text(config, &listed))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", config.threads)))?;
    let mut run = Run {
        config,
        dir: dir.clone(),
        verbose,
        tasks: plan(config),
        next_task: 0,
    };
    let summary = pool.install(|| studies::execute(&mut run))?;
    run.stage("summary", |run| write_summary(&run.path(SUMMARY), &summary))?;
    Ok(RunOutcome { dir, summary })
}
