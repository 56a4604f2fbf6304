//! Flat `key = value` experiment configuration.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Lists
//! are comma separated. Every key is optional except `study`. See
//! [`KEYS`] for the schema.

use std::fmt::Write as _;
use std::path::Path;

use crate::pde::{BlowUpStrategy, RangeSolverOptions};
use crate::particles::{Engine, ParticleSystem};
use crate::{BranchingMechanism, Error, Result};

use super::Study;

/// `(key, default, description)`; an empty default means "study dependent" or "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("study", "", "study kind, see `list-studies`"),
    ("beta", "1", "linear growth rate of the branching mechanism"),
    ("alpha", "1", "quadratic coefficient"),
    ("eta", "0", "coefficient of the stable part u^(1+theta)"),
    ("theta", "0.5", "stable exponent, in (0, 1]"),
    ("d", "1", "spatial dimension"),
    ("rho", "", "speed: the range radius is compared with rho * t"),
    ("t_grid", "", "comma-separated times"),
    ("nodes", "600", "grid intervals across the ball in blow-up solves"),
    ("dt_over_h2", "1", "time step of blow-up solves in units of h^2"),
    ("tol", "1e-4", "relative convergence tolerance of blow-up sweeps"),
    ("blowup", "wall", "blow-up closure: wall | forcing"),
    ("forcing_power", "1", "exponent of the forcing ramp outside the ball"),
    ("forcing_margin", "1", "width of the forcing layer outside the ball"),
    ("surrogate", "1000", "forcing scale of the range problem certified by fk_certify"),
    ("h", "0.02", "grid step of the fk_certify smoke solve"),
    ("dt", "0.0004", "time step of the fk_certify smoke solve"),
    ("t_end", "1", "horizon of the fk_certify smoke solve"),
    ("particles", "2000", "particle count N (mass 1/N each)"),
    ("replicates", "10000", "replicates, or runs per level when splitting"),
    ("levels", "", "splitting levels (radii), last equal to rho * t; empty for direct Monte Carlo"),
    ("engine", "stepped", "particle engine: stepped | exact"),
    ("engine_dt", "0.02", "time step of the stepped engine"),
    ("paths", "40000", "Brownian paths per Feynman-Kac estimate"),
    ("path_steps", "800", "time steps per Feynman-Kac path"),
    ("dims", "1,2,3", "dimensions covered by bounds_suite"),
    ("z_grid", "1.5,2,3,4,6,8", "tail arguments covered by bounds_suite"),
    ("tolerance", "", "relative tolerance of the fitted rate verdict (0.10 upper, 0.15 lower)"),
    ("seed", "1", "master seed"),
    ("threads", "0", "worker threads, 0 for all cores"),
    ("output", "", "output directory name under the output root (default: the study name)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub study: Study,
    pub mech: BranchingMechanism,
    pub d: usize,
    pub rho: f64,
    pub t_grid: Vec<f64>,
    pub nodes: usize,
    pub dt_over_h2: f64,
    pub tol: f64,
    pub blowup: BlowUpStrategy,
    pub forcing_power: f64,
    pub forcing_margin: f64,
    pub surrogate: f64,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub particles: usize,
    pub replicates: u64,
    pub levels: Vec<f64>,
    pub engine: Engine,
    pub paths: u64,
    pub path_steps: usize,
    pub dims: Vec<usize>,
    pub z_grid: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
    pub threads: usize,
    pub output: String,
    /// The entries as written, in file order, for the manifest.
    pub entries: Vec<(String, String)>,
}

fn suggest(word: &str, candidates: impl Iterator<Item = &'static str>) -> Option<&'static str> {
    candidates
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|&(distance, c)| distance <= 2.max(c.len() / 3))
        .min()
        .map(|(_, c)| c)
}

fn unknown(kind: &str, word: &str, candidates: impl Iterator<Item = &'static str>) -> Error {
    let mut message = format!("unknown {kind} `{word}`");
    if let Some(best) = suggest(word, candidates) {
        let _ = write!(message, "; did you mean `{best}`?");
    }
    Error::Config(message)
}

impl Study {
    pub fn parse(name: &str) -> Result<Study> {
        Study::ALL
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| unknown("study", name, Study::ALL.iter().map(|s| s.name())))
    }
}

struct Entries {
    pairs: Vec<(String, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn list<T>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: std::str::FromStr + Clone,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("`{key}`: cannot parse list item `{}`", item.trim())))
                })
                .collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse and validate. No computation happens here.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (number, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", number + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _, _)| *k == key) {
                return Err(unknown("key", key, KEYS.iter().map(|(k, _, _)| *k)));
            }
            if pairs.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        let entries = Entries { pairs };
        let study = Study::parse(
            entries
                .raw("study")
                .ok_or_else(|| Error::Config("missing required key `study`".into()))?,
        )?;

        let mech = BranchingMechanism::new(
            entries.parsed("beta", 1.0)?,
            entries.parsed("alpha", 1.0)?,
            entries.parsed("eta", 0.0)?,
            entries.parsed("theta", 0.5)?,
        )?;
        let forcing_power = entries.parsed("forcing_power", 1.0)?;
        let forcing_margin = entries.parsed("forcing_margin", 1.0)?;
        let blowup = match entries.raw("blowup").unwrap_or("wall") {
            "wall" => BlowUpStrategy::Dirichlet,
            "forcing" => BlowUpStrategy::Forcing {
                power: forcing_power,
                margin: forcing_margin,
            },
            other => return Err(unknown("blow-up closure", other, ["wall", "forcing"].into_iter())),
        };
        let engine_dt = entries.parsed("engine_dt", 0.02)?;
        let engine = match entries.raw("engine").unwrap_or("stepped") {
            "stepped" => Engine::Stepped { dt: engine_dt },
            "exact" => Engine::Exact,
            other => return Err(unknown("engine", other, ["stepped", "exact"].into_iter())),
        };
        let (default_rho, default_times, default_tolerance): (f64, &[f64], f64) = match study {
            Study::RateUpper => (2.0, &[4.0, 6.0, 8.0, 10.0, 12.0], 0.10),
            Study::RateLower => (0.7, &[4.0, 6.0, 8.0, 10.0, 12.0], 0.15),
            Study::McVsPde => (1.5, &[2.0], 0.15),
            Study::FkCertify => (1.5, &[2.0], 0.15),
            Study::BoundsSuite => (2.0, &[1.0, 2.0], 0.15),
        };
        let config = Self {
            study,
            mech,
            d: entries.parsed("d", 1)?,
            rho: entries.parsed("rho", default_rho)?,
            t_grid: entries.list("t_grid", default_times)?,
            nodes: entries.parsed("nodes", 600)?,
            dt_over_h2: entries.parsed("dt_over_h2", 1.0)?,
            tol: entries.parsed("tol", 1e-4)?,
            blowup,
            forcing_power,
            forcing_margin,
            surrogate: entries.parsed("surrogate", 1e3)?,
            h: entries.parsed("h", 0.02)?,
            dt: entries.parsed("dt", 4e-4)?,
            t_end: entries.parsed("t_end", 1.0)?,
            particles: entries.parsed("particles", 2000)?,
            replicates: entries.parsed("replicates", 10_000)?,
            levels: entries.list("levels", &[])?,
            engine,
            paths: entries.parsed("paths", 40_000)?,
            path_steps: entries.parsed("path_steps", 800)?,
            dims: entries.list("dims", &[1, 2, 3])?,
            z_grid: entries.list("z_grid", &[1.5, 2.0, 3.0, 4.0, 6.0, 8.0])?,
            tolerance: entries.parsed("tolerance", default_tolerance)?,
            seed: entries.parsed("seed", 1)?,
            threads: entries.parsed("threads", 0)?,
            output: entries.raw("output").unwrap_or(study.name()).to_string(),
            entries: entries.pairs,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn solver_options(&self) -> RangeSolverOptions {
        RangeSolverOptions {
            nodes: self.nodes,
            dt_over_h2: self.dt_over_h2,
            tol: self.tol,
            strategy: self.blowup,
            ..Default::default()
        }
    }

    pub fn particle_system(&self) -> Result<ParticleSystem> {
        ParticleSystem::new(self.mech, self.d, self.particles, self.engine)
    }

    /// Every precondition of the chosen study, checked before any output is written.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config(message));
        if self.d == 0 {
            return fail("`d` must be at least 1".into());
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return fail(format!("`t_grid` must be a nonempty list of positive times, got {:?}", self.t_grid));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return fail("`t_grid` must be strictly increasing".into());
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return fail(format!("`rho` must be positive, got {}", self.rho));
        }
        if self.nodes < 10 || !(self.dt_over_h2 > 0.0) || !(self.tol > 0.0) {
            return fail("solver settings need nodes >= 10, dt_over_h2 > 0 and tol > 0".into());
        }
        if !(self.forcing_power > 0.0 && self.forcing_margin > 0.0) {
            return fail("`forcing_power` and `forcing_margin` must be positive".into());
        }
        if !(self.tolerance > 0.0) {
            return fail("`tolerance` must be positive".into());
        }
        let critical = (2.0 * self.mech.beta).sqrt();
        match self.study {
            Study::RateUpper | Study::McVsPde => {
                if !self.mech.is_supercritical() {
                    return fail("the study needs a supercritical mechanism (beta > 0)".into());
                }
                if self.study == Study::RateUpper && self.t_grid.len() < 3 {
                    return fail("a rate fit needs at least 3 times in `t_grid`".into());
                }
                if self.rho <= critical {
                    return fail(format!(
                        "`rho` = {} must exceed the critical speed sqrt(2 beta) = {critical}",
                        self.rho
                    ));
                }
            }
            Study::RateLower => {
                if !self.mech.is_supercritical() || self.mech.alpha <= 0.0 {
                    return fail("the lower study needs beta > 0 and alpha > 0".into());
                }
                if self.t_grid.len() < 3 {
                    return fail("a rate fit needs at least 3 times in `t_grid`".into());
                }
                if self.rho >= critical {
                    return fail(format!(
                        "`rho` = {} must be below the critical speed sqrt(2 beta) = {critical}",
                        self.rho
                    ));
                }
            }
            Study::FkCertify => {
                if !(self.h > 0.0 && self.dt > 0.0 && self.t_end > 0.0 && self.surrogate > 0.0) {
                    return fail("`h`, `dt`, `t_end` and `surrogate` must be positive".into());
                }
                if self.paths < 2 || self.path_steps == 0 {
                    return fail("`paths` must be at least 2 and `path_steps` at least 1".into());
                }
            }
            Study::BoundsSuite => {
                if self.dims.is_empty() || self.dims.contains(&0) {
                    return fail("`dims` must list positive dimensions".into());
                }
                if self.z_grid.is_empty() || self.z_grid.iter().any(|z| !(*z > 1.0)) {
                    return fail("`z_grid` entries must exceed 1".into());
                }
                if self.paths < 2 || self.path_steps == 0 {
                    return fail("`paths` must be at least 2 and `path_steps` at least 1".into());
                }
                if let Some(t) = self.t_grid.iter().find(|t| self.rho * *t / t.sqrt() <= 1.0) {
                    return fail(format!("bounds_suite needs rho * sqrt(t) > 1, fails at t = {t}"));
                }
            }
        }
        if self.study == Study::McVsPde {
            self.particle_system()?;
            if self.replicates < 2 {
                return fail("`replicates` must be at least 2".into());
            }
            if !self.levels.is_empty() {
                if self.t_grid.len() != 1 {
                    return fail("splitting `levels` need a single time in `t_grid`".into());
                }
                let target = self.rho * self.t_grid[0];
                let last = *self.levels.last().unwrap();
                if (last - target).abs() > 1e-12 * target.max(1.0) {
                    return fail(format!("the last level must equal rho * t = {target}, got {last}"));
                }
                if self.levels[0] < 0.0 || self.levels.windows(2).any(|w| w[1] <= w[0]) {
                    return fail("`levels` must be nonnegative and strictly increasing".into());
                }
            }
        }
        Ok(())
    }
}
