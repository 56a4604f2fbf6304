//! Monte Carlo estimators built on [`ParticleSystem`].

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{replicate_rng, stream_key, AnyPopulation, ParticleSystem, Population};
use crate::error::{require, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimateKind {
    Point,
    /// No hits: `prob` is a one-sided 95% upper confidence bound.
    UpperBound,
    /// Splitting stopped because no run crossed level `failed_level`
    /// (0-based); `prob` is the product of the fractions before it.
    PartialProduct { failed_level: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Splitting,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Direct => "mc_direct",
            Method::Splitting => "mc_splitting",
        }
    }
}

/// Estimate of `P(R_t >= rho t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProbEstimate {
    pub method: Method,
    pub t: f64,
    pub rho: f64,
    pub prob: f64,
    pub stderr: f64,
    /// Total number of runs over all stages.
    pub runs: u64,
    /// Runs reaching the final level.
    pub hits: u64,
    pub kind: EstimateKind,
    /// Conditional crossing fraction per splitting level (one entry for direct).
    pub fractions: Vec<f64>,
}

impl RangeProbEstimate {
    pub fn log_prob(&self) -> f64 {
        self.prob.ln()
    }

    /// Delta-method standard error of `log_prob`.
    pub fn log_stderr(&self) -> f64 {
        self.stderr / self.prob
    }

    /// Fewer than 10 hits: the normal approximation behind `stderr` is poor
    /// and splitting should be preferred.
    pub fn few_hits(&self) -> bool {
        self.hits < 10
    }
}

fn run_to_level(
    population: &mut AnyPopulation,
    rng: &mut impl Rng,
    t: f64,
    level: f64,
) -> Result<bool> {
    if population.extremes().radius < level {
        population.run(rng, t, Some(level))?;
    }
    Ok(population.extremes().radius >= level)
}

/// Fraction of `replicates` runs whose range radius reaches `rho t` by time `t`.
pub fn estimate_range_prob_direct(
    system: &ParticleSystem,
    t: f64,
    rho: f64,
    replicates: u64,
    seed: u64,
) -> Result<RangeProbEstimate> {
    estimate_range_prob_splitting(system, t, rho, &[rho * t], replicates, seed).map(|mut e| {
        e.method = Method::Direct;
        e
    })
}

/// Fixed-effort multilevel splitting on the running range radius.
///
/// Stage `k` launches `per_level` runs, each from a state drawn uniformly
/// from the stage-`k−1` runs that reached `levels[k−1]` (the initial state
/// for stage 0), and counts those reaching `levels[k]` by time `t`. The
/// estimate is the product of the stage fractions.
pub fn estimate_range_prob_splitting(
    system: &ParticleSystem,
    t: f64,
    rho: f64,
    levels: &[f64],
    per_level: u64,
    seed: u64,
) -> Result<RangeProbEstimate> {
    system.validate()?;
    require(t >= 0.0, "t", "t >= 0", t)?;
    require(rho >= 0.0, "rho", "rho >= 0", rho)?;
    require(per_level >= 1, "runs per level", ">= 1", per_level as f64)?;
    let target = rho * t;
    let last = *levels
        .last()
        .ok_or_else(|| Error::Config("splitting needs at least one level".into()))?;
    if levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 0.0 {
        return Err(Error::Config(format!("levels must be nonnegative and strictly increasing, got {levels:?}")));
    }
    if (last - target).abs() > 1e-12 * target.max(1.0) {
        return Err(Error::Config(format!("last level {last} must equal rho t = {target}")));
    }

    let initial = system.start(t);
    let mut entrances: Vec<AnyPopulation> = vec![initial];
    let mut fractions = Vec::with_capacity(levels.len());
    let mut prob = 1.0f64;
    let mut relative_variance = 0.0f64;
    let mut hits = 0;
    for (stage, &level) in levels.iter().enumerate() {
        let outcomes: Vec<Result<Option<AnyPopulation>>> = (0..per_level)
            .into_par_iter()
            .map(|i| {
                let mut rng = replicate_rng(seed, stream_key(stage as u64, i));
                let mut population = if stage == 0 {
                    entrances[0].clone()
                } else {
                    entrances[rng.random_range(0..entrances.len())].clone()
                };
                let crossed = run_to_level(&mut population, &mut rng, t, level)?;
                Ok(crossed.then_some(population))
            })
            .collect();
        let mut crossers = Vec::new();
        for outcome in outcomes {
            if let Some(p) = outcome? {
                crossers.push(p);
            }
        }
        hits = crossers.len() as u64;
        let fraction = hits as f64 / per_level as f64;
        fractions.push(fraction);
        if hits == 0 {
            let runs = per_level * (stage as u64 + 1);
            if stage == 0 {
                return Ok(RangeProbEstimate {
                    method: Method::Splitting,
                    t,
                    rho,
                    prob: -(0.05f64.ln() / per_level as f64).exp_m1(),
                    stderr: 0.0,
                    runs,
                    hits: 0,
                    kind: EstimateKind::UpperBound,
                    fractions,
                });
            }
            return Ok(RangeProbEstimate {
                method: Method::Splitting,
                t,
                rho,
                prob,
                stderr: prob * relative_variance.sqrt(),
                runs,
                hits: 0,
                kind: EstimateKind::PartialProduct { failed_level: stage },
                fractions,
            });
        }
        prob *= fraction;
        relative_variance += (1.0 - fraction) / (per_level as f64 * fraction);
        entrances = crossers;
    }
    Ok(RangeProbEstimate {
        method: Method::Splitting,
        t,
        rho,
        prob,
        stderr: prob * relative_variance.sqrt(),
        runs: per_level * levels.len() as u64,
        hits,
        kind: EstimateKind::Point,
        fractions,
    })
}

/// Empirical Laplace transform of the total mass against the logistic ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceReport {
    pub t: f64,
    pub theta: f64,
    pub empirical: f64,
    pub stderr: f64,
    /// `exp(-v(t))` with `v' = beta v - alpha v^2`, `v(0) = theta`.
    pub theory: f64,
    pub z: f64,
}

impl LaplaceReport {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

pub fn total_mass_laplace_check(
    system: &ParticleSystem,
    t: f64,
    theta: f64,
    replicates: u64,
    seed: u64,
) -> Result<LaplaceReport> {
    require(theta >= 0.0, "theta", "theta >= 0", theta)?;
    require(replicates >= 2, "replicates", ">= 2", replicates as f64)?;
    let samples: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|i| system.sample_mass(t, seed, i).map(|m| (-theta * m).exp()))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let empirical = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - empirical).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (variance / n).sqrt();
    let (beta, alpha) = (system.mech.beta, system.mech.alpha);
    let v = if beta == 0.0 {
        theta / (1.0 + alpha * theta * t)
    } else {
        let e = (beta * t).exp();
        beta * theta * e / (beta + alpha * theta * (e - 1.0))
    };
    let theory = (-v).exp();
    let gap = empirical - theory;
    let z = if stderr > 0.0 {
        gap / stderr
    } else if gap.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(LaplaceReport {
        t,
        theta,
        empirical,
        stderr,
        theory,
        z,
    })
}

/// Aggregate CSV: `estimator, t, rho, value, stderr, n, hits, kind`.
pub fn write_estimates(path: &Path, estimates: &[RangeProbEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["estimator", "t", "rho", "value", "stderr", "n", "hits", "kind"])?;
    for e in estimates {
        let kind = match e.kind {
            EstimateKind::Point => "point".to_string(),
            EstimateKind::UpperBound => "upper_bound".to_string(),
            EstimateKind::PartialProduct { failed_level } => format!("partial_product_at_level_{failed_level}"),
        };
        w.write_record([
            e.method.tag().to_string(),
            crate::fmt_f64(e.t),
            crate::fmt_f64(e.rho),
            crate::fmt_f64(e.prob),
            crate::fmt_f64(e.stderr),
            e.runs.to_string(),
            e.hits.to_string(),
            kind,
        ])?;
    }
    w.flush()?;
    Ok(())
}
