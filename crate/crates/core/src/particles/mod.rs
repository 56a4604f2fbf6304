//! Branching Brownian particle approximation of super-Brownian motion.
//!
//! `N` particles of mass `1/N` start at the origin. Each one splits in two at
//! rate `alpha N + beta` and dies at rate `alpha N`. For a test function `u`
//! the generator acts on `exp(-<u, X>)` through
//!
//! ```text
//! N [ b ((1 - u/N)^2 - (1 - u/N)) + d0 (1 - (1 - u/N)) ]
//!     = -beta u + alpha u^2 + O(1/N),      b = alpha N + beta, d0 = alpha N,
//! ```
//!
//! so the empirical measure converges to the superprocess with the quadratic
//! mechanism `-beta u + alpha u^2`.
//!
//! Two engines are provided. [`Engine::Exact`] realises every event and is
//! practical for `N` up to a few hundred. [`Engine::Stepped`] advances by the
//! exact birth-death law over a fixed step and places the descendants through
//! their reconstructed genealogy; its cost per unit time does not grow with `N`.

mod dust;
mod exact;
pub mod estimate;
mod sampling;
mod stepped;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{require, Error, Result};
use crate::mechanism::BranchingMechanism;

pub use estimate::{
    estimate_range_prob_direct, estimate_range_prob_splitting, total_mass_laplace_check, EstimateKind,
    LaplaceReport, RangeProbEstimate,
};
pub use sampling::bridge_max;

use exact::ExactPopulation;
use sampling::{BirthDeathLaw, Extremes};
use stepped::SteppedPopulation;

pub const DEFAULT_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    /// Event-driven, every birth and death realised.
    Exact,
    /// Fixed step `dt` (shortened so that it divides the horizon).
    Stepped { dt: f64 },
}

#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub mech: BranchingMechanism,
    pub d: usize,
    /// Number of initial particles; each carries mass `1/N`.
    pub particles: usize,
    pub engine: Engine,
    /// Largest population before the run is aborted.
    pub cap: u64,
}

/// Running maxima of one replicate at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSimulationRecord {
    pub replicate: u64,
    pub checkpoints: Vec<f64>,
    /// Largest `|x|` visited by any particle up to each checkpoint.
    pub range_radius: Vec<f64>,
    /// Largest first coordinate visited up to each checkpoint.
    pub rightmost: Vec<f64>,
    pub survived: bool,
    pub final_mass: f64,
}

/// Running maximum of the first coordinate at the last checkpoint.
pub fn rightmost_max(record: &RangeSimulationRecord) -> f64 {
    record.rightmost.last().copied().unwrap_or(0.0)
}

/// Stream key of run `index` at splitting stage `level`. Stage 0 uses the
/// plain replicate index, so direct estimates share streams with it.
pub fn stream_key(level: u64, index: u64) -> u64 {
    (level << 32) | index
}

pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ParticleSystem {
    pub fn new(mech: BranchingMechanism, d: usize, particles: usize, engine: Engine) -> Result<Self> {
        let system = Self {
            mech,
            d,
            particles,
            engine,
            cap: DEFAULT_CAP,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn validate(&self) -> Result<()> {
        self.mech.validate()?;
        if !self.mech.is_quadratic() {
            return Err(Error::Config(
                "the particle system supports quadratic mechanisms only (eta = 0)".into(),
            ));
        }
        require(self.mech.beta >= 0.0, "beta", "beta >= 0", self.mech.beta)?;
        require(self.d >= 1, "d", "d >= 1", self.d as f64)?;
        require(self.particles >= 1, "N", "N >= 1", self.particles as f64)?;
        if let Engine::Stepped { dt } = self.engine {
            require(dt > 0.0 && dt.is_finite(), "dt", "dt > 0", dt)?;
        }
        Ok(())
    }

    /// Per-particle birth and death rates.
    pub fn rates(&self) -> (f64, f64) {
        let n = self.particles as f64;
        (self.mech.alpha * n + self.mech.beta, self.mech.alpha * n)
    }

    fn step_for(&self, horizon: f64) -> Option<f64> {
        match self.engine {
            Engine::Exact => None,
            Engine::Stepped { dt } if horizon <= 0.0 => Some(dt),
            Engine::Stepped { dt } => {
                let steps = (horizon / dt).ceil().max(1.0);
                Some(horizon / steps)
            }
        }
    }

    fn start(&self, horizon: f64) -> AnyPopulation {
        let (birth, death) = self.rates();
        match self.step_for(horizon) {
            None => AnyPopulation::Exact(ExactPopulation::new(
                self.d,
                self.particles,
                birth,
                death,
                self.cap.min(usize::MAX as u64) as usize,
            )),
            Some(dt) => AnyPopulation::Stepped(SteppedPopulation::new(
                self.d,
                self.particles,
                birth,
                death,
                dt,
                self.cap,
            )),
        }
    }

    fn check_checkpoints(&self, t_end: f64, checkpoints: &[f64]) -> Result<()> {
        require(t_end >= 0.0, "t_end", "t_end >= 0", t_end)?;
        let mut previous = 0.0;
        for &c in checkpoints {
            require(c >= previous && c <= t_end, "checkpoint", "sorted within [0, t_end]", c)?;
            previous = c;
            if let Some(dt) = self.step_for(t_end) {
                let q = c / dt;
                require(
                    (q - q.round()).abs() <= 1e-9 * q.max(1.0),
                    "checkpoint / step",
                    "an integer",
                    q,
                )?;
            }
        }
        Ok(())
    }

    /// One replicate, recording the running maxima at each checkpoint.
    pub fn simulate(&self, t_end: f64, checkpoints: &[f64], seed: u64, replicate: u64) -> Result<RangeSimulationRecord> {
        self.validate()?;
        self.check_checkpoints(t_end, checkpoints)?;
        self.run_record(t_end, checkpoints, seed, replicate)
    }

    fn run_record(&self, t_end: f64, checkpoints: &[f64], seed: u64, replicate: u64) -> Result<RangeSimulationRecord> {
        let mut rng = replicate_rng(seed, stream_key(0, replicate));
        let mut population = self.start(t_end);
        let mut range_radius = Vec::with_capacity(checkpoints.len());
        let mut rightmost = Vec::with_capacity(checkpoints.len());
        for &c in checkpoints {
            population.run(&mut rng, c, None)?;
            let e = population.extremes();
            range_radius.push(e.radius);
            rightmost.push(e.rightmost);
        }
        population.run(&mut rng, t_end, None)?;
        let count = population.count();
        Ok(RangeSimulationRecord {
            replicate,
            checkpoints: checkpoints.to_vec(),
            range_radius,
            rightmost,
            survived: count > 0,
            final_mass: count as f64 / self.particles as f64,
        })
    }

    /// Replicates `0..replicates`, run in parallel; the output is in replicate order.
    pub fn simulate_many(
        &self,
        t_end: f64,
        checkpoints: &[f64],
        seed: u64,
        replicates: u64,
    ) -> Result<Vec<RangeSimulationRecord>> {
        self.validate()?;
        self.check_checkpoints(t_end, checkpoints)?;
        (0..replicates)
            .into_par_iter()
            .map(|i| self.run_record(t_end, checkpoints, seed, i))
            .collect()
    }

    /// Total mass at `t` of replicate `replicate`, drawn from the exact law of
    /// the particle count (positions are not simulated).
    pub fn sample_mass(&self, t: f64, seed: u64, replicate: u64) -> Result<f64> {
        self.validate()?;
        require(t >= 0.0, "t", "t >= 0", t)?;
        let (birth, death) = self.rates();
        let mut rng = replicate_rng(seed, stream_key(0, replicate));
        let count = BirthDeathLaw::new(birth, death, t).total_offspring(&mut rng, self.particles as u64);
        Ok(count as f64 / self.particles as f64)
    }
}

/// Simulation state of either engine.
pub(crate) trait Population: Clone + Send + Sync {
    fn extremes(&self) -> Extremes;
    fn count(&self) -> u64;
    /// Advance to `until`, or stop early once the range radius reaches
    /// `stop_radius`. With a stop radius, maxima below it may be left
    /// unsampled and are then only lower bounds.
    fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, until: f64, stop_radius: Option<f64>) -> Result<()>;
}

#[derive(Debug, Clone)]
pub(crate) enum AnyPopulation {
    Exact(ExactPopulation),
    Stepped(SteppedPopulation),
}

impl Population for AnyPopulation {
    fn extremes(&self) -> Extremes {
        match self {
            Self::Exact(p) => p.extremes(),
            Self::Stepped(p) => p.extremes(),
        }
    }

    fn count(&self) -> u64 {
        match self {
            Self::Exact(p) => p.count(),
            Self::Stepped(p) => p.count(),
        }
    }

    fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, until: f64, stop_radius: Option<f64>) -> Result<()> {
        match self {
            Self::Exact(p) => p.run(rng, until, stop_radius),
            Self::Stepped(p) => p.run(rng, until, stop_radius),
        }
    }
}

/// Per-replicate CSV: `replicate, survived, final_mass, R_t<c>..., H_t<c>...`.
pub fn write_records(path: &Path, records: &[RangeSimulationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let checkpoints = records.first().map(|r| r.checkpoints.clone()).unwrap_or_default();
    let mut header = vec!["replicate".to_string(), "survived".into(), "final_mass".into()];
    header.extend(checkpoints.iter().map(|c| format!("R_t{c}")));
    header.extend(checkpoints.iter().map(|c| format!("H_t{c}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.replicate.to_string(), r.survived.to_string(), crate::fmt_f64(r.final_mass)];
        row.extend(r.range_radius.iter().map(|&x| crate::fmt_f64(x)));
        row.extend(r.rightmost.iter().map(|&x| crate::fmt_f64(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(engine: Engine) -> ParticleSystem {
        let mech = BranchingMechanism::quadratic(1.0, 1.0).unwrap();
        ParticleSystem::new(mech, 1, 50, engine).unwrap()
    }

    #[test]
    fn time_zero_record_is_the_origin() {
        for engine in [Engine::Exact, Engine::Stepped { dt: 0.05 }] {
            let r = system(engine).simulate(0.0, &[0.0], 7, 0).unwrap();
            assert_eq!(r.range_radius, vec![0.0]);
            assert_eq!(rightmost_max(&r), 0.0);
            assert_eq!(r.final_mass, 1.0);
        }
    }

    #[test]
    fn records_are_reproducible_and_streams_differ() {
        for engine in [Engine::Exact, Engine::Stepped { dt: 0.05 }] {
            let s = system(engine);
            let a = s.simulate(1.0, &[0.5, 1.0], 11, 3).unwrap();
            let b = s.simulate(1.0, &[0.5, 1.0], 11, 3).unwrap();
            let c = s.simulate(1.0, &[0.5, 1.0], 11, 4).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.range_radius, c.range_radius);
        }
    }

    #[test]
    fn maxima_are_ordered() {
        for engine in [Engine::Exact, Engine::Stepped { dt: 0.05 }] {
            for r in system(engine).simulate_many(1.0, &[0.25, 0.5, 1.0], 5, 50).unwrap() {
                assert!(r.range_radius.windows(2).all(|w| w[0] <= w[1]));
                assert!(r.rightmost.windows(2).all(|w| w[0] <= w[1]));
                assert!(r.range_radius.iter().zip(&r.rightmost).all(|(a, b)| a >= b));
            }
        }
    }

    #[test]
    fn stable_mechanisms_are_rejected() {
        let mech = BranchingMechanism::new(1.0, 1.0, 0.5, 0.5).unwrap();
        assert!(ParticleSystem::new(mech, 1, 10, Engine::Exact).is_err());
    }

    #[test]
    fn off_grid_checkpoints_are_rejected() {
        let s = system(Engine::Stepped { dt: 0.1 });
        assert!(s.simulate(1.0, &[0.55], 1, 0).is_err());
        assert!(s.simulate(1.0, &[0.6, 0.5], 1, 0).is_err());
    }

    #[test]
    fn explosion_is_reported() {
        let mut s = system(Engine::Stepped { dt: 0.05 });
        s.cap = 10;
        assert!(matches!(s.simulate(1.0, &[], 1, 0), Err(Error::Explosion { .. })));
    }
}
