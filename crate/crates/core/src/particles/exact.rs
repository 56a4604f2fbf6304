//! Event-driven simulation: every birth and death is realised.
//!
//! Positions are advanced lazily. Each particle stores the time of its last
//! update, and its path is extended by an exact Gaussian increment when it is
//! touched by an event or a checkpoint. The segment maxima are drawn from the
//! Brownian-bridge law given both endpoints.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::sampling::{normal, Extremes};
use super::Population;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct ExactPopulation {
    d: usize,
    time: f64,
    birth: f64,
    death: f64,
    cap: usize,
    positions: Vec<f64>,
    updated: Vec<f64>,
    extremes: Extremes,
    scratch: Vec<f64>,
}

impl ExactPopulation {
    pub fn new(d: usize, particles: usize, birth: f64, death: f64, cap: usize) -> Self {
        Self {
            d,
            time: 0.0,
            birth,
            death,
            cap,
            positions: vec![0.0; particles * d],
            updated: vec![0.0; particles],
            extremes: Extremes::origin(),
            scratch: vec![0.0; d],
        }
    }

    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R, i: usize) {
        let tau = self.time - self.updated[i];
        if tau <= 0.0 {
            return;
        }
        let sd = tau.sqrt();
        let d = self.d;
        let x = &mut self.positions[i * d..(i + 1) * d];
        self.scratch.copy_from_slice(x);
        for c in x.iter_mut() {
            *c += sd * normal(rng);
        }
        self.extremes.absorb_bridge(rng, &self.scratch, x, tau);
        self.updated[i] = self.time;
    }
}

impl Population for ExactPopulation {
    fn extremes(&self) -> Extremes {
        self.extremes
    }

    fn count(&self) -> u64 {
        self.updated.len() as u64
    }

    fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, until: f64, stop_radius: Option<f64>) -> Result<()> {
        let per_particle = self.birth + self.death;
        let stop = stop_radius.unwrap_or(f64::INFINITY);
        if self.extremes.radius >= stop {
            return Ok(());
        }
        loop {
            let n = self.updated.len();
            if n == 0 || per_particle == 0.0 {
                self.time = until;
                break;
            }
            let wait = Exp::new(n as f64 * per_particle).unwrap().sample(rng);
            if self.time + wait >= until {
                self.time = until;
                break;
            }
            self.time += wait;
            let i = rng.random_range(0..n);
            self.advance(rng, i);
            if rng.random::<f64>() * per_particle < self.birth {
                if n + 1 > self.cap {
                    return Err(Error::Explosion {
                        cap: self.cap,
                        time: self.time,
                    });
                }
                self.positions.extend_from_within(i * self.d..(i + 1) * self.d);
                self.updated.push(self.time);
            } else {
                let last = n - 1;
                let d = self.d;
                self.positions.copy_within(last * d..n * d, i * d);
                self.positions.truncate(last * d);
                self.updated.swap_remove(i);
            }
            if self.extremes.radius >= stop {
                return Ok(());
            }
        }
        for i in 0..self.updated.len() {
            self.advance(rng, i);
        }
        Ok(())
    }
}
