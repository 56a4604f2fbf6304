//! Fixed-step simulation driven by the exact birth-death law over each step.
//!
//! Over one step of length `dt` a particle leaves `K` descendants, with `K`
//! zero-modified geometric. The genealogy of those descendants (the tree
//! spanned by lineages still alive at the end of the step) is a coalescent
//! point process: listing the tips in planar order, tip `i + 1` branches off
//! the lineage of tip `i` at depth `H_i`, and the depths are i.i.d. Running
//! Brownian motion along that tree gives the exact joint law of the
//! descendant positions; bridge maxima along its edges give the path maxima.
//! Lineages born and dying inside a single step are absent from that tree.
//! Near the current maxima their reach is sampled from the limiting hitting
//! law in [`super::dust`]: extinct side clusters are shed along every edge of
//! a realised tree, and every placed particle that dies out within the step
//! leaves one such cluster.
//!
//! Most trees sit well inside the current maxima. Such a tree is kept as a
//! lazy group `(root, K)`; only the tips that survive the next step are ever
//! placed, using the fact that a subset of comb tips is again a comb whose
//! depths are maxima over the gaps.

use rand::seq::index;
use rand::Rng;

use super::sampling::{norm, normal, BirthDeathLaw, Extremes};
use super::Population;
use crate::error::{Error, Result};

/// Bound on the probability that a lazily skipped tree would have moved a maximum.
const SKIP_RISK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct SteppedPopulation {
    d: usize,
    time: f64,
    dt: f64,
    law: BirthDeathLaw,
    cap: u64,
    /// Particles at `time` with known positions.
    placed: Vec<f64>,
    /// Lazy groups: root at `time - dt` and tip count at `time`.
    roots: Vec<f64>,
    counts: Vec<u64>,
    population: u64,
    extremes: Extremes,
    dust: Dust,
    /// End of the current run; with a floor, groups that cannot reach it
    /// before this time are dropped.
    horizon: f64,
    work: Workspace,
}

/// Weights of the extinct-cluster intensities; zero when nothing can die.
#[derive(Debug, Clone, Copy)]
struct Dust {
    /// Side clusters arrive at rate `2 birth`, each reaching a half-space with
    /// probability `G / (death tau)`.
    edge: f64,
    /// `1 / (death dt p0)`.
    point: f64,
}

#[derive(Debug, Clone, Default)]
struct Workspace {
    roots: Vec<f64>,
    counts: Vec<u64>,
    /// Current lineage of the comb as `(time, position)` points.
    stack_t: Vec<f64>,
    stack_x: Vec<f64>,
    tip: Vec<f64>,
    point: Vec<f64>,
}

impl SteppedPopulation {
    pub fn new(d: usize, particles: usize, birth: f64, death: f64, dt: f64, cap: u64) -> Self {
        let law = BirthDeathLaw::new(birth, death, dt);
        let dust = if death > 0.0 && law.p0 > 0.0 {
            Dust {
                edge: 2.0 * birth / death,
                point: 1.0 / (death * dt * law.p0),
            }
        } else {
            Dust { edge: 0.0, point: 0.0 }
        };
        Self {
            d,
            time: 0.0,
            dt,
            law,
            cap,
            placed: vec![0.0; particles * d],
            roots: Vec::new(),
            counts: Vec::new(),
            population: particles as u64,
            extremes: Extremes::origin(),
            dust,
            horizon: f64::INFINITY,
            work: Workspace::default(),
        }
    }

    fn reach(&self, tips: u64) -> f64 {
        // many-to-one: P(tree leaves the ball of radius c sqrt(dt) around its root)
        //   <= tips * 2d * P(N(0,1) > c) <= tips * 2d * exp(-c^2 / 2)
        let c = (2.0 * (2.0 * self.d as f64 * tips as f64 / SKIP_RISK).ln()).sqrt();
        c * self.dt.sqrt()
    }

    /// Whether `k` tips of a tree rooted at `root` one step ago can be
    /// dropped. By many-to-one, the expected number of their descendants
    /// reaching distance `D` beyond the tips within time `r` is at most
    /// `k e^{net r} exp(-D^2 / (2 r))`.
    fn hopeless(&self, root: &[f64], k: u64) -> bool {
        if self.extremes.floor <= 0.0 || !self.horizon.is_finite() {
            return false;
        }
        let r = self.horizon - self.time;
        let gap = self.extremes.floor - norm(root) - self.reach(k);
        if r <= 0.0 {
            return gap > 0.0;
        }
        gap > 0.0 && (k as f64).ln() + self.law.net() * r - 0.5 * gap * gap / r < SKIP_RISK.ln()
    }

    /// One step: thin the current particles, grow the survivors' trees and
    /// settle the maxima up to the new time.
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let d = self.d;
        let mut work = std::mem::take(&mut self.work);
        work.roots.clear();
        work.counts.clear();

        let point_reach = self.reach(1);
        for x in self.placed.chunks_exact(d) {
            if rng.random::<f64>() >= self.law.p0 {
                work.roots.extend_from_slice(x);
                work.counts.push(self.law.offspring(rng));
            } else if self.dust.point > 0.0 && self.extremes.reachable(x, point_reach) {
                self.extremes.absorb_point_dust(rng, x, self.dt, self.dust.point);
            }
        }
        for g in 0..self.counts.len() {
            let k = self.counts[g];
            let keep = self.law.survivors(rng, k);
            if keep == 0 {
                continue;
            }
            let mut picks: Vec<u64> = if keep == k {
                (0..k).collect()
            } else {
                index::sample(rng, k as usize, keep as usize)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect()
            };
            picks.sort_unstable();
            let root = &self.roots[g * d..(g + 1) * d];
            comb(
                rng,
                self.dt,
                root,
                picks.len(),
                |rng, j| {
                    let gap = picks[j] - picks[j - 1];
                    self.law.max_depth(rng, gap)
                },
                None,
                0.0,
                &mut work.stack_t,
                &mut work.stack_x,
                &mut work.point,
                &mut work.tip,
                |tip| work.roots.extend_from_slice(tip),
            );
            for _ in 0..keep {
                work.counts.push(self.law.offspring(rng));
            }
        }

        self.time += self.dt;
        self.population = work.counts.iter().sum();
        if self.population > self.cap {
            self.work = work;
            return Err(Error::Explosion {
                cap: self.cap as usize,
                time: self.time,
            });
        }

        self.placed.clear();
        self.roots.clear();
        self.counts.clear();
        for g in 0..work.counts.len() {
            let k = work.counts[g];
            let root = &work.roots[g * d..(g + 1) * d];
            if self.extremes.reachable(root, self.reach(k)) {
                let placed = &mut self.placed;
                comb(
                    rng,
                    self.dt,
                    root,
                    k as usize,
                    |rng, _| self.law.max_depth(rng, 1),
                    Some(&mut self.extremes),
                    self.dust.edge,
                    &mut work.stack_t,
                    &mut work.stack_x,
                    &mut work.point,
                    &mut work.tip,
                    |tip| placed.extend_from_slice(tip),
                );
            } else if !self.hopeless(root, k) {
                self.roots.extend_from_slice(root);
                self.counts.push(k);
            } else {
                self.population -= k;
            }
        }
        self.work = work;
        Ok(())
    }
}

/// Realise the tips of a comb tree of height `span` rooted at `root`.
/// `depth(rng, j)` gives the branching depth of tip `j` (for `j >= 1`) off the
/// lineage of tip `j - 1`. When `extremes` is given, every edge contributes
/// its bridge maxima and the side clusters it sheds with weight `dust`.
#[allow(clippy::too_many_arguments)]
fn comb<R: Rng + ?Sized>(
    rng: &mut R,
    span: f64,
    root: &[f64],
    tips: usize,
    mut depth: impl FnMut(&mut R, usize) -> f64,
    mut extremes: Option<&mut Extremes>,
    dust: f64,
    stack_t: &mut Vec<f64>,
    stack_x: &mut Vec<f64>,
    point: &mut Vec<f64>,
    tip: &mut Vec<f64>,
    mut emit: impl FnMut(&[f64]),
) {
    let d = root.len();
    stack_t.clear();
    stack_x.clear();
    point.resize(d, 0.0);
    tip.resize(d, 0.0);

    let mut close = |rng: &mut R, t0: f64, x0: &[f64], t1: f64, x1: &[f64]| {
        if let Some(e) = extremes.as_deref_mut() {
            e.absorb_bridge(rng, x0, x1, t1 - t0);
            if dust > 0.0 {
                e.absorb_edge_dust(rng, x0, x1, span - t0, span - t1, dust);
            }
        }
    };

    stack_t.push(0.0);
    stack_x.extend_from_slice(root);
    let sd = span.sqrt();
    for (c, r) in tip.iter_mut().zip(root) {
        *c = r + sd * normal(rng);
    }
    stack_t.push(span);
    stack_x.extend_from_slice(tip);
    emit(tip);

    for j in 1..tips {
        let branch = span - depth(rng, j);
        // drop lineage points strictly after the branch time, keeping a bracket
        while stack_t.len() >= 2 && stack_t[stack_t.len() - 2] >= branch {
            let n = stack_t.len();
            let (head, top) = stack_x.split_at((n - 1) * d);
            close(rng, stack_t[n - 2], &head[(n - 2) * d..], stack_t[n - 1], top);
            stack_t.pop();
            stack_x.truncate((n - 1) * d);
        }
        let n = stack_t.len();
        let (ta, tb) = (stack_t[n - 2], stack_t[n - 1]);
        {
            let (xa, xb) = stack_x.split_at((n - 1) * d);
            let xa = &xa[(n - 2) * d..];
            let w = (branch - ta) / (tb - ta);
            let sd = ((branch - ta) * (tb - branch) / (tb - ta)).max(0.0).sqrt();
            for c in 0..d {
                point[c] = xa[c] + w * (xb[c] - xa[c]) + sd * normal(rng);
            }
            close(rng, branch, point, tb, xb);
        }
        stack_t.pop();
        stack_x.truncate((n - 1) * d);
        stack_t.push(branch);
        stack_x.extend_from_slice(point);
        let sd = (span - branch).sqrt();
        for c in 0..d {
            tip[c] = point[c] + sd * normal(rng);
        }
        stack_t.push(span);
        stack_x.extend_from_slice(tip);
        emit(tip);
    }
    for i in 1..stack_t.len() {
        let (head, tail) = stack_x.split_at(i * d);
        close(rng, stack_t[i - 1], &head[(i - 1) * d..], stack_t[i], &tail[..d]);
    }
}

impl Population for SteppedPopulation {
    fn extremes(&self) -> Extremes {
        self.extremes
    }

    fn count(&self) -> u64 {
        self.population
    }

    fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, until: f64, stop_radius: Option<f64>) -> Result<()> {
        let stop = stop_radius.unwrap_or(f64::INFINITY);
        self.extremes.floor = stop_radius.unwrap_or(0.0);
        self.horizon = if stop_radius.is_some() { until } else { f64::INFINITY };
        while self.time < until - 0.5 * self.dt {
            if self.extremes.radius >= stop {
                return Ok(());
            }
            if self.population == 0 {
                self.time = until;
                return Ok(());
            }
            self.step(rng)?;
        }
        self.time = until;
        Ok(())
    }
}
