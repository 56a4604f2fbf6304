//! Monte Carlo certification of radial PDE solutions.
//!
//! For `v_t = ½Δv − psi(v) + phi`, `v(0) = g`, write `psi(v) = k(v) v`. Along
//! a Brownian path `B` started at `x`,
//!
//! ```text
//! v(t, x) = E[ g(B_t) e^{−A_t} + ∫_0^t phi(B_s) e^{−A_s} ds ],
//!     A_s = ∫_0^s k(v(t − r, B_r)) dr,
//! ```
//!
//! and the mild form reads
//!
//! ```text
//! v(t, x) = E[ g(B_t) ] + ∫_0^t E[ phi(B_s) ] ds − E[ ∫_0^t psi(v(t − s, B_s)) ds ].
//! ```
//!
//! Both right-hand sides are estimated with the solver's own field inserted,
//! so agreement with the field certifies it. Paths are sampled exactly on a
//! uniform grid and the time integrals use the trapezoidal rule on that grid.
//! Because paths are built by bridge bisection, estimates with `n` and
//! `2^k n` steps from the same seed share their coarse points, which isolates
//! the quadrature bias from sampling noise.
//!
//! The field is known only up to its outer radius, where the solver imposes
//! its boundary value. A path is stopped at its first grid point beyond that
//! radius: the time integrals end there and the terminal value is the field's
//! boundary value at the remaining time, as in the representation of the
//! boundary-value problem. The fraction of path points beyond the radius is
//! reported with each estimate.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{require, Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::particles::replicate_rng;
use crate::pde::{Boundary, Profile, RadialField};

/// Bilinear interpolation in `(t, r)` over a stack of radial snapshots.
/// Beyond the last radius the boundary value is used.
#[derive(Debug, Clone)]
pub struct FieldInterpolant {
    snapshots: Vec<RadialField>,
    error_bound: f64,
}

impl FieldInterpolant {
    /// Snapshots must share `d` and the radial grid, be nonnegative and have
    /// strictly increasing times, the first at `t = 0`.
    pub fn new(snapshots: Vec<RadialField>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::Config("a field needs at least one snapshot".into()))?;
        require(first.t == 0.0, "first snapshot time", "0", first.t)?;
        for s in &snapshots {
            if s.d != first.d || s.h != first.h || s.values.len() != first.values.len() {
                return Err(Error::Config("snapshots must share the dimension and radial grid".into()));
            }
            if let Some(&v) = s.values.iter().find(|v| !(**v >= 0.0)) {
                require(false, "field value", ">= 0", v)?;
            }
        }
        for w in snapshots.windows(2) {
            require(w[1].t > w[0].t, "snapshot time", "strictly increasing", w[1].t)?;
        }
        let error_bound = interpolation_error_bound(&snapshots, first.values.len());
        Ok(Self { snapshots, error_bound })
    }

    pub fn d(&self) -> usize {
        self.snapshots[0].d
    }

    pub fn t_end(&self) -> f64 {
        self.snapshots.last().unwrap().t
    }

    pub fn r_max(&self) -> f64 {
        self.snapshots[0].r_max()
    }

    pub fn snapshots(&self) -> &[RadialField] {
        &self.snapshots
    }

    /// Largest deviation of a bilinear interpolant from a smooth field with
    /// these samples, estimated as `(Δ²/8) |f''|` from second differences in
    /// each direction.
    pub fn interpolation_error_bound(&self) -> f64 {
        self.error_bound
    }

    /// As [`Self::interpolation_error_bound`], over radii `r <= radius` only.
    pub fn interpolation_error_bound_within(&self, radius: f64) -> f64 {
        let nodes = ((radius / self.snapshots[0].h).floor() as usize + 1).min(self.snapshots[0].values.len());
        interpolation_error_bound(&self.snapshots, nodes)
    }

    pub fn value(&self, t: f64, r: f64) -> f64 {
        let s = &self.snapshots;
        let k = s.partition_point(|f| f.t <= t);
        if k == 0 {
            return s[0].value_at(r);
        }
        if k == s.len() {
            return s[k - 1].value_at(r);
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let w = (t - a.t) / (b.t - a.t);
        (1.0 - w) * a.value_at(r) + w * b.value_at(r)
    }
}

/// Over the first `nodes` radii.
fn interpolation_error_bound(snapshots: &[RadialField], nodes: usize) -> f64 {
    let mut bound = 0.0f64;
    for s in snapshots {
        for w in s.values[..nodes].windows(3) {
            bound = bound.max((w[0] - 2.0 * w[1] + w[2]).abs() / 8.0);
        }
    }
    for w in snapshots.windows(3) {
        let (ta, tb, tc) = (w[0].t, w[1].t, w[2].t);
        let (h1, h2) = (tb - ta, tc - tb);
        for i in 0..nodes {
            // second divided difference times the local spacing squared
            let second = 2.0
                * ((w[2].values[i] - w[1].values[i]) / h2 - (w[1].values[i] - w[0].values[i]) / h1)
                / (h1 + h2);
            bound = bound.max(second.abs() * h1.max(h2).powi(2) / 8.0);
        }
    }
    bound
}

/// Sample mean with its standard error and the fraction of path time spent
/// beyond the field's radial range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub clipped_fraction: f64,
    pub paths: u64,
}

impl FkEstimate {
    /// `|mean − reference| ≤ sigmas · stderr + allowance`.
    pub fn agrees_with(&self, reference: f64, sigmas: f64, allowance: f64) -> bool {
        (self.mean - reference).abs() <= sigmas * self.stderr + allowance
    }
}

struct PathSums {
    value: f64,
    clipped: usize,
}

fn estimate(
    field: &FieldInterpolant,
    t: f64,
    x: &[f64],
    n_paths: u64,
    n_steps: usize,
    seed: u64,
    per_path: impl Fn(&[f64], f64, Option<f64>) -> f64 + Sync,
) -> Result<FkEstimate> {
    require(t >= 0.0 && t <= field.t_end() * (1.0 + 1e-12), "t", "within the field's time range", t)?;
    require(x.len() == field.d(), "start point dimension", "the field's d", x.len() as f64)?;
    require(norm(x) <= field.r_max(), "|x|", "inside the radial grid", norm(x))?;
    require(n_paths >= 2, "n_paths", ">= 2", n_paths as f64)?;
    require(n_steps >= 1, "n_steps", ">= 1", n_steps as f64)?;
    let dt = t / n_steps as f64;
    let r_max = field.r_max();
    let sums: Vec<PathSums> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let mut radii = bisected_path(&mut rng, x, t, n_steps);
            let clipped = radii.iter().filter(|&&r| r > r_max).count();
            let boundary = radii.iter().position(|&r| r > r_max).map(|exit| {
                radii.truncate(exit + 1);
                radii[exit] = r_max;
                field.value(t - exit as f64 * dt, r_max)
            });
            PathSums {
                value: per_path(&radii, dt, boundary),
                clipped,
            }
        })
        .collect();
    let n = n_paths as f64;
    let mean = sums.iter().map(|s| s.value).sum::<f64>() / n;
    let var = sums.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let clipped = sums.iter().map(|s| s.clipped).sum::<usize>() as f64 / (n * (n_steps + 1) as f64);
    Ok(FkEstimate {
        mean,
        stderr: (var / n).sqrt(),
        clipped_fraction: clipped,
        paths: n_paths,
    })
}

/// Radii of a Brownian path from `x` at `j t / n`, `j = 0..=n`, built by
/// bridge bisection in breadth-first order: first the endpoint, then the
/// midpoints of ever finer intervals. Paths drawn with the same stream for
/// `n` and `2^k n` steps therefore agree on the coarse grid.
fn bisected_path<R: Rng + ?Sized>(rng: &mut R, x: &[f64], t: f64, n: usize) -> Vec<f64> {
    let d = x.len();
    let dt = t / n as f64;
    let mut pos = vec![0.0; (n + 1) * d];
    pos[..d].copy_from_slice(x);
    for c in 0..d {
        pos[n * d + c] = x[c] + t.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }
    let mut queue = VecDeque::from([(0usize, n)]);
    while let Some((a, b)) = queue.pop_front() {
        if b - a < 2 {
            continue;
        }
        let m = (a + b) / 2;
        let w = (m - a) as f64 / (b - a) as f64;
        let sd = ((m - a) as f64 * (b - m) as f64 / (b - a) as f64 * dt).sqrt();
        for c in 0..d {
            let mean = pos[a * d + c] + w * (pos[b * d + c] - pos[a * d + c]);
            pos[m * d + c] = mean + sd * rng.sample::<f64, _>(StandardNormal);
        }
        queue.push_back((a, m));
        queue.push_back((m, b));
    }
    pos.chunks_exact(d).map(norm).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Feynman–Kac estimate of `v(t, x)` with `v` taken from `field` inside the
/// exponent.
#[allow(clippy::too_many_arguments)]
pub fn fk_estimate(
    field: &FieldInterpolant,
    mech: &BranchingMechanism,
    g: &Profile,
    phi: &Profile,
    t: f64,
    x: &[f64],
    n_paths: u64,
    n_steps: usize,
    seed: u64,
) -> Result<FkEstimate> {
    mech.validate()?;
    let per_path = |radii: &[f64], dt: f64, boundary: Option<f64>| {
        let k = |j: usize| mech.k_unchecked(field.value(t - j as f64 * dt, radii[j]));
        let mut exponent = 0.0;
        let mut k_prev = k(0);
        let mut source_prev = phi.eval(radii[0]);
        let mut forced = 0.0;
        for j in 1..radii.len() {
            let k_next = k(j);
            exponent += 0.5 * dt * (k_prev + k_next);
            let source_next = phi.eval(radii[j]) * (-exponent).exp();
            forced += 0.5 * dt * (source_prev + source_next);
            k_prev = k_next;
            source_prev = source_next;
        }
        let terminal = boundary.unwrap_or_else(|| g.eval(*radii.last().unwrap()));
        terminal * (-exponent).exp() + forced
    };
    estimate(field, t, x, n_paths, n_steps, seed, per_path)
}

/// `v(t, x)` minus the Monte Carlo mild-form right-hand side, over shared paths.
#[allow(clippy::too_many_arguments)]
pub fn mild_form_residual(
    field: &FieldInterpolant,
    mech: &BranchingMechanism,
    g: &Profile,
    phi: &Profile,
    t: f64,
    x: &[f64],
    n_paths: u64,
    n_steps: usize,
    seed: u64,
) -> Result<FkEstimate> {
    mech.validate()?;
    let per_path = |radii: &[f64], dt: f64, boundary: Option<f64>| {
        let integrand = |j: usize| {
            let v = field.value(t - j as f64 * dt, radii[j]);
            phi.eval(radii[j]) - mech.psi_unchecked(v)
        };
        let n = radii.len() - 1;
        let mut integral = 0.5 * (integrand(0) + integrand(n));
        for j in 1..n {
            integral += integrand(j);
        }
        boundary.unwrap_or_else(|| g.eval(radii[n])) + integral * dt
    };
    let rhs = estimate(field, t, x, n_paths, n_steps, seed, per_path)?;
    Ok(FkEstimate {
        mean: field.value(t, norm(x)) - rhs.mean,
        ..rhs
    })
}

/// Outcome of checking `v ≤ sup g + t sup phi − t min psi` on every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriReport {
    pub holds: bool,
    /// Smallest `bound(t) − v(t, r)` over all nodes and snapshots.
    pub margin: f64,
    /// Node attaining the smallest margin.
    pub worst_t: f64,
    pub worst_r: f64,
    pub worst_value: f64,
    pub worst_bound: f64,
}

/// A Dirichlet value at the outer radius counts as initial data.
pub fn apriori_bound_check(
    field: &FieldInterpolant,
    g: &Profile,
    phi: &Profile,
    mech: &BranchingMechanism,
    boundary: Boundary,
) -> AprioriReport {
    let grid = &field.snapshots[0];
    let sup = |p: &Profile| grid.radii().map(|r| p.eval(r)).fold(0.0, f64::max);
    let mut sup_g = sup(g);
    if let Boundary::Dirichlet(v) = boundary {
        sup_g = sup_g.max(v);
    }
    let sup_phi = sup(phi);
    let min_psi = mech.min_psi();
    let mut report = AprioriReport {
        holds: true,
        margin: f64::INFINITY,
        worst_t: 0.0,
        worst_r: 0.0,
        worst_value: 0.0,
        worst_bound: f64::INFINITY,
    };
    for s in &field.snapshots {
        let bound = sup_g + (sup_phi - min_psi) * s.t;
        for (r, &v) in s.radii().zip(&s.values) {
            let margin = bound - v;
            if margin < report.margin {
                report = AprioriReport {
                    holds: true,
                    margin,
                    worst_t: s.t,
                    worst_r: r,
                    worst_value: v,
                    worst_bound: bound,
                };
            }
        }
    }
    report.holds = report.margin >= -1e-9 * report.worst_bound.abs().max(1.0);
    report
}

/// One line of a certification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub configuration: String,
    pub value: f64,
    pub reference: f64,
    pub stderr: f64,
    pub passed: bool,
}

/// CSV: `check_name, configuration, value, reference, stderr, pass`.
pub fn write_checks(path: &Path, rows: &[CheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["check_name", "configuration", "value", "reference", "stderr", "pass"])?;
    for row in rows {
        w.write_record([
            row.check.clone(),
            row.configuration.clone(),
            crate::fmt_f64(row.value),
            crate::fmt_f64(row.reference),
            crate::fmt_f64(row.stderr),
            if row.passed { "pass" } else { "fail" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
