//! Large-deviation rates of the range, their extrapolation from finite-`t`
//! data, and the Gaussian tail estimates behind the upper bound.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::error::{require, Error, Result};
use crate::particles::estimate::Method;
use crate::particles::replicate_rng;

/// `−(ρ²/2 − β)`, the exponential rate of `P(R_t ≥ ρt)` above the speed `√(2β)`.
pub fn rate_upper(beta: f64, rho: f64) -> Result<f64> {
    require(beta >= 0.0, "beta", "beta >= 0", beta)?;
    require(rho > (2.0 * beta).sqrt(), "rho", "rho > sqrt(2 beta)", rho)?;
    Ok(-(0.5 * rho * rho - beta))
}

/// `−β + √(β/2) ρ`, the exponential rate of `P(R_t ≤ ρt | survival)` below `√(2β)`.
pub fn rate_lower(beta: f64, rho: f64) -> Result<f64> {
    require(beta > 0.0, "beta", "beta > 0", beta)?;
    require(
        rho > 0.0 && rho < (2.0 * beta).sqrt(),
        "rho",
        "0 < rho < sqrt(2 beta)",
        rho,
    )?;
    Ok(-beta + (0.5 * beta).sqrt() * rho)
}

/// Where a deviation probability came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Pde,
    McDirect,
    McSplitting,
}

impl Route {
    pub fn tag(&self) -> &'static str {
        match self {
            Route::Pde => "pde",
            Route::McDirect => "mc_direct",
            Route::McSplitting => "mc_splitting",
        }
    }
}

impl From<Method> for Route {
    fn from(m: Method) -> Self {
        match m {
            Method::Direct => Route::McDirect,
            Method::Splitting => Route::McSplitting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationEntry {
    pub t: f64,
    pub log_prob: f64,
    /// Standard error of `log_prob`; ignored for PDE entries.
    pub stderr_log: f64,
}

/// Finite-`t` values of `log P` at fixed `rho`, and the fitted rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationEstimate {
    pub rho: f64,
    pub method: Route,
    pub entries: Vec<DeviationEntry>,
    /// Slope `−I` of the fit `log P ≈ −I t + a log t + b`; negative, like
    /// [`rate_upper`] and [`rate_lower`].
    pub fitted_rate: Option<f64>,
    pub fitted_rate_stderr: Option<f64>,
    /// `(a, b)` of the fit.
    pub correction: Option<(f64, f64)>,
}

impl DeviationEstimate {
    pub fn new(rho: f64, method: Route) -> Self {
        Self {
            rho,
            method,
            entries: Vec::new(),
            fitted_rate: None,
            fitted_rate_stderr: None,
            correction: None,
        }
    }

    /// Add `log P` at `t`; `log P` must not be positive.
    pub fn push(&mut self, t: f64, log_prob: f64, stderr_log: f64) -> Result<()> {
        require(t > 0.0, "t", "t > 0", t)?;
        require(log_prob <= 0.0, "log probability", "<= 0", log_prob)?;
        self.entries.push(DeviationEntry { t, log_prob, stderr_log });
        Ok(())
    }

    /// `log P / t` per entry.
    pub fn naive_rates(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.t, e.log_prob / e.t)).collect()
    }
}

/// Weighted least squares of `log P` on `[−t, log t, 1]`. Monte Carlo entries
/// are weighted by `1 / stderr²` and the rate's standard error follows from
/// those variances; PDE entries are weighted equally and the standard error
/// comes from the residuals (zero for an exact fit of three points).
pub fn fit_rate(estimate: &DeviationEstimate) -> Result<DeviationEstimate> {
    let mut out = estimate.clone();
    out.entries.sort_by(|a, b| a.t.total_cmp(&b.t));
    let n = out.entries.len();
    if n < 3 {
        return Err(Error::SingularFit(format!("{n} entries, need at least 3")));
    }
    if out.entries.windows(2).any(|w| w[1].t == w[0].t) {
        return Err(Error::SingularFit("duplicate t values".into()));
    }
    let weighted = estimate.method != Route::Pde;
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for e in &out.entries {
        let w = if weighted {
            require(e.stderr_log > 0.0 && e.stderr_log.is_finite(), "stderr of log P", "> 0", e.stderr_log)?;
            1.0 / (e.stderr_log * e.stderr_log)
        } else {
            1.0
        };
        let x = Vector3::new(-e.t, e.t.ln(), 1.0);
        normal += w * x * x.transpose();
        rhs += w * e.log_prob * x;
    }
    // scale columns so that the conditioning reflects the data, not the units
    let scale = Vector3::from_iterator((0..3).map(|i| normal[(i, i)].sqrt()));
    let scaled = Matrix3::from_fn(|i, j| normal[(i, j)] / (scale[i] * scale[j]));
    let svd = scaled.svd(false, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-13 * smax) {
        return Err(Error::SingularFit(format!("condition number {:e}", smax / smin)));
    }
    let inverse = scaled
        .try_inverse()
        .ok_or_else(|| Error::SingularFit("normal equations not invertible".into()))?;
    let covariance = Matrix3::from_fn(|i, j| inverse[(i, j)] / (scale[i] * scale[j]));
    let beta = covariance * rhs;
    let variance = if weighted {
        covariance[(0, 0)]
    } else if n > 3 {
        let rss: f64 = out
            .entries
            .iter()
            .map(|e| (e.log_prob - (-beta[0] * e.t + beta[1] * e.t.ln() + beta[2])).powi(2))
            .sum();
        rss / (n - 3) as f64 * covariance[(0, 0)]
    } else {
        0.0
    };
    out.fitted_rate = Some(-beta[0]);
    out.fitted_rate_stderr = Some(variance.max(0.0).sqrt());
    out.correction = Some((beta[1], beta[2]));
    Ok(out)
}

/// `P(|N| ≥ z)` for a standard normal vector in `R^d`, that is
/// `Q(d/2, z²/2)`, evaluated in closed form.
pub fn gaussian_tail(d: usize, z: f64) -> Result<f64> {
    require(d >= 1, "d", "d >= 1", d as f64)?;
    require(z >= 0.0, "z", "z >= 0", z)?;
    let x = 0.5 * z * z;
    // Q(m + s, x) = Q(s, x) + e^{-x} sum_{k<m} x^{s+k} / Γ(s+k+1), s ∈ {0, 1/2}
    let (start, mut term, mut total) = if d.is_multiple_of(2) {
        (1.0, (-x).exp(), 0.0)
    } else {
        (1.5, (-x).exp() * x.sqrt() / gamma(1.5), erfc(z / std::f64::consts::SQRT_2))
    };
    let terms = if d.is_multiple_of(2) { d / 2 } else { (d - 1) / 2 };
    let mut a = start;
    for _ in 0..terms {
        total += term;
        term *= x / a;
        a += 1.0;
    }
    Ok(total.min(1.0))
}

/// `2^{1−d/2} / Γ(d/2)`, the limit of `P(|N| ≥ z) / (e^{−z²/2} z^{d−2})`.
pub fn tail_ratio_limit(d: usize) -> f64 {
    2f64.powf(1.0 - 0.5 * d as f64) / gamma(0.5 * d as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailBoundReport {
    pub d: usize,
    /// `(z, P(|N| ≥ z) / (e^{−z²/2} z^{d−2}))` over the grid.
    pub ratios: Vec<(f64, f64)>,
    /// Supremum of the ratios over the grid.
    pub constant: f64,
    pub limit: f64,
    pub finite: bool,
    /// Ratio at the largest `z` within 5% of the limit; `None` when that `z` is below 8.
    pub near_limit: Option<bool>,
    /// `|ratio − limit|` does not increase along the grid.
    pub monotone_approach: bool,
}

/// Tabulate the ratio of the Gaussian tail to its leading asymptotics.
pub fn gaussian_tail_bound_check(d: usize, z_grid: &[f64]) -> Result<TailBoundReport> {
    let mut grid = z_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    if let Some(&z) = grid.iter().find(|&&z| !(z > 1.0)) {
        require(false, "z", "z > 1", z)?;
    }
    let limit = tail_ratio_limit(d);
    let ratios: Vec<(f64, f64)> = grid
        .iter()
        .map(|&z| {
            let tail = gaussian_tail(d, z)?;
            // divide in logs: e^{-z^2/2} underflows first
            let log_ratio = tail.ln() + 0.5 * z * z - (d as f64 - 2.0) * z.ln();
            Ok((z, log_ratio.exp()))
        })
        .collect::<Result<_>>()?;
    let constant = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let near_limit = ratios
        .last()
        .filter(|(z, _)| *z >= 8.0)
        .map(|(_, r)| (r - limit).abs() <= 0.05 * limit);
    let monotone_approach = ratios
        .windows(2)
        .all(|w| (w[1].1 - limit).abs() <= (w[0].1 - limit).abs() * (1.0 + 1e-12));
    Ok(TailBoundReport {
        d,
        finite: constant.is_finite(),
        ratios,
        constant,
        limit,
        near_limit,
        monotone_approach,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxRadiusReport {
    pub d: usize,
    pub t: f64,
    pub a: f64,
    /// Estimate of `P(max_{s≤t} |B_s| ≥ a)`.
    pub prob: f64,
    pub stderr: f64,
    /// `2^d P(|N| ≥ a/√t)`.
    pub bound: f64,
    pub bound_holds: bool,
    /// In one dimension: estimate of `P(max_{s≤t} B_s ≥ a)` with its standard
    /// error and the reflection value `2 P(B_t ≥ a)`.
    pub one_sided: Option<(f64, f64, f64)>,
    pub reflection_holds: Option<bool>,
}

/// Probability that a bridge between two points inside a half-space
/// `{y < level}` touches it.
fn bridge_crossing(level: f64, a: f64, b: f64, tau: f64) -> f64 {
    if a >= level || b >= level {
        1.0
    } else {
        (-2.0 * (level - a) * (level - b) / tau).exp()
    }
}

/// Monte Carlo `P(max_{s≤t} |B_s| ≥ a)` against its Gaussian bound.
///
/// Paths are sampled on `n_steps` steps; between grid points the crossing
/// probability of the Brownian bridge is accumulated instead of sampled. In
/// one dimension the two sides are treated as independent half-lines, in
/// higher dimensions the sphere is replaced by its tangent plane in the
/// direction of the segment's midpoint. Both approximations vanish as the
/// step shrinks.
pub fn max_radius_bound_check(
    d: usize,
    t: f64,
    a: f64,
    n_paths: u64,
    n_steps: usize,
    seed: u64,
) -> Result<MaxRadiusReport> {
    require(d >= 1, "d", "d >= 1", d as f64)?;
    require(t > 0.0, "t", "t > 0", t)?;
    require(a / t.sqrt() > 1.0, "a / sqrt(t)", "> 1", a / t.sqrt())?;
    require(n_paths >= 2, "n_paths", ">= 2", n_paths as f64)?;
    require(n_steps >= 1, "n_steps", ">= 1", n_steps as f64)?;
    let dt = t / n_steps as f64;
    let samples: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let mut x = vec![0.0; d];
            let mut next = vec![0.0; d];
            // probabilities of never touching
            let (mut stay, mut stay_right) = (1.0, 1.0);
            for _ in 0..n_steps {
                for (n, c) in next.iter_mut().zip(&x) {
                    *n = c + dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
                let right = bridge_crossing(a, x[0], next[0], dt);
                stay_right *= 1.0 - right;
                if d == 1 {
                    let left = bridge_crossing(a, -x[0], -next[0], dt);
                    stay *= (1.0 - right) * (1.0 - left);
                } else {
                    let mid: Vec<f64> = x.iter().zip(&next).map(|(p, q)| p + q).collect();
                    let len = norm(&mid);
                    let (pa, pb) = if len == 0.0 {
                        (norm(&x), norm(&next))
                    } else {
                        (dot(&x, &mid) / len, dot(&next, &mid) / len)
                    };
                    let radial = if norm(&x) >= a || norm(&next) >= a {
                        1.0
                    } else {
                        bridge_crossing(a, pa, pb, dt)
                    };
                    stay *= 1.0 - radial;
                }
                std::mem::swap(&mut x, &mut next);
            }
            (1.0 - stay, 1.0 - stay_right)
        })
        .collect();
    let n = n_paths as f64;
    let mean_se = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let mean = samples.iter().map(f).sum::<f64>() / n;
        let var = samples.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (prob, stderr) = mean_se(&|s| s.0);
    let bound = 2f64.powi(d as i32) * gaussian_tail(d, a / t.sqrt())?;
    let (one_sided, reflection_holds) = if d == 1 {
        let (p, se) = mean_se(&|s| s.1);
        let exact = erfc(a / (2.0 * t).sqrt());
        (Some((p, se, exact)), Some((p - exact).abs() <= 3.0 * se))
    } else {
        (None, None)
    };
    Ok(MaxRadiusReport {
        d,
        t,
        a,
        prob,
        stderr,
        bound,
        bound_holds: prob <= bound + 3.0 * stderr,
        one_sided,
        reflection_holds,
    })
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| p * q).sum()
}

/// CSV: `rho, method, t, log_prob, stderr, fitted_rate, theory_rate, relative_error`,
/// one row per entry. Each estimate is paired with its theoretical rate.
pub fn write_deviations(path: &Path, estimates: &[(DeviationEstimate, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rho",
        "method",
        "t",
        "log_prob",
        "stderr",
        "fitted_rate",
        "theory_rate",
        "relative_error",
    ])?;
    let opt = |x: Option<f64>| x.map(crate::fmt_f64).unwrap_or_default();
    for (e, theory) in estimates {
        let relative = e.fitted_rate.map(|r| ((r - theory) / theory).abs());
        for entry in &e.entries {
            w.write_record([
                crate::fmt_f64(e.rho),
                e.method.tag().to_string(),
                crate::fmt_f64(entry.t),
                crate::fmt_f64(entry.log_prob),
                crate::fmt_f64(entry.stderr_log),
                opt(e.fitted_rate),
                crate::fmt_f64(*theory),
                opt(relative),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
