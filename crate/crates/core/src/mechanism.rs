//! Branching mechanisms of the form `psi(u) = -beta u + alpha u^2 + eta u^(1+theta)`.
//!
//! The `eta` term is the closed form of the jump integral for the stable
//! Lévy measure `n(dy) ∝ y^(-2-theta) dy`; every member of the family
//! satisfies the `y (log y)^(2+gamma)` moment condition for every `gamma`.

use crate::error::{require, Error, Result};

/// Relative tolerance used by the bisection root finders.
const ROOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingMechanism {
    pub beta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub theta: f64,
}

impl BranchingMechanism {
    pub fn new(beta: f64, alpha: f64, eta: f64, theta: f64) -> Result<Self> {
        let mech = Self {
            beta,
            alpha,
            eta,
            theta,
        };
        mech.validate()?;
        Ok(mech)
    }

    /// Pure quadratic mechanism `-beta u + alpha u^2`.
    pub fn quadratic(beta: f64, alpha: f64) -> Result<Self> {
        Self::new(beta, alpha, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.beta.is_finite(), "beta", "finite", self.beta)?;
        require(
            self.alpha.is_finite() && self.alpha >= 0.0,
            "alpha",
            "alpha >= 0",
            self.alpha,
        )?;
        require(
            self.eta.is_finite() && self.eta >= 0.0,
            "eta",
            "eta >= 0",
            self.eta,
        )?;
        if self.eta > 0.0 {
            require(
                self.theta > 0.0 && self.theta <= 1.0,
                "theta",
                "0 < theta <= 1 when eta > 0",
                self.theta,
            )?;
        }
        Ok(())
    }

    pub fn is_supercritical(&self) -> bool {
        self.beta > 0.0 && (self.alpha > 0.0 || self.eta > 0.0)
    }

    pub fn is_quadratic(&self) -> bool {
        self.eta == 0.0
    }

    /// The mechanism without its stable part. Dominated by `self` pointwise.
    pub fn quadratic_part(&self) -> Self {
        Self {
            eta: 0.0,
            theta: 1.0,
            ..*self
        }
    }

    /// Evaluates `psi` without the domain check; callers guarantee `u >= 0`.
    #[inline]
    pub(crate) fn psi_unchecked(&self, u: f64) -> f64 {
        let mut value = -self.beta * u + self.alpha * u * u;
        if self.eta > 0.0 {
            value += self.eta * u.powf(1.0 + self.theta);
        }
        value
    }

    /// `k(v) = psi(v) / v` with `k(0) = -beta`.
    #[inline]
    pub(crate) fn k_unchecked(&self, v: f64) -> f64 {
        let mut value = -self.beta + self.alpha * v;
        if self.eta > 0.0 && v > 0.0 {
            value += self.eta * v.powf(self.theta);
        }
        value
    }

    /// `(psi(v + z) − psi(v)) / z`, or `psi'(v)` at `z = 0`; `v, z >= 0`.
    #[inline]
    pub(crate) fn difference_quotient(&self, v: f64, z: f64) -> f64 {
        let mut value = -self.beta + self.alpha * (2.0 * v + z);
        if self.eta > 0.0 {
            let p = 1.0 + self.theta;
            value += if z > 1e-6 * v && z > 0.0 {
                self.eta * ((v + z).powf(p) - v.powf(p)) / z
            } else {
                self.eta * p * (v + 0.5 * z).powf(self.theta)
            };
        }
        value
    }

    pub fn psi(&self, u: f64) -> Result<f64> {
        require(u >= 0.0, "u", "u >= 0", u)?;
        Ok(self.psi_unchecked(u))
    }

    pub fn k(&self, v: f64) -> Result<f64> {
        require(v >= 0.0, "v", "v >= 0", v)?;
        Ok(self.k_unchecked(v))
    }

    /// Largest root of `psi(u) = 0`; the extinction probability from unit
    /// mass is `exp(-lambda_star)`.
    pub fn lambda_star(&self) -> Result<f64> {
        self.validate()?;
        if !self.is_supercritical() {
            return Err(Error::Config(format!(
                "mechanism {self:?} is not supercritical: psi has no positive root"
            )));
        }
        if self.eta == 0.0 {
            return Ok(self.beta / self.alpha);
        }
        Ok(self.largest_root_of(0.0))
    }

    pub fn survival_probability(&self) -> Result<f64> {
        Ok(-(-self.lambda_star()?).exp_m1())
    }

    /// Largest `u >= 0` with `psi(u) = level`, `level >= 0`. This is the
    /// spatially constant equilibrium under a constant source `level`.
    pub fn equilibrium_for_source(&self, level: f64) -> Result<f64> {
        require(level >= 0.0, "source level", ">= 0", level)?;
        if !(self.alpha > 0.0 || self.eta > 0.0) {
            return Err(Error::Config(
                "equilibrium needs a superlinear mechanism (alpha > 0 or eta > 0)".into(),
            ));
        }
        if level == 0.0 && self.beta <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.largest_root_of(level))
    }

    fn largest_root_of(&self, level: f64) -> f64 {
        let mut hi = 1.0_f64;
        while self.psi_unchecked(hi) <= level {
            hi *= 2.0;
        }
        // psi - level is negative on (0, root) and positive beyond it.
        let mut lo = 0.0;
        while hi - lo > ROOT_RTOL * hi {
            let mid = 0.5 * (lo + hi);
            if self.psi_unchecked(mid) <= level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `min_{u >= 0} psi(u)`. Zero when `beta <= 0`, `-inf` when psi is linear
    /// with negative slope.
    pub fn min_psi(&self) -> f64 {
        if self.beta <= 0.0 {
            return 0.0;
        }
        if !(self.alpha > 0.0 || self.eta > 0.0) {
            return f64::NEG_INFINITY;
        }
        if self.eta == 0.0 {
            return -self.beta * self.beta / (4.0 * self.alpha);
        }
        // Convex with minimiser in (0, lambda*): golden-section search.
        let invphi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.0, self.largest_root_of(0.0));
        let mut c = b - invphi * (b - a);
        let mut d = a + invphi * (b - a);
        while (b - a) > 1e-14 * b.max(1e-300) {
            if self.psi_unchecked(c) < self.psi_unchecked(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - invphi * (b - a);
            d = a + invphi * (b - a);
        }
        self.psi_unchecked(0.5 * (a + b))
    }

    pub fn check_assumptions(&self, gamma: f64) -> AssumptionReport {
        let log_moment_justification = if self.eta == 0.0 {
            "n = 0: the moment integral vanishes".to_string()
        } else {
            format!(
                "n(dy) ∝ y^(-2-{theta}) dy: y (log y)^(2+{gamma}) y^(-2-{theta}) is integrable on [1, ∞) since {theta} > 0",
                theta = self.theta,
            )
        };
        AssumptionReport {
            supercritical: self.beta > 0.0,
            alpha_positive: self.alpha > 0.0,
            log_moment_ok: self.validate().is_ok() && gamma > 0.0,
            log_moment_justification,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub supercritical: bool,
    /// A positive Gaussian coefficient; the upper rate bound relies on it.
    pub alpha_positive: bool,
    pub log_moment_ok: bool,
    pub log_moment_justification: String,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.supercritical && self.alpha_positive && self.log_moment_ok
    }
}
