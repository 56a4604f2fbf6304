//! Sampling primitives shared by the particle engines.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};

use super::dust::{edge_intensity, hitting_profile, hitting_profile_inverse};

/// Dust intensities below this are skipped without drawing.
const NEGLIGIBLE_DUST: f64 = 1e-14;

/// Uniform on `(0, 1]`, safe to take logarithms of.
#[inline]
pub(crate) fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[inline]
pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Maximum of a Brownian bridge from `a` to `b` over a time span `tau`,
/// by inversion of `P(max >= m) = exp(-2 (m - a)(m - b) / tau)`.
#[inline]
pub fn bridge_max(a: f64, b: f64, tau: f64, u: f64) -> f64 {
    if tau <= 0.0 {
        return a.max(b);
    }
    let spread = b - a;
    0.5 * (a + b + (spread * spread - 2.0 * tau * u.ln()).sqrt())
}

/// Running `|x|` and first-coordinate maxima along piecewise Brownian paths.
///
/// Excursions that cannot pass `floor` may be left unsampled, so below
/// `floor` the maxima are lower bounds only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Extremes {
    pub radius: f64,
    pub rightmost: f64,
    pub floor: f64,
}

impl Extremes {
    pub fn origin() -> Self {
        Self {
            radius: 0.0,
            rightmost: 0.0,
            floor: 0.0,
        }
    }

    /// Whether a path started at `x` and confined to a `reach`-neighbourhood
    /// could raise either maximum.
    #[inline]
    pub fn reachable(&self, x: &[f64], reach: f64) -> bool {
        norm(x) + reach >= self.radius.max(self.floor) || x[0] + reach >= self.rightmost.max(self.floor)
    }

    /// Fold in the maxima of a Brownian bridge from `a` to `b` over `tau`.
    ///
    /// In one dimension the upper and lower excursions are drawn from their
    /// exact marginals. In higher dimensions the radial maximum is that of
    /// the bridge projected onto the direction of `a + b`, which is exact up
    /// to the transverse fluctuation.
    pub fn absorb_bridge<R: Rng + ?Sized>(&mut self, rng: &mut R, a: &[f64], b: &[f64], tau: f64) {
        let upper = bridge_max(a[0], b[0], tau, open_uniform(rng));
        self.rightmost = self.rightmost.max(upper);
        let radial = if a.len() == 1 {
            let lower = bridge_max(-a[0], -b[0], tau, open_uniform(rng));
            upper.max(lower)
        } else {
            let mut e: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + q).collect();
            let len = norm(&e);
            if len == 0.0 {
                e.iter_mut().for_each(|c| *c = 0.0);
                e[0] = 1.0;
            } else {
                e.iter_mut().for_each(|c| *c /= len);
            }
            let pa: f64 = a.iter().zip(&e).map(|(p, q)| p * q).sum();
            let pb: f64 = b.iter().zip(&e).map(|(p, q)| p * q).sum();
            bridge_max(pa, pb, tau, open_uniform(rng))
                .max(norm(a))
                .max(norm(b))
                .max(upper)
        };
        self.radius = self.radius.max(radial);
    }

    /// Fold in the extinct clusters shed along an edge from `a` to `b`, where
    /// `tau_a` and `tau_b` are the times left in the step at either end and
    /// `weight` scales the shedding intensity.
    pub fn absorb_edge_dust<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        a: &[f64],
        b: &[f64],
        tau_a: f64,
        tau_b: f64,
        weight: f64,
    ) {
        let edge = |rng: &mut R, level: f64, pa: f64, pb: f64| {
            let closest = level - pa.max(pb);
            if closest > 0.0 {
                let z = closest / tau_a.sqrt();
                if z >= 1.0 && 4.0 * weight * hitting_profile(z) / (z * z) < NEGLIGIBLE_DUST {
                    return None;
                }
            }
            first_passage_level(rng, level, tau_a.sqrt(), |l| {
                weight * edge_intensity(l - pa, l - pb, tau_a, tau_b)
            })
        };
        let (qa, qb) = if a.len() == 1 { (-a[0], -b[0]) } else { (norm(a), norm(b)) };
        if let Some(l) = edge(rng, self.rightmost.max(self.floor), a[0], b[0]) {
            self.rightmost = self.rightmost.max(l);
        }
        if let Some(l) = edge(rng, self.radius.max(self.floor), qa, qb) {
            self.radius = self.radius.max(l);
        }
        self.radius = self.radius.max(self.rightmost);
    }

    /// Fold in the cluster of a particle at `x` that dies out within `tau`.
    /// `weight` is the reciprocal of `mu tau P(extinct within tau)`.
    pub fn absorb_point_dust<R: Rng + ?Sized>(&mut self, rng: &mut R, x: &[f64], tau: f64, weight: f64) {
        let scale = tau.sqrt();
        let point = |rng: &mut R, level: f64, p: f64| {
            let z = (level - p).max(0.0) / scale;
            if weight * hitting_profile(z) < NEGLIGIBLE_DUST {
                return None;
            }
            let e = -open_uniform(rng).ln();
            (weight * hitting_profile(z) > e).then(|| p + scale * hitting_profile_inverse(e / weight))
        };
        let q = if x.len() == 1 { -x[0] } else { norm(x) };
        if let Some(l) = point(rng, self.rightmost.max(self.floor), x[0]) {
            self.rightmost = self.rightmost.max(l);
        }
        if let Some(l) = point(rng, self.radius.max(self.floor), q) {
            self.radius = self.radius.max(l);
        }
        self.radius = self.radius.max(self.rightmost);
    }
}

/// Maximum reached by a Poisson family of clusters whose expected number
/// beyond `l` is `kappa(l)` (decreasing), or `None` if it stays below `level`.
fn first_passage_level<R: Rng + ?Sized>(
    rng: &mut R,
    level: f64,
    scale: f64,
    kappa: impl Fn(f64) -> f64,
) -> Option<f64> {
    let k0 = kappa(level);
    if !(k0 > NEGLIGIBLE_DUST) {
        return None;
    }
    let e = -open_uniform(rng).ln();
    if k0 <= e {
        return None;
    }
    let (mut lo, mut step) = (level, scale);
    let mut hi = level + step;
    while kappa(hi) > e {
        lo = hi;
        step *= 2.0;
        hi = level + step;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kappa(mid) > e {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
            break;
        }
    }
    Some(hi)
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Law of a linear birth-death process (birth rate `birth`, death rate
/// `death`, per particle) over a fixed time span, started from one particle.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BirthDeathLaw {
    birth: f64,
    net: f64,
    /// Probability of no descendants at the end of the span.
    pub p0: f64,
    /// Descendant count given survival is geometric: `P(K = k) = (1 - b) b^(k-1)`.
    pub b: f64,
}

impl BirthDeathLaw {
    pub fn new(birth: f64, death: f64, span: f64) -> Self {
        let net = birth - death;
        // g = (e^{r s} - 1) / r, continuous at r = 0
        let g = if net == 0.0 {
            span
        } else {
            (net * span).exp_m1() / net
        };
        Self {
            birth,
            net,
            p0: death * g / (1.0 + birth * g),
            b: birth * g / (1.0 + birth * g),
        }
    }

    pub fn net(&self) -> f64 {
        self.net
    }

    pub fn survivors<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> u64 {
        if n == 0 || self.p0 == 0.0 {
            return n;
        }
        Binomial::new(n, 1.0 - self.p0)
            .expect("valid binomial parameters")
            .sample(rng)
    }

    /// Descendant count of one particle that survives the span.
    pub fn offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.b == 0.0 {
            return 1;
        }
        1 + (open_uniform(rng).ln() / self.b.ln()).floor() as u64
    }

    /// Total descendants at the end of the span of `n` independent particles.
    pub fn total_offspring<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> u64 {
        let survivors = self.survivors(rng, n);
        if survivors == 0 || self.b == 0.0 {
            return survivors;
        }
        // sum of geometrics = survivors + NegBin(survivors, 1 - b), via Gamma-Poisson
        let scale = self.b / (1.0 - self.b);
        let rate = Gamma::new(survivors as f64, scale)
            .expect("valid gamma parameters")
            .sample(rng);
        if rate <= 0.0 {
            return survivors;
        }
        let extra: f64 = Poisson::new(rate).expect("valid poisson mean").sample(rng);
        survivors + extra as u64
    }

    /// Maximum of `m` independent node depths of the reconstructed tree over
    /// the span. A single depth `H` has `P(H > s | H < span) ∝ 1/W(s) - 1/W(span)`
    /// with `W(s) = 1 + birth (e^{r s} - 1) / r`.
    pub fn max_depth<R: Rng + ?Sized>(&self, rng: &mut R, m: u64) -> f64 {
        let u = if m == 1 {
            rng.random::<f64>()
        } else {
            rng.random::<f64>().powf(1.0 / m as f64)
        };
        let ub = u * self.b;
        let w_minus_one = ub / (1.0 - ub);
        if self.net == 0.0 {
            w_minus_one / self.birth
        } else {
            (self.net * w_minus_one / self.birth).ln_1p() / self.net
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bridge_max_tail_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, tau, level) = (0.2, -0.4, 1.5, 1.0);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| bridge_max(a, b, tau, open_uniform(&mut rng)) >= level)
            .count();
        let p = (-2.0 * (level - a) * (level - b) / tau).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn birth_death_law_limits() {
        let law = BirthDeathLaw::new(0.0, 0.0, 1.0);
        assert_eq!((law.p0, law.b), (0.0, 0.0));
        // pure death: survival e^{-mu s}
        let law = BirthDeathLaw::new(0.0, 2.0, 0.5);
        assert!((law.p0 - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        // Yule: geometric with mean e^{lambda s}
        let law = BirthDeathLaw::new(1.5, 0.0, 0.7);
        assert_eq!(law.p0, 0.0);
        assert!((1.0 / (1.0 - law.b) - (1.05f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn total_offspring_has_the_right_mean() {
        let law = BirthDeathLaw::new(21.0, 20.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| law.total_offspring(&mut rng, 30) as f64).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 30.0 * 0.5f64.exp();
        assert!((mean - expected).abs() < 4.0 * (var / n as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn node_depths_lie_inside_the_span() {
        let law = BirthDeathLaw::new(200.0, 199.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1, 2, 50] {
            for _ in 0..1000 {
                let h = law.max_depth(&mut rng, m);
                assert!((0.0..0.05).contains(&h), "{h}");
            }
        }
    }
}
