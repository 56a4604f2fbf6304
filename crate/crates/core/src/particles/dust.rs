//! Clusters that are born and die inside one step of the stepped engine.
//!
//! Such clusters are invisible to the reconstructed genealogy, yet they
//! carry mass beyond it. In the large-`N` limit, a cluster started at
//! distance `D` from a half-space and killed off within time `tau` enters
//! the half-space with probability `G(D / sqrt(tau)) / (mu tau)` per unit
//! of particle mass, where `mu = alpha N` is the death rate. `G` is the
//! self-similar profile of the critical hitting problem:
//!
//! ```text
//! G''/2 + (z/2) G' - G - G^2 = 0,    G(0+) = +inf,    G(+inf) = 0,
//! ```
//!
//! with `G(z) ~ 3 / z^2` at the origin and `G(z) ~ C z^-3 exp(-z^2/2)` at
//! infinity. It is obtained once by shooting from the Gaussian tail inwards
//! in the variable `w = G^(-1/2)`, which crosses zero linearly.

use std::sync::OnceLock;

/// Beyond this argument `G` is below 1e-33 and treated as zero.
const Z_MAX: f64 = 12.0;
const STEP: f64 = 1e-3;
const Z_MIN: f64 = 0.02;

struct Profile {
    /// `ln G` on `z_k = Z_MIN + k * STEP`.
    log_g: Vec<f64>,
    /// Matches `3 / z^2` to the tabulated value at `Z_MIN`.
    near_origin: f64,
}

fn profile() -> &'static Profile {
    static PROFILE: OnceLock<Profile> = OnceLock::new();
    PROFILE.get_or_init(build)
}

/// Integrate inwards from `Z_MAX` for tail amplitude `e^log_c`. Returns the
/// zero of `w` and, if requested, the samples of `w` on the `STEP` grid.
fn shoot(log_c: f64, mut record: Option<&mut Vec<(f64, f64)>>) -> f64 {
    let g = log_c.exp() * Z_MAX.powi(-3) * (-0.5 * Z_MAX * Z_MAX).exp();
    let gp = g * (-3.0 / Z_MAX - Z_MAX);
    let (mut w, mut wp) = (g.powf(-0.5), -0.5 * g.powf(-1.5) * gp);
    let f = |z: f64, w: f64, wp: f64| (wp, (3.0 * wp * wp - 1.0 - z * w * wp - w * w) / w);
    let h = -STEP;
    let steps = (Z_MAX / STEP).round() as usize + 1000;
    for k in 0..steps {
        let z = Z_MAX + k as f64 * h;
        if let Some(out) = record.as_deref_mut() {
            out.push((z, w));
        }
        let k1 = f(z, w, wp);
        let k2 = f(z + 0.5 * h, w + 0.5 * h * k1.0, wp + 0.5 * h * k1.1);
        let k3 = f(z + 0.5 * h, w + 0.5 * h * k2.0, wp + 0.5 * h * k2.1);
        let k4 = f(z + h, w + h * k3.0, wp + h * k3.1);
        let next = w + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        if next <= 0.0 {
            return z + h * w / (w - next);
        }
        wp += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        w = next;
    }
    f64::NEG_INFINITY
}

fn build() -> Profile {
    // the zero moves right as the tail amplitude grows
    let (mut lo, mut hi) = (-20.0, 40.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if shoot(mid, None) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut samples = Vec::new();
    shoot(0.5 * (lo + hi), Some(&mut samples));
    let n = ((Z_MAX - Z_MIN) / STEP).round() as usize + 1;
    let mut log_g = vec![0.0; n];
    // samples run from Z_MAX downwards on the same grid
    for (z, w) in samples {
        let k = ((z - Z_MIN) / STEP).round();
        if k >= 0.0 && (k as usize) < n {
            log_g[k as usize] = -2.0 * w.ln();
        }
    }
    let near_origin = log_g[0].exp() * Z_MIN * Z_MIN;
    Profile { log_g, near_origin }
}

/// The profile `G(z)` for `z >= 0`.
pub fn hitting_profile(z: f64) -> f64 {
    let p = profile();
    if z >= Z_MAX {
        return 0.0;
    }
    if z < Z_MIN {
        return p.near_origin / (z * z);
    }
    let x = (z - Z_MIN) / STEP;
    let k = (x.floor() as usize).min(p.log_g.len() - 2);
    let w = x - k as f64;
    (p.log_g[k] * (1.0 - w) + p.log_g[k + 1] * w).exp()
}

/// Smallest `z` with `G(z) <= value`.
pub fn hitting_profile_inverse(value: f64) -> f64 {
    let p = profile();
    let target = value.ln();
    if target >= p.log_g[0] {
        return (p.near_origin / value).sqrt();
    }
    if target <= *p.log_g.last().unwrap() {
        return Z_MAX;
    }
    // log_g is decreasing
    let k = p.log_g.partition_point(|&lg| lg > target);
    let (a, b) = (p.log_g[k - 1], p.log_g[k]);
    Z_MIN + (k as f64 - 1.0 + (a - target) / (a - b)) * STEP
}

const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// `∫ 2 G(D(tau) / sqrt(tau)) / tau dtau` over `[tau_b, tau_a]`, with the
/// distance `D` linear in `tau` between `d_b` and `d_a`. This is the
/// expected number of dead-by-step-end clusters shed along a lineage that
/// enter the half-space.
pub fn edge_intensity(d_a: f64, d_b: f64, tau_a: f64, tau_b: f64) -> f64 {
    if tau_a <= tau_b {
        return 0.0;
    }
    // substitute q = sqrt(tau): integrand 4 G(D / q) / q
    let (qa, qb) = (tau_a.sqrt(), tau_b.sqrt());
    let panels = 2;
    let width = (qa - qb) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = qb + (p as f64 + 0.5) * width;
        for (x, w) in GL_X.iter().zip(GL_W) {
            let q = mid + 0.5 * width * x;
            let tau = q * q;
            let s = (tau - tau_b) / (tau_a - tau_b);
            let d = (d_b + (d_a - d_b) * s).max(0.0);
            total += 0.5 * width * w * 4.0 * hitting_profile(d / q) / q;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_has_the_right_limits() {
        assert!((hitting_profile(0.05) * 0.05 * 0.05 - 3.0).abs() < 0.05);
        assert!(hitting_profile(11.0) < 1e-25);
        let mut previous = f64::INFINITY;
        for k in 1..200 {
            let g = hitting_profile(k as f64 * 0.05);
            assert!(g < previous);
            previous = g;
        }
    }

    #[test]
    fn profile_solves_its_equation() {
        let h = 1e-3;
        for z in [0.3, 1.0, 2.0, 4.0] {
            let (gm, g0, gp) = (hitting_profile(z - h), hitting_profile(z), hitting_profile(z + h));
            let residual = 0.5 * (gp - 2.0 * g0 + gm) / (h * h) + 0.5 * z * (gp - gm) / (2.0 * h) - g0 - g0 * g0;
            assert!(residual.abs() < 1e-3 * (1.0 + g0 * g0), "z = {z}: {residual}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        for z in [0.01, 0.1, 0.7, 2.5, 6.0] {
            let back = hitting_profile_inverse(hitting_profile(z));
            assert!((back - z).abs() < 1e-4 * (1.0 + z), "{z} -> {back}");
        }
    }

    #[test]
    fn edge_intensity_matches_closed_form_for_constant_distance() {
        // D constant, tau in [0, T]: 4 ∫_{D/sqrt(T)}^∞ G(z)/z dz
        let (d, t) = (0.3f64, 0.02f64);
        let z0 = d / t.sqrt();
        let n = 200_000;
        let top = 12.0;
        let dz = (top - z0) / n as f64;
        let exact: f64 = (0..n)
            .map(|k| {
                let z = z0 + (k as f64 + 0.5) * dz;
                4.0 * hitting_profile(z) / z * dz
            })
            .sum();
        let quad = edge_intensity(d, d, t, 0.0);
        assert!((quad - exact).abs() < 0.02 * exact, "{quad} vs {exact}");
    }
}
