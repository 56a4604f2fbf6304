//! Chi tails of a standard Gaussian vector and the `2^d` bound on the
//! probability that a Brownian motion leaves a ball.

use sbm_range::deviations::{gaussian_tail, gaussian_tail_bound_check, max_radius_bound_check};

fn main() -> sbm_range::Result<()> {
    for d in 1..=3 {
        let report = gaussian_tail_bound_check(d, &[2.0, 4.0, 8.0])?;
        println!("d = {d}: P(|X| >= 3) = {:.6e}, ratios {:?} -> {:.6}", gaussian_tail(d, 3.0)?, report.ratios, report.limit);
    }
    for d in 1..=3 {
        let r = max_radius_bound_check(d, 1.0, 2.0, 20_000, 200, 5)?;
        // in one dimension the bound is nearly tight, so only agreement within 3 SE is expected
        println!(
            "d = {d}: P(max |B_s| >= 2, s <= 1) = {:.5} ± {:.5}, bound {:.5}, holds: {}",
            r.prob, r.stderr, r.bound, r.bound_holds
        );
        if let Some((p, se, exact)) = r.one_sided {
            println!("       one-sided maximum {p:.5} ± {se:.5}, reflection principle {exact:.5}");
        }
    }
    Ok(())
}
