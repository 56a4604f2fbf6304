//! Fit the exponential decay rate of `P(R_t >= 2t)` from PDE solves and
//! compare with `-(rho^2/2 - beta)`.

use sbm_range::deviations::{fit_rate, rate_upper, DeviationEstimate, Route};
use sbm_range::pde::{upper_deviation_prob, RangeSolverOptions};
use sbm_range::BranchingMechanism;

fn main() -> sbm_range::Result<()> {
    let mech = BranchingMechanism::quadratic(1.0, 1.0)?;
    let rho = 2.0;
    let opts = RangeSolverOptions {
        nodes: 200,
        ..Default::default()
    };
    let mut estimate = DeviationEstimate::new(rho, Route::Pde);
    for t in [2.0, 3.0, 4.0, 5.0, 6.0] {
        let p = upper_deviation_prob(mech, 1, t, rho, &opts)?;
        println!("t = {t}: P = {p:.4e}");
        estimate.push(t, p.ln(), 0.0)?;
    }
    let fit = fit_rate(&estimate)?;
    let (a, b) = fit.correction.unwrap();
    println!(
        "fitted rate {:.4} ± {:.4}, log-t coefficient {a:.3}, offset {b:.3}; theory {}",
        fit.fitted_rate.unwrap(),
        fit.fitted_rate_stderr.unwrap(),
        rate_upper(mech.beta, rho)?
    );
    Ok(())
}
