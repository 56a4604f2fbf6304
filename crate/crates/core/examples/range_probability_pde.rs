//! Range probabilities from the radial blow-up PDE.
//!
//! `P(R_t >= rho t)` for a speed above `sqrt(2 beta)`, and the lower
//! deviation `P(R_t <= rho t)` with and without conditioning on survival.

use sbm_range::pde::{lower_deviation, range_log_prob, upper_deviation_prob, RangeSolverOptions};
use sbm_range::BranchingMechanism;

fn main() -> sbm_range::Result<()> {
    let mech = BranchingMechanism::quadratic(1.0, 1.0)?;
    let opts = RangeSolverOptions {
        nodes: 200,
        ..Default::default()
    };

    let sweep = range_log_prob(mech, 1, 2.0, 3.0, &opts)?;
    println!("blow-up sweep for t = 2, M = 3:");
    for row in &sweep.rows {
        println!("  wall value {:>9.3e}  v(t, 0) = {:.8}  converged: {}", row.surrogate, row.v_origin, row.converged);
    }

    for rho in [1.5, 2.0] {
        let p = upper_deviation_prob(mech, 1, 2.0, rho, &opts)?;
        println!("P(R_2 >= {rho} * 2) = {p:.6}");
    }

    let lower = lower_deviation(mech, 1, 6.0, 0.7, &opts)?;
    println!(
        "P(R_6 <= 4.2) = {:.6}, with survival {:.3e}, given survival {:.3e}",
        lower.unconditional, lower.joint_survival, lower.conditional
    );
    Ok(())
}
