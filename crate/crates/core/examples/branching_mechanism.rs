//! Inspect a branching mechanism: its root, survival probability and the
//! standing assumptions of the range estimates.

use sbm_range::BranchingMechanism;

fn main() -> sbm_range::Result<()> {
    for mech in [
        BranchingMechanism::quadratic(1.0, 1.0)?,
        BranchingMechanism::new(1.0, 0.5, 0.5, 0.5)?,
    ] {
        let lambda = mech.lambda_star()?;
        println!("{mech:?}");
        println!("  lambda* = {lambda:.12}, psi(lambda*) = {:.1e}", mech.psi(lambda)?);
        println!("  survival probability = {:.6}", mech.survival_probability()?);
        println!("  min psi = {:.6}", mech.min_psi());
        let report = mech.check_assumptions(0.5);
        println!("  assumptions hold: {} ({})", report.all_ok(), report.log_moment_justification);
    }
    Ok(())
}
