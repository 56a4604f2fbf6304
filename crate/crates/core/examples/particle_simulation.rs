//! Branching Brownian particles with mass 1/N as an approximation of the
//! superprocess: running range radius, rightmost point and a direct estimate
//! of a range probability.

use sbm_range::particles::{estimate_range_prob_direct, Engine, ParticleSystem};
use sbm_range::BranchingMechanism;

fn main() -> sbm_range::Result<()> {
    let mech = BranchingMechanism::quadratic(1.0, 1.0)?;
    let system = ParticleSystem::new(mech, 1, 500, Engine::Stepped { dt: 0.05 })?;

    for record in system.simulate_many(2.0, &[0.5, 1.0, 2.0], 7, 5)? {
        println!(
            "replicate {}: R = {:?}, H = {:?}, final mass {:.3}",
            record.replicate, record.range_radius, record.rightmost, record.final_mass
        );
    }

    let estimate = estimate_range_prob_direct(&system, 1.0, 1.5, 2000, 11)?;
    println!(
        "P(R_1 >= 1.5) ~ {:.4} ± {:.4} ({} hits in {} runs)",
        estimate.prob, estimate.stderr, estimate.hits, estimate.runs
    );
    Ok(())
}
