//! Run a config-driven study the way the `sbm-range` binary does, into a
//! temporary output root, and print its summary.

use sbm_range::cli::{self, ExperimentConfig};

const CONFIG: &str = "
# upper deviation rate on a short horizon
study = rate_upper
rho = 2
t_grid = 2, 3, 4, 5
nodes = 150
tolerance = 0.25
";

fn main() -> sbm_range::Result<()> {
    let config = ExperimentConfig::parse(CONFIG)?;
    print!("{}", cli::seed_report(&config, false));
    let root = std::env::temp_dir().join("sbm-range-example");
    let outcome = cli::run(&config, &root, true)?;
    for row in &outcome.summary {
        println!(
            "{:<12} {:<16} measured {:>9.5} theory {:>9.5}",
            row.quantity, row.configuration, row.measured, row.theory
        );
    }
    println!("artifacts in {}", outcome.dir.display());
    Ok(())
}
