//! Invariant token distributions for pure and mixed threshold protocols.

use token_lab::design::efficiency;
use token_lab::population::{invariant_distribution, PopulationStrategy, Protocol};

fn main() -> token_lab::Result<()> {
    let rho = 0.5;
    for (alpha, k) in [(2.0, 4), (1.0, 4), (0.6, 2)] {
        let steady = invariant_distribution(&Protocol::pure(alpha, k)?, rho)?;
        println!(
            "alpha = {alpha}, K = {k}: mu = {:.6}, nu = {:.6}, efficiency = {:.6}",
            steady.mu(),
            steady.nu(),
            efficiency(&steady)
        );
        print!("{}", steady.to_csv());
    }

    let mix = PopulationStrategy::mixed(2, 0.4)?;
    let steady = invariant_distribution(&Protocol::new(1.5, mix)?, rho)?;
    println!("mixed {{2: 0.6, 3: 0.4}} at alpha = 1.5:");
    println!(
        "{}",
        serde_json::to_string_pretty(&steady.sidecar_json()).expect("json")
    );
    Ok(())
}
