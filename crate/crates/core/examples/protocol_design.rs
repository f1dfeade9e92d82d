//! Threshold bounds and the bisection design procedure, compared with an
//! exhaustive scan.

use token_lab::design::{
    bisection_design, equilibrium_thresholds, exhaustive_limit, threshold_bounds,
};
use token_lab::population::PopulationParams;

fn main() -> token_lab::Result<()> {
    for beta in [0.85, 0.9, 0.95, 0.99] {
        let params = PopulationParams::with_ratio(0.5, beta, 2.0)?;
        let bounds = threshold_bounds(&params);
        let scan: Vec<u32> = equilibrium_thresholds(&params, exhaustive_limit(&params))?
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        match bisection_design(&params) {
            Ok(d) => println!(
                "beta = {beta}: K in [{:.3}, {:.3}], bisection K* = {} after {} checks (cap {}), efficiency {:.4}; scan {scan:?}",
                bounds.k_low, bounds.k_high, d.k_star, d.iterations, bounds.iteration_cap(), d.efficiency
            ),
            Err(e) => println!("beta = {beta}: {e}; scan {scan:?}"),
        }
    }
    Ok(())
}
