//! Pure and mixed equilibria at a fixed token supply across discount factors.

use token_lab::equilibrium::{equilibrium_sweep, mixed_equilibrium_weight, sweep_csv};
use token_lab::population::PopulationParams;

fn main() -> token_lab::Result<()> {
    let (alpha, rho, r) = (0.25, 0.5, 2.0);
    let params = PopulationParams::with_ratio(rho, 0.85, r)?;
    println!("{:?}", mixed_equilibrium_weight(alpha, 1, &params)?);

    let betas: Vec<f64> = (0..=10).map(|i| 0.80 + 0.01 * f64::from(i)).collect();
    let rows = equilibrium_sweep(alpha, rho, r, &betas, 4)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
