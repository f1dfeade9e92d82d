//! Marginal utilities and values of a threshold strategy, cross-checked
//! against plain value iteration.

use token_lab::population::{invariant_distribution, PopulationParams, Protocol};
use token_lab::values::{
    recommended_sweeps, solve_marginals, solve_values, value_iteration_oracle,
};

fn main() -> token_lab::Result<()> {
    let params = PopulationParams::with_ratio(0.5, 0.95, 2.0)?;
    let k = 4;
    let steady = invariant_distribution(&Protocol::half_threshold(k)?, params.rho())?;

    let marginals = solve_marginals(k, &params, &steady)?;
    let values = solve_values(k, &params, &steady)?;
    let oracle = value_iteration_oracle(k, &params, &steady, recommended_sweeps(&params, 1e-12));

    let coeffs = marginals.coefficients();
    println!(
        "phi = ({:.6}, {:.6}, {:.6}), decay ratio q = {:.6}",
        coeffs.phi_l,
        coeffs.phi_c,
        coeffs.phi_r,
        coeffs.decay_ratio()
    );
    println!(
        "service threshold c/beta = {:.6}",
        params.c() / params.beta()
    );
    print!("{}", values.to_csv());

    let gap = values
        .values
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mgap = marginals
        .marginals
        .iter()
        .zip(&values.marginals)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max |V - V_iter| = {gap:.2e}, max |M_tridiag - M_direct| = {mgap:.2e}");
    Ok(())
}
