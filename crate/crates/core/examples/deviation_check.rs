//! Monte Carlo payoffs of a tagged agent deviating from the recommended
//! threshold, against the analytic steady-state value.

use token_lab::population::{invariant_distribution, PopulationParams, Protocol};
use token_lab::sim::{deviation_payoff_estimate, InitMode, SimConfig};
use token_lab::values::solve_values;

fn main() -> token_lab::Result<()> {
    let params = PopulationParams::with_ratio(0.5, 0.85, 2.0)?;
    let protocol = Protocol::half_threshold(1)?;
    let mut config = SimConfig::new(&protocol, 0.5, 2_000, 0, 42);
    config.burn_in = 500;
    config.init = InitMode::SampleFromInvariant;

    let steady = invariant_distribution(&protocol, 0.5)?;
    let v = solve_values(1, &params, &steady)?;
    let analytic: f64 = steady.eta().iter().zip(&v.values).map(|(p, v)| p * v).sum();
    println!("analytic compliance payoff: {analytic:.5}");

    for k in [0, 1, 2, 3] {
        let est = deviation_payoff_estimate(&config, &params, k, 200, 20_000)?;
        println!("threshold {k}: {:.5} +/- {:.5}", est.mean, est.std_error);
    }
    Ok(())
}
