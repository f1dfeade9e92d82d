//! Most efficient robust protocols versus the half-threshold family and a
//! fixed threshold.

use token_lab::design::{
    default_search_limit, efficiency_frontier, fixed_threshold_comparison, fixed_threshold_csv,
    frontier_csv, optimal_protocol_search,
};
use token_lab::population::PopulationParams;

fn main() -> token_lab::Result<()> {
    let params = PopulationParams::with_ratio(0.5, 0.95, 2.0)?;
    let best = optimal_protocol_search(&params, 200, 1, default_search_limit(&params))?;
    println!("{}", serde_json::to_string_pretty(&best).expect("json"));

    let betas: Vec<f64> = (0..=8).map(|i| 0.84 + 0.015 * f64::from(i)).collect();
    print!(
        "{}",
        frontier_csv(&efficiency_frontier(0.5, 2.0, &betas, 100, None)?)
    );
    print!(
        "{}",
        fixed_threshold_csv(&fixed_threshold_comparison(0.5, 2.0, &betas, 3, 100, None)?)
    );
    Ok(())
}
