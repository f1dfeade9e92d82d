//! Equilibrium classification and the beta / r intervals of `(K/2, sigma_K)`.

use token_lab::equilibrium::{
    beta_interval, check_equilibrium, interval_interleaving, r_interval, IntervalAxis,
};
use token_lab::population::{PopulationParams, Protocol};

fn main() -> token_lab::Result<()> {
    let (rho, r) = (0.5, 2.0);
    for beta in [0.75, 0.8, 0.85, 0.95] {
        let params = PopulationParams::with_ratio(rho, beta, r)?;
        let class = check_equilibrium(&Protocol::half_threshold(1)?, &params)?;
        println!(
            "K = 1, beta = {beta}: {} (slacks {:+.3e}, {:+.3e})",
            class.tag.as_str(),
            class.slack_low,
            class.slack_high
        );
    }

    let pi1 = Protocol::half_threshold(1)?;
    let b = beta_interval(&pi1, rho, r)?;
    let q = r_interval(&pi1, rho, 0.85)?;
    println!(
        "K = 1: beta in ({:.9}, {:.9}); at beta = 0.85, r in ({:.9}, {:.9})",
        b.lo, b.hi, q.lo, q.hi
    );

    let table = interval_interleaving(8, rho, IntervalAxis::Beta { r })?;
    print!("{}", table.to_csv());
    println!("interleaved: {}", table.is_interleaved());
    Ok(())
}
