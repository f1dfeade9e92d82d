use proptest::prelude::*;

use token_lab::equilibrium::{beta_interval, lower_condition, upper_condition};
use token_lab::population::{
    invariant_distribution, one_step_update, PopulationParams, PopulationStrategy, Protocol,
    SteadyState,
};
use token_lab::sim::{run_simulation, SimConfig};
use token_lab::values::{
    recommended_sweeps, solve_marginals, solve_values, value_iteration_oracle, MarginalProfile,
};

fn steady(alpha: f64, k: u32) -> SteadyState {
    invariant_distribution(&Protocol::pure(alpha, k).unwrap(), 0.5).unwrap()
}

/// `(K, alpha, rho, beta, r)` with `alpha` strictly inside `(0, K)`.
fn instance(max_k: u32) -> impl Strategy<Value = (u32, f64, f64, f64, f64)> {
    (
        1..=max_k,
        0.05f64..0.95,
        0.05f64..=0.5,
        0.3f64..0.995,
        1.05f64..10.0,
    )
        .prop_map(|(k, u, rho, beta, r)| (k, u * f64::from(k), rho, beta, r))
}

fn profile(k: u32, alpha: f64, rho: f64, beta: f64, r: f64) -> MarginalProfile {
    let params = PopulationParams::with_ratio(rho, beta, r).unwrap();
    solve_marginals(k, &params, &steady(alpha, k)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn marginals_positive((k, alpha, rho, beta, r) in instance(50)) {
        let m = profile(k, alpha, rho, beta, r);
        for (i, v) in m.marginals.iter().enumerate() {
            prop_assert!(*v > 0.0, "M({i}) = {v}");
        }
    }

    #[test]
    fn marginals_have_no_interior_maximum((k, alpha, rho, beta, r) in instance(50)) {
        let m = profile(k, alpha, rho, beta, r).marginals;
        let below = &m[..k as usize];
        for w in below.windows(3) {
            let scale = w[1].abs().max(1e-300);
            prop_assert!(
                !(w[1] - w[0] > 1e-12 * scale && w[1] - w[2] > 1e-12 * scale),
                "interior local maximum in {below:?}"
            );
        }
    }

    #[test]
    fn marginals_increase_with_patience(
        (k, alpha, rho, beta, r) in instance(50),
        gap in 0.001f64..0.2,
    ) {
        let beta2 = (beta + gap).min(0.999);
        prop_assume!(beta2 > beta);
        let low = profile(k, alpha, rho, beta, r).marginals;
        let high = profile(k, alpha, rho, beta2, r).marginals;
        for i in 0..k as usize {
            prop_assert!(low[i] < high[i], "M({i}): {} !< {}", low[i], high[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, max_global_rejects: 50_000, ..ProptestConfig::default() })]

    #[test]
    fn marginals_decrease_when_serving_is_optimal(
        (k, alpha, rho, _beta, r) in instance(20),
        u in 1e-6f64..1.0,
    ) {
        let protocol = Protocol::pure(alpha, k).unwrap();
        let lo = beta_interval(&protocol, rho, r).unwrap().lo;
        prop_assume!(lo < 0.99);
        let beta = lo + u * (0.999 - lo);
        let params = PopulationParams::with_ratio(rho, beta, r).unwrap();
        let m = solve_marginals(k, &params, &steady(alpha, k)).unwrap().marginals;
        let kk = k as usize;
        prop_assume!(m[kk - 1] >= params.c() / beta);
        for i in 0..kk.saturating_sub(1) {
            let slack = 1e-12 * m[i].abs();
            if i + 2 < kk {
                prop_assert!(m[i] > m[i + 1] - slack, "M({i}) <= M({})", i + 1);
            } else {
                prop_assert!(m[i] >= m[i + 1] - slack);
            }
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn direct_and_iterative_values_agree((k, alpha, rho, beta, r) in instance(30)) {
        let params = PopulationParams::with_ratio(rho, beta, r).unwrap();
        let s = steady(alpha, k);
        let direct = solve_values(k, &params, &s).unwrap();
        let iter = value_iteration_oracle(k, &params, &s, recommended_sweeps(&params, 1e-11));
        let gap = direct.values.iter().zip(&iter.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-8, "gap {gap}");
        let tri = solve_marginals(k, &params, &s).unwrap();
        for (a, b) in tri.marginals.iter().zip(&direct.marginals) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn marginals_are_linear_in_payoffs(
        (k, alpha, rho, beta, _r) in instance(30),
        b in 1.1f64..20.0,
        c in 0.1f64..1.0,
    ) {
        let s = steady(alpha, k);
        let solve = |b: f64, c: f64| {
            let p = PopulationParams::new_unchecked(rho, beta, b, c);
            solve_marginals(k, &p, &s).unwrap().marginals
        };
        let (full, ben, cost) = (solve(b, c), solve(1.0, 0.0), solve(0.0, 1.0));
        for i in 0..full.len() {
            let combo = b * ben[i] + c * cost[i];
            prop_assert!((full[i] - combo).abs() < 1e-12 * (1.0 + full[i].abs()));
        }
    }

    #[test]
    fn aggregate_identity((k, alpha, rho, beta, r) in instance(30)) {
        prop_assume!(k >= 2);
        let params = PopulationParams::with_ratio(rho, beta, r).unwrap();
        let s = steady(alpha, k);
        let (mu, nu) = (s.mu(), s.nu());
        let m = solve_marginals(k, &params, &s).unwrap().marginals;
        let kk = k as usize;
        let lhs = (1.0 - nu) * rho * params.b() + (1.0 - mu) * rho * params.c();
        let middle: f64 = m[1..kk - 1].iter().sum();
        let rhs = (1.0 - beta + (1.0 - mu) * rho * beta) * m[0]
            + (1.0 - beta) * middle
            + (1.0 - beta + (1.0 - nu) * rho * beta) * m[kk - 1];
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn interval_conditions_increase_in_beta((k, alpha, rho, _beta, r) in instance(20)) {
        let s = steady(alpha, k);
        let grid: Vec<f64> = (1..40).map(|i| f64::from(i) / 40.0).collect();
        for w in grid.windows(2) {
            let f = |b| lower_condition(k, rho, r, s.mu(), s.nu(), b);
            let g = |b| upper_condition(k, rho, r, s.mu(), s.nu(), b);
            prop_assert!(f(w[0]) < f(w[1]));
            prop_assert!(g(w[0]) < g(w[1]));
        }
    }

    #[test]
    fn steady_state_invariants(k in 1u32..=40, u in 0.01f64..0.99, rho in 0.05f64..=0.5) {
        let alpha = u * f64::from(k);
        let protocol = Protocol::pure(alpha, k).unwrap();
        let s = invariant_distribution(&protocol, rho).unwrap();
        let eta = s.eta();
        prop_assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean: f64 = eta.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        prop_assert!((mean - alpha).abs() < 1e-9 * (1.0 + alpha));
        let (mu, nu) = (s.mu(), s.nu());
        let kf = f64::from(k);
        prop_assert!((mu * (1.0 - mu).powf(kf) - nu * (1.0 - nu).powf(kf)).abs() < 1e-10);
        let next = one_step_update(eta, s.strategy(), rho);
        for i in 0..next.len().max(eta.len()) {
            let d = next.get(i).unwrap_or(&0.0) - eta.get(i).unwrap_or(&0.0);
            prop_assert!(d.abs() < 1e-10);
        }
        let other = invariant_distribution(&protocol, 0.5).unwrap();
        prop_assert_eq!(s.eta(), other.eta());
    }

    #[test]
    fn update_conserves_mean(
        weights in prop::collection::vec(0.0f64..1.0, 2..12),
        rho in 0.05f64..=0.5,
        w in 0.0f64..1.0,
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 1e-6);
        let eta: Vec<f64> = weights.iter().map(|x| x / total).collect();
        let k = eta.len() as u32 - 1;
        let strategy = PopulationStrategy::mixed(k.max(1), w).unwrap();
        let next = one_step_update(&eta, &strategy, rho);
        let mean = |e: &[f64]| e.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>();
        prop_assert!((mean(&eta) - mean(&next)).abs() < 1e-12);
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn repeated_updates_converge(k in 1u32..=8, u in 0.1f64..0.9, start in 0usize..8) {
        let alpha = u * f64::from(k);
        let protocol = Protocol::pure(alpha, k).unwrap();
        let target = invariant_distribution(&protocol, 0.5).unwrap();
        // two-point start with the right mean, inside 0..=K
        let lo = (start as u32).min(k.saturating_sub(1)) as f64;
        let (lo, hi) = if alpha >= lo { (lo, f64::from(k)) } else { (0.0, f64::from(k)) };
        let p_hi = (alpha - lo) / (hi - lo);
        let mut eta = vec![0.0; k as usize + 1];
        eta[lo as usize] += 1.0 - p_hi;
        eta[hi as usize] += p_hi;
        for _ in 0..20_000 {
            eta = one_step_update(&eta, protocol.strategy(), 0.5);
        }
        for (i, p) in target.eta().iter().enumerate() {
            prop_assert!((eta[i] - p).abs() < 1e-6, "eta[{i}] = {} vs {p}", eta[i]);
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), k in 1u32..=5, n in 2usize..300) {
        let protocol = Protocol::half_threshold(k).unwrap();
        let config = SimConfig::new(&protocol, 0.5, n, 50, seed);
        let a = run_simulation(&config).unwrap();
        let b = run_simulation(&config).unwrap();
        prop_assert!(a.token_conservation_check);
        prop_assert_eq!(a, b);
    }
}
