//! Values and marginal utilities of threshold strategies.
//!
//! For a fixed steady state `(mu, nu)` the value of following `sigma_K`
//! solves a linear recursion over holdings `0..=K+1`. Differencing it gives
//! a `K x K` tridiagonal system for the marginals `M(k) = V(k+1) - V(k)`:
//!
//! ```text
//! [phi_c phi_r          ] [M(0)  ]   [(1-nu) rho b]
//! [phi_l phi_c phi_r    ] [M(1)  ]   [0           ]
//! [        ...          ] [ ...  ] = [...         ]
//! [          phi_l phi_c] [M(K-1)]   [(1-mu) rho c]
//! ```
//!
//! Above the threshold the marginals decay geometrically:
//! `M(k) = q · M(k-1)` with `q = -phi_l / (phi_c + phi_r)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::linalg::{solve_dense, solve_tridiagonal};
use crate::population::{PopulationParams, SteadyState};

/// Value of the degenerate never-serve protocol (`K = 0`): nobody serves,
/// so no agent ever trades.
pub const NO_TRADE_VALUE: f64 = 0.0;

/// Coefficients of the marginal-utility recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientTriple {
    pub phi_l: f64,
    pub phi_c: f64,
    pub phi_r: f64,
}

impl CoefficientTriple {
    pub fn from_state(rho: f64, beta: f64, mu: f64, nu: f64) -> Self {
        Self {
            phi_l: -(1.0 - nu) * rho * beta,
            phi_c: 1.0 - beta + ((1.0 - nu) + (1.0 - mu)) * rho * beta,
            phi_r: -(1.0 - mu) * rho * beta,
        }
    }

    /// `q = -phi_l / (phi_c + phi_r)`, the decay of marginals above `K`.
    pub fn decay_ratio(&self) -> f64 {
        -self.phi_l / (self.phi_c + self.phi_r)
    }

    /// Sign relations of the three coefficients and their partial sums.
    pub fn satisfies_sign_relations(&self) -> bool {
        let Self {
            phi_l,
            phi_c,
            phi_r,
        } = *self;
        phi_l < 0.0
            && phi_c > 0.0
            && phi_r < 0.0
            && phi_l + phi_c + phi_r > 0.0
            && phi_l + phi_c > 0.0
            && phi_r + phi_c > 0.0
    }
}

/// Recursion coefficients for `params` against `steady`.
pub fn coefficients(params: &PopulationParams, steady: &SteadyState) -> Result<CoefficientTriple> {
    steady.ensure_nondegenerate()?;
    Ok(CoefficientTriple::from_state(
        params.rho(),
        params.beta(),
        steady.mu(),
        steady.nu(),
    ))
}

/// Marginals and/or values of a threshold strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalProfile {
    pub threshold: u32,
    pub params: PopulationParams,
    pub mu: f64,
    pub nu: f64,
    /// `M(0..=K)`.
    pub marginals: Vec<f64>,
    /// `V(0..=K+1)`; empty when only marginals were solved.
    pub values: Vec<f64>,
}

impl MarginalProfile {
    pub fn coefficients(&self) -> CoefficientTriple {
        CoefficientTriple::from_state(self.params.rho(), self.params.beta(), self.mu, self.nu)
    }

    /// `M(k)` for any `k`; beyond the stored range the geometric decay above
    /// the threshold is applied.
    pub fn marginal(&self, k: usize) -> f64 {
        let last = self.marginals.len() - 1;
        if k <= last {
            self.marginals[k]
        } else {
            let q = self.coefficients().decay_ratio();
            self.marginals[last] * q.powi((k - last) as i32)
        }
    }

    /// CSV with header `k,M,V`, one row per holding `0..=K+1`.
    pub fn to_csv(&self) -> String {
        let rows = self.threshold as usize + 2;
        let mut out = String::from("k,M,V\n");
        for k in 0..rows {
            let v = self.values.get(k).map(|v| fmt_num(*v)).unwrap_or_default();
            out.push_str(&format!("{k},{},{v}\n", fmt_num(self.marginal(k))));
        }
        out
    }
}

fn require_threshold(k: u32) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidStrategy(
            "threshold 0 never serves; its value is the constant NO_TRADE_VALUE".into(),
        ))
    } else {
        Ok(())
    }
}

/// `M(0..=K)` for raw `(mu, nu)`, without the provenance record.
pub(crate) fn marginals_raw(k: u32, params: &PopulationParams, mu: f64, nu: f64) -> Vec<f64> {
    let rho = params.rho();
    let phi = CoefficientTriple::from_state(rho, params.beta(), mu, nu);
    let k = k as usize;
    let mut rhs = vec![0.0; k];
    rhs[0] += (1.0 - nu) * rho * params.b();
    rhs[k - 1] += (1.0 - mu) * rho * params.c();
    let mut m = solve_tridiagonal(phi.phi_l, phi.phi_c, phi.phi_r, &rhs);
    m.push(phi.decay_ratio() * m[k - 1]);
    m
}

/// Solves the tridiagonal marginal system for `sigma_K`.
pub fn solve_marginals(
    k: u32,
    params: &PopulationParams,
    steady: &SteadyState,
) -> Result<MarginalProfile> {
    require_threshold(k)?;
    steady.ensure_nondegenerate()?;
    Ok(MarginalProfile {
        threshold: k,
        params: *params,
        mu: steady.mu(),
        nu: steady.nu(),
        marginals: marginals_raw(k, params, steady.mu(), steady.nu()),
        values: Vec::new(),
    })
}

/// Values for an arbitrary service profile: `service[k]` is the serving
/// probability at holding `k`, and holdings at or beyond `service.len()`
/// never serve. Returns `V(0..=service.len())`.
pub fn values_for_service(
    service: &[f64],
    params: &PopulationParams,
    mu: f64,
    nu: f64,
) -> Vec<f64> {
    let (rho, beta, b, c) = (params.rho(), params.beta(), params.b(), params.c());
    let n = service.len() + 1;
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let s = service.get(k).copied().unwrap_or(0.0);
        // probability of keeping the current holding, summed over roles
        let client_stay = if k == 0 { rho } else { rho * nu };
        let stay = client_stay + rho * s * mu + rho * (1.0 - s) + (1.0 - 2.0 * rho);
        a[k][k] = 1.0 - beta * stay;
        if k > 0 {
            a[k][k - 1] = -rho * beta * (1.0 - nu);
            rhs[k] += rho * (1.0 - nu) * b;
        }
        if k + 1 < n {
            a[k][k + 1] = -rho * s * beta * (1.0 - mu);
        }
        rhs[k] -= rho * s * (1.0 - mu) * c;
    }
    solve_dense(a, rhs)
}

fn threshold_service(k: u32) -> Vec<f64> {
    let mut s = vec![1.0; k as usize];
    s.push(0.0);
    s
}

/// Solves the value recursion for `sigma_K` directly over `V(0..=K+1)`.
pub fn solve_values(
    k: u32,
    params: &PopulationParams,
    steady: &SteadyState,
) -> Result<MarginalProfile> {
    require_threshold(k)?;
    steady.ensure_nondegenerate()?;
    let values = values_for_service(&threshold_service(k), params, steady.mu(), steady.nu());
    let marginals = values.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(MarginalProfile {
        threshold: k,
        params: *params,
        mu: steady.mu(),
        nu: steady.nu(),
        marginals,
        values,
    })
}

/// Sweeps needed for the value-iteration error to drop below `tol`
/// (relative to the value bound `b / (1 - beta)`).
pub fn recommended_sweeps(params: &PopulationParams, tol: f64) -> usize {
    let beta = params.beta();
    let bound = params.b() / (1.0 - beta);
    ((tol / bound).ln() / beta.ln()).ceil().max(0.0) as usize + 1
}

/// Fixed-point iteration of the Bellman recursion for `sigma_K`, starting
/// from `V = 0` on holdings `0..=K+1`. Independent of the linear solvers.
pub fn value_iteration_oracle(
    k: u32,
    params: &PopulationParams,
    steady: &SteadyState,
    sweeps: usize,
) -> MarginalProfile {
    let (rho, beta, b, c) = (params.rho(), params.beta(), params.b(), params.c());
    let (mu, nu) = (steady.mu(), steady.nu());
    let n = k as usize + 2;
    let serves = |h: usize| h < k as usize;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..sweeps {
        for h in 0..n {
            let here = v[h];
            let client = if h == 0 {
                rho * beta * here
            } else {
                rho * ((1.0 - nu) * (b + beta * v[h - 1]) + nu * beta * here)
            };
            let server = if serves(h) {
                rho * ((1.0 - mu) * (-c + beta * v[h + 1]) + mu * beta * here)
            } else {
                rho * beta * here
            };
            next[h] = client + server + (1.0 - 2.0 * rho) * beta * here;
        }
        std::mem::swap(&mut v, &mut next);
    }
    let marginals = v.windows(2).map(|w| w[1] - w[0]).collect();
    MarginalProfile {
        threshold: k,
        params: *params,
        mu,
        nu,
        marginals,
        values: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{invariant_distribution, PopulationStrategy, Protocol};

    fn half_state(mu: f64) -> SteadyState {
        // K = 1 with alpha = 1 - mu gives mu = nu only at alpha = 1/2;
        // build arbitrary (mu, nu) pairs through a two-point distribution.
        SteadyState::from_distribution(vec![mu, 1.0 - mu], PopulationStrategy::pure(1))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn coefficient_examples() {
        let t = CoefficientTriple::from_state(0.5, 0.8, 0.5, 0.5);
        assert!(
            close(t.phi_l, -0.2, 1e-15)
                && close(t.phi_c, 0.6, 1e-15)
                && close(t.phi_r, -0.2, 1e-15)
        );
        let t = CoefficientTriple::from_state(0.5, 0.0, 0.5, 0.5);
        assert_eq!((t.phi_l.abs(), t.phi_c, t.phi_r.abs()), (0.0, 1.0, 0.0));
        let t = CoefficientTriple::from_state(0.5, 0.85, 0.5, 0.5);
        assert!(close(t.phi_l, -0.2125, 1e-15) && close(t.phi_c, 0.575, 1e-15));
        assert!(t.satisfies_sign_relations());
    }

    #[test]
    fn degenerate_state_rejected() {
        let params = PopulationParams::with_ratio(0.5, 0.8, 2.0).unwrap();
        let s = SteadyState::from_distribution(vec![1.0], PopulationStrategy::pure(2));
        assert!(matches!(
            coefficients(&params, &s),
            Err(Error::DegenerateState { .. })
        ));
        assert!(solve_marginals(2, &params, &s).is_err());
        assert!(solve_values(2, &params, &s).is_err());
    }

    #[test]
    fn k_one_hand_solution() {
        let params = PopulationParams::new(0.5, 0.8, 2.0, 1.0).unwrap();
        let s = half_state(0.5);
        let m = solve_marginals(1, &params, &s).unwrap();
        assert!(close(m.marginals[0], 1.25, 1e-14));
        assert!(close(m.marginals[1], 0.625, 1e-14));
        let v = solve_values(1, &params, &s).unwrap();
        assert!(close(v.values[0], 0.0, 1e-14) && close(v.values[1], 1.25, 1e-14));
        // indifference at the boundary
        assert!(close(-1.0 + 0.8 * v.values[1], 0.8 * v.values[0], 1e-14));
        // general single-row formula
        let p2 = PopulationParams::new(0.3, 0.7, 3.0, 1.5).unwrap();
        let s2 = half_state(0.35);
        let phi = coefficients(&p2, &s2).unwrap();
        let expected = ((1.0 - s2.nu()) * 0.3 * 3.0 + (1.0 - s2.mu()) * 0.3 * 1.5) / phi.phi_c;
        assert!(close(
            solve_marginals(1, &p2, &s2).unwrap().marginals[0],
            expected,
            1e-14
        ));
    }

    #[test]
    fn threshold_zero_is_constant() {
        let params = PopulationParams::with_ratio(0.5, 0.8, 2.0).unwrap();
        assert!(matches!(
            solve_marginals(0, &params, &half_state(0.5)),
            Err(Error::InvalidStrategy(_))
        ));
        assert_eq!(NO_TRADE_VALUE, 0.0);
    }

    #[test]
    fn zero_cost_rejected_by_params() {
        assert!(PopulationParams::new(0.5, 0.8, 2.0, 0.0).is_err());
    }

    #[test]
    fn oracle_zero_sweeps_and_convergence() {
        let params = PopulationParams::new(0.5, 0.8, 2.0, 1.0).unwrap();
        let s = half_state(0.5);
        let zero = value_iteration_oracle(1, &params, &s, 0);
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let it = value_iteration_oracle(1, &params, &s, recommended_sweeps(&params, 1e-12));
        assert!(close(it.values[0], 0.0, 1e-9) && close(it.values[1], 1.25, 1e-9));
    }

    #[test]
    fn oracle_matches_direct_solve_pi3() {
        let params = PopulationParams::with_ratio(0.5, 0.9, 2.0).unwrap();
        let s = invariant_distribution(&Protocol::half_threshold(3).unwrap(), 0.5).unwrap();
        let direct = solve_values(3, &params, &s).unwrap();
        let it = value_iteration_oracle(3, &params, &s, recommended_sweeps(&params, 1e-12));
        for (a, b) in direct.values.iter().zip(&it.values) {
            assert!(close(*a, *b, 1e-8));
        }
        let m = solve_marginals(3, &params, &s).unwrap();
        for (a, b) in m.marginals.iter().zip(&direct.marginals) {
            assert!(close(*a, *b, 1e-9));
        }
    }

    #[test]
    fn small_beta_one_shot() {
        let params = PopulationParams::new(0.5, 0.1, 2.0, 1.0).unwrap();
        let s = half_state(0.5);
        let v = solve_values(1, &params, &s).unwrap();
        assert!(v.values[1] >= v.values[0]);
        // one token spent on the next successful purchase, discounted
        let it = value_iteration_oracle(1, &params, &s, 40);
        assert!(close(v.values[1], it.values[1], 1e-12));
    }

    #[test]
    fn pi4_marginals_decrease_when_boundary_holds() {
        let s = invariant_distribution(&Protocol::half_threshold(4).unwrap(), 0.5).unwrap();
        // below beta_L(Pi_4) the premise fails
        let params = PopulationParams::with_ratio(0.5, 0.9, 2.0).unwrap();
        let m = solve_marginals(4, &params, &s).unwrap();
        assert!(m.marginals[3] < 1.0 / 0.9);
        let params = PopulationParams::with_ratio(0.5, 0.97, 2.0).unwrap();
        let m = solve_marginals(4, &params, &s).unwrap();
        assert!(m.marginals[3] >= 1.0 / 0.97);
        assert!(m.marginals.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn marginal_extension_decays() {
        let params = PopulationParams::with_ratio(0.5, 0.9, 2.0).unwrap();
        let s = invariant_distribution(&Protocol::half_threshold(2).unwrap(), 0.5).unwrap();
        let m = solve_marginals(2, &params, &s).unwrap();
        let q = m.coefficients().decay_ratio();
        assert!(q > 0.0 && q < 1.0);
        assert!(close(m.marginal(4), m.marginals[2] * q * q, 1e-15));
        let v = solve_values(2, &params, &s).unwrap();
        assert!(close(v.marginals[2], m.marginals[2], 1e-9));
        let csv = v.to_csv();
        assert!(csv.starts_with("k,M,V\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
