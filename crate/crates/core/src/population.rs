//! Protocols, population strategies and the invariant token distribution.
//!
//! A protocol fixes a per-capita token supply and a (possibly mixed)
//! threshold strategy. Under the matching dynamics the token distribution
//! settles on a unique invariant distribution, which is a tilted product
//! of the service profile:
//!
//! ```text
//! eta(k) ∝ y^k · Π_{j<k} sigma(j),   y = (1 - mu) / (1 - nu)
//! ```
//!
//! The tilt `y` is the only free quantity once the detailed-balance
//! relations are imposed; it is pinned down by the mean-holding constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_num;

/// Environment constants shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    rho: f64,
    beta: f64,
    b: f64,
    c: f64,
}

impl PopulationParams {
    /// Validated constructor: `0 < rho <= 1/2`, `0 < beta < 1`, `b > c > 0`.
    pub fn new(rho: f64, beta: f64, b: f64, c: f64) -> Result<Self> {
        validate_rho(rho)?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParams(format!(
                "beta = {beta} must lie in (0, 1)"
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "cost c = {c} must be positive"
            )));
        }
        if !(b > c && b.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "benefit b = {b} must exceed cost c = {c}"
            )));
        }
        Ok(Self { rho, beta, b, c })
    }

    /// Parameters normalized to `c = 1`, `b = r`.
    pub fn with_ratio(rho: f64, beta: f64, r: f64) -> Result<Self> {
        Self::new(rho, beta, r, 1.0)
    }

    /// Skips validation. The marginal solver is linear in `(b, c)`, and
    /// splitting it into unit-benefit and unit-cost parts needs payoff pairs
    /// such as `(1, 0)` that are not valid environments on their own.
    pub fn new_unchecked(rho: f64, beta: f64, b: f64, c: f64) -> Self {
        Self { rho, beta, b, c }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Benefit/cost ratio `r = b / c`.
    pub fn ratio(&self) -> f64 {
        self.b / self.c
    }

    /// Same environment with a different discount factor (unvalidated).
    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    /// Same environment with different payoffs (unvalidated).
    pub fn with_payoffs(self, b: f64, c: f64) -> Self {
        Self { b, c, ..self }
    }
}

pub(crate) fn validate_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "rho = {rho} must lie in (0, 1/2]"
        )))
    }
}

/// Pure threshold strategy: serve iff the current holding is below `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThresholdStrategy(pub u32);

impl ThresholdStrategy {
    pub fn threshold(self) -> u32 {
        self.0
    }

    pub fn serves(self, holding: u64) -> bool {
        holding < u64::from(self.0)
    }
}

/// Population strategy: a distribution over at most two adjacent thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStrategy {
    // ascending thresholds, strictly positive weights
    weights: Vec<(u32, f64)>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl PopulationStrategy {
    pub fn pure(k: u32) -> Self {
        Self {
            weights: vec![(k, 1.0)],
        }
    }

    /// Mix `{k: 1 - w, k + 1: w}`; `w` is the weight on the higher threshold.
    pub fn mixed(k: u32, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidStrategy(format!(
                "mix weight {w} outside [0, 1]"
            )));
        }
        Self::from_weights([(k, 1.0 - w), (k + 1, w)])
    }

    /// Builds a strategy from `(threshold, weight)` pairs. Zero weights are
    /// dropped; the remaining support must have at most two adjacent
    /// thresholds and the weights must sum to one.
    pub fn from_weights<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut weights: Vec<(u32, f64)> = Vec::new();
        let mut total = 0.0;
        for (k, w) in pairs {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidStrategy(format!(
                    "weight {w} on threshold {k} outside [0, 1]"
                )));
            }
            total += w;
            if w == 0.0 {
                continue;
            }
            match weights.iter_mut().find(|(t, _)| *t == k) {
                Some(entry) => entry.1 += w,
                None => weights.push((k, w)),
            }
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidStrategy(format!(
                "weights sum to {total}, not 1"
            )));
        }
        weights.sort_by_key(|&(k, _)| k);
        match weights.as_slice() {
            [] => return Err(Error::InvalidStrategy("empty support".into())),
            [_] => {}
            [(lo, _), (hi, _)] if hi - lo == 1 => {}
            [_, _] => {
                return Err(Error::InvalidStrategy(
                    "support thresholds must be adjacent".into(),
                ))
            }
            _ => {
                return Err(Error::InvalidStrategy(
                    "support must contain at most two thresholds".into(),
                ))
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[(u32, f64)] {
        &self.weights
    }

    pub fn thresholds(&self) -> Vec<u32> {
        self.weights.iter().map(|&(k, _)| k).collect()
    }

    pub fn min_threshold(&self) -> u32 {
        self.weights[0].0
    }

    pub fn max_threshold(&self) -> u32 {
        self.weights[self.weights.len() - 1].0
    }

    /// `Some(k)` when the strategy puts all weight on one threshold.
    pub fn pure_threshold(&self) -> Option<u32> {
        match self.weights.as_slice() {
            [(k, _)] => Some(*k),
            _ => None,
        }
    }

    /// Weight on threshold `k` (zero off the support).
    pub fn weight_of(&self, k: u32) -> f64 {
        self.weights
            .iter()
            .find(|&&(t, _)| t == k)
            .map_or(0.0, |&(_, w)| w)
    }

    /// Fraction of the population that serves at holding `n`.
    pub fn sigma(&self, n: u64) -> f64 {
        self.weights
            .iter()
            .filter(|&&(k, _)| n < u64::from(k))
            .map(|&(_, w)| w)
            .sum()
    }
}

/// Free-function form of [`PopulationStrategy::sigma`].
pub fn sigma_gamma(strategy: &PopulationStrategy, n: u64) -> f64 {
    strategy.sigma(n)
}

/// Token supply plus recommended population strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    alpha: f64,
    strategy: PopulationStrategy,
}

impl Protocol {
    /// Requires `0 < alpha < max support threshold`; otherwise no invariant
    /// distribution with bounded support exists.
    pub fn new(alpha: f64, strategy: PopulationStrategy) -> Result<Self> {
        let max_threshold = strategy.max_threshold();
        if !(alpha > 0.0 && alpha < f64::from(max_threshold)) {
            return Err(Error::InvalidSupply {
                alpha,
                max_threshold,
            });
        }
        Ok(Self { alpha, strategy })
    }

    pub fn pure(alpha: f64, k: u32) -> Result<Self> {
        Self::new(alpha, PopulationStrategy::pure(k))
    }

    /// The protocol `(K/2, sigma_K)`.
    pub fn half_threshold(k: u32) -> Result<Self> {
        Self::pure(f64::from(k) / 2.0, k)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn strategy(&self) -> &PopulationStrategy {
        &self.strategy
    }

    /// Threshold of a pure protocol, or `InvalidStrategy` for a mix.
    pub fn pure_threshold(&self) -> Result<u32> {
        self.strategy.pure_threshold().ok_or_else(|| {
            Error::InvalidStrategy("operation requires a pure threshold protocol".into())
        })
    }
}

/// Token distribution together with the two fractions the agents react to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    alpha: f64,
    strategy: PopulationStrategy,
    eta: Vec<f64>,
    mu: f64,
    nu: f64,
}

impl SteadyState {
    /// Wraps an arbitrary distribution, computing `mu`, `nu` and the mean.
    /// Used for degenerate or off-equilibrium states.
    pub fn from_distribution(eta: Vec<f64>, strategy: PopulationStrategy) -> Self {
        let (mu, nu) = mu_nu(&eta, &strategy);
        let alpha = eta.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        Self {
            alpha,
            strategy,
            eta,
            mu,
            nu,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn strategy(&self) -> &PopulationStrategy {
        &self.strategy
    }

    /// Probability of each holding `0..=Kmax`.
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Fraction of agents holding no tokens.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Fraction of agents that would not serve.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_degenerate(&self) -> bool {
        self.mu >= 1.0 || self.nu >= 1.0
    }

    /// `DegenerateState` when nobody can pay or nobody serves.
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegenerateState {
                mu: self.mu,
                nu: self.nu,
            })
        } else {
            Ok(())
        }
    }

    /// CSV with header `k,eta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,eta\n");
        for (k, p) in self.eta.iter().enumerate() {
            out.push_str(&format!("{k},{}\n", fmt_num(*p)));
        }
        out
    }

    /// JSON sidecar `{alpha, thresholds, weights, mu, nu}`.
    pub fn sidecar_json(&self) -> serde_json::Value {
        let (thresholds, weights): (Vec<u32>, Vec<f64>) =
            self.strategy.weights().iter().copied().unzip();
        serde_json::json!({
            "alpha": self.alpha,
            "thresholds": thresholds,
            "weights": weights,
            "mu": self.mu,
            "nu": self.nu,
        })
    }
}

fn mu_nu(eta: &[f64], strategy: &PopulationStrategy) -> (f64, f64) {
    let mu = eta.first().copied().unwrap_or(1.0);
    let nu = eta
        .iter()
        .enumerate()
        .map(|(k, p)| p * (1.0 - strategy.sigma(k as u64)))
        .sum();
    (mu, nu)
}

/// Settings for the tilt bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSolver {
    /// Bracket for the tilt `y`.
    pub tilt_bracket: (f64, f64),
    /// Accepted error on the mean holding.
    pub mean_tol: f64,
    pub max_iter: usize,
}

impl Default for InvariantSolver {
    fn default() -> Self {
        Self {
            tilt_bracket: (1e-12, 1e12),
            mean_tol: 1e-13,
            max_iter: 400,
        }
    }
}

impl InvariantSolver {
    pub fn solve(&self, protocol: &Protocol) -> Result<SteadyState> {
        let strategy = protocol.strategy().clone();
        let alpha = protocol.alpha();
        let kmax = strategy.max_threshold() as usize;

        // alpha = K/2 under a pure strategy: the tilt is exactly 1.
        if strategy.pure_threshold().is_some() && alpha == kmax as f64 / 2.0 {
            let eta = vec![1.0 / (kmax as f64 + 1.0); kmax + 1];
            return Ok(SteadyState::from_distribution(eta, strategy).with_alpha(alpha));
        }

        // log of Π_{j<k} sigma(j); finite on 0..=kmax by construction.
        let mut log_prefix = Vec::with_capacity(kmax + 1);
        let mut acc = 0.0;
        for k in 0..=kmax {
            log_prefix.push(acc);
            acc += strategy.sigma(k as u64).ln();
        }

        let (mut lo, mut hi) = (self.tilt_bracket.0.ln(), self.tilt_bracket.1.ln());
        let mean_lo = tilted(&log_prefix, lo).1;
        let mean_hi = tilted(&log_prefix, hi).1;
        if !(mean_lo < alpha && alpha < mean_hi) {
            return Err(Error::NoConvergence(format!(
                "tilt bracket does not contain alpha = {alpha} (means {mean_lo}..{mean_hi})"
            )));
        }

        let mut best = (f64::INFINITY, 0.0);
        for _ in 0..self.max_iter {
            let mid = 0.5 * (lo + hi);
            let mean = tilted(&log_prefix, mid).1;
            let err = mean - alpha;
            if err.abs() < best.0 {
                best = (err.abs(), mid);
            }
            if err.abs() <= self.mean_tol || mid <= lo || mid >= hi {
                break;
            }
            if err < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The bracket can collapse before mean_tol is met when the mean is
        // large; accept anything close to rounding.
        if best.0 > 1e-9 * alpha.max(1.0) {
            return Err(Error::NoConvergence(format!(
                "mean error {} after bisection",
                best.0
            )));
        }
        let eta = tilted(&log_prefix, best.1).0;
        Ok(SteadyState::from_distribution(eta, strategy).with_alpha(alpha))
    }
}

impl SteadyState {
    fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Normalized distribution and its mean for log-tilt `t = ln y`.
fn tilted(log_prefix: &[f64], t: f64) -> (Vec<f64>, f64) {
    let logs: Vec<f64> = log_prefix
        .iter()
        .enumerate()
        .map(|(k, lp)| k as f64 * t + lp)
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut eta: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = eta.iter().sum();
    eta.iter_mut().for_each(|p| *p /= total);
    let mean = eta.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    (eta, mean)
}

/// Unique invariant distribution of `protocol`.
///
/// `rho` cancels from the stationarity condition; it is validated and
/// otherwise ignored.
pub fn invariant_distribution(protocol: &Protocol, rho: f64) -> Result<SteadyState> {
    validate_rho(rho)?;
    InvariantSolver::default().solve(protocol)
}

/// One period of the token dynamics, with `mu` and `nu` taken from `eta`.
///
/// Agents holding no tokens cannot buy, so no down-flow leaves holding 0.
/// The result is one entry longer than `eta` when the top holding can
/// still move up.
pub fn one_step_update(eta: &[f64], strategy: &PopulationStrategy, rho: f64) -> Vec<f64> {
    let (mu, nu) = mu_nu(eta, strategy);
    let up_rate = rho * (1.0 - mu);
    let down_rate = rho * (1.0 - nu);
    let n = eta.len();
    let mut next = vec![0.0; n + 1];
    for (k, &p) in eta.iter().enumerate() {
        let up = p * up_rate * strategy.sigma(k as u64);
        let down = if k > 0 { p * down_rate } else { 0.0 };
        next[k] += p - up - down;
        next[k + 1] += up;
        if k > 0 {
            next[k - 1] += down;
        }
    }
    if next[n] == 0.0 {
        next.pop();
    }
    next
}
