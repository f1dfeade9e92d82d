//! Equilibrium classification and the parameter intervals that sustain a
//! threshold protocol.
//!
//! A pure threshold protocol `(alpha, sigma_K)` is an equilibrium iff
//! `M(K-1) >= c/beta` (keep serving up to `K`) and `M(K) <= c/beta` (stop at
//! `K`). Both marginals are strictly increasing in `beta`, so each condition
//! flips exactly once on `(0, 1)`, which yields the interval `[beta_L, beta_H]`.
//! The marginals are linear in `(b, c)`, which gives `[r_L, r_H]` in closed
//! form.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::{fmt_num, fmt_opt};
use crate::population::{
    invariant_distribution, validate_rho, PopulationParams, PopulationStrategy, Protocol,
    SteadyState,
};
use crate::values::{marginals_raw, CoefficientTriple};

/// Numerical tolerances used by the classification and root searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Slack tolerance for classification.
    pub classify: f64,
    /// Width of the final bisection bracket, in parameter units.
    pub root: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            classify: 1e-9,
            root: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EquilibriumTag {
    NotEquilibrium,
    BoundaryEquilibrium,
    RobustEquilibrium,
}

impl EquilibriumTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EquilibriumTag::NotEquilibrium => "NotEquilibrium",
            EquilibriumTag::BoundaryEquilibrium => "BoundaryEquilibrium",
            EquilibriumTag::RobustEquilibrium => "RobustEquilibrium",
        }
    }

    /// Boundary or robust.
    pub fn is_equilibrium(self) -> bool {
        self != EquilibriumTag::NotEquilibrium
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumClass {
    #[serde(rename = "class")]
    pub tag: EquilibriumTag,
    /// `M(K-1) - c/beta`.
    pub slack_low: f64,
    /// `c/beta - M(K)`.
    pub slack_high: f64,
}

impl EquilibriumClass {
    pub fn from_slacks(slack_low: f64, slack_high: f64, tol: f64) -> Self {
        let tag = if slack_low > tol && slack_high > tol {
            EquilibriumTag::RobustEquilibrium
        } else if slack_low >= -tol && slack_high >= -tol {
            EquilibriumTag::BoundaryEquilibrium
        } else {
            EquilibriumTag::NotEquilibrium
        };
        Self {
            tag,
            slack_low,
            slack_high,
        }
    }
}

/// Equilibrium slacks of `sigma_K` against raw `(mu, nu)`.
pub(crate) fn slacks(k: u32, params: &PopulationParams, mu: f64, nu: f64) -> (f64, f64) {
    let m = marginals_raw(k, params, mu, nu);
    let threshold = params.c() / params.beta();
    let k = k as usize;
    (m[k - 1] - threshold, threshold - m[k])
}

fn pure_state(protocol: &Protocol, rho: f64) -> Result<(u32, SteadyState)> {
    let k = protocol.pure_threshold()?;
    let steady = invariant_distribution(protocol, rho)?;
    steady.ensure_nondegenerate()?;
    Ok((k, steady))
}

/// Classifies a pure threshold protocol at `params`.
pub fn check_equilibrium(
    protocol: &Protocol,
    params: &PopulationParams,
) -> Result<EquilibriumClass> {
    check_equilibrium_with(protocol, params, Tolerances::default())
}

pub fn check_equilibrium_with(
    protocol: &Protocol,
    params: &PopulationParams,
    tol: Tolerances,
) -> Result<EquilibriumClass> {
    let (k, steady) = pure_state(protocol, params.rho())?;
    Ok(classify_state(k, params, &steady, tol))
}

/// Classification against a precomputed steady state.
pub fn classify_state(
    k: u32,
    params: &PopulationParams,
    steady: &SteadyState,
    tol: Tolerances,
) -> EquilibriumClass {
    let (low, high) = slacks(k, params, steady.mu(), steady.nu());
    EquilibriumClass::from_slacks(low, high, tol.classify)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Beta,
    R,
}

/// Closed interval of a population parameter on which a protocol is an
/// equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterInterval {
    pub kind: IntervalKind,
    pub lo: f64,
    pub hi: f64,
}

impl ParameterInterval {
    pub fn contains_open(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
}

fn validate_ratio(r: f64) -> Result<()> {
    if r > 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "benefit/cost ratio r = {r} must exceed 1"
        )))
    }
}

/// Lower edge of the discount-factor search.
const BETA_FLOOR: f64 = 1e-9;
/// Upper edge of the discount-factor search.
const BETA_CEIL: f64 = 1.0 - 1e-12;

fn bisect_increasing<F>(f: F, mut lo: f64, mut hi: f64, tol: f64, name: &'static str) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if f(lo) >= 0.0 || f(hi) <= 0.0 {
        return Err(Error::NoRoot(name));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `F(beta) = M(K-1, beta) - c/beta`; zero at `beta_L`.
pub fn lower_condition(k: u32, rho: f64, r: f64, mu: f64, nu: f64, beta: f64) -> f64 {
    let params = PopulationParams::new_unchecked(rho, beta, r, 1.0);
    marginals_raw(k, &params, mu, nu)[k as usize - 1] - 1.0 / beta
}

/// `G(beta) = M(K-1, beta) - (1 - 1/(rho(1-nu)) + 1/(rho(1-nu)beta)) c/beta`;
/// zero at `beta_H`, equivalent to `M(K) = c/beta`.
pub fn upper_condition(k: u32, rho: f64, r: f64, mu: f64, nu: f64, beta: f64) -> f64 {
    let params = PopulationParams::new_unchecked(rho, beta, r, 1.0);
    let a = rho * (1.0 - nu);
    let factor = 1.0 - 1.0 / a + 1.0 / (a * beta);
    marginals_raw(k, &params, mu, nu)[k as usize - 1] - factor / beta
}

/// `[beta_L, beta_H]` for a pure threshold protocol at benefit/cost ratio `r`.
pub fn beta_interval(protocol: &Protocol, rho: f64, r: f64) -> Result<ParameterInterval> {
    beta_interval_with(protocol, rho, r, Tolerances::default())
}

pub fn beta_interval_with(
    protocol: &Protocol,
    rho: f64,
    r: f64,
    tol: Tolerances,
) -> Result<ParameterInterval> {
    validate_rho(rho)?;
    validate_ratio(r)?;
    let (k, steady) = pure_state(protocol, rho)?;
    let (mu, nu) = (steady.mu(), steady.nu());
    let lo = bisect_increasing(
        |b| lower_condition(k, rho, r, mu, nu, b),
        BETA_FLOOR,
        BETA_CEIL,
        tol.root,
        "F",
    )?;
    let hi = bisect_increasing(
        |b| upper_condition(k, rho, r, mu, nu, b),
        BETA_FLOOR,
        BETA_CEIL,
        tol.root,
        "G",
    )?;
    Ok(ParameterInterval {
        kind: IntervalKind::Beta,
        lo,
        hi,
    })
}

/// `[r_L, r_H]` for a pure threshold protocol at discount factor `beta`.
pub fn r_interval(protocol: &Protocol, rho: f64, beta: f64) -> Result<ParameterInterval> {
    validate_rho(rho)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParams(format!(
            "beta = {beta} must lie in (0, 1)"
        )));
    }
    let (k, steady) = pure_state(protocol, rho)?;
    let (mu, nu) = (steady.mu(), steady.nu());
    let idx = k as usize - 1;
    let unit_benefit = marginals_raw(
        k,
        &PopulationParams::new_unchecked(rho, beta, 1.0, 0.0),
        mu,
        nu,
    );
    let unit_cost = marginals_raw(
        k,
        &PopulationParams::new_unchecked(rho, beta, 0.0, 1.0),
        mu,
        nu,
    );
    let (a, b) = (unit_benefit[idx], unit_cost[idx]);
    if a <= 0.0 {
        return Err(Error::DegenerateState { mu, nu });
    }
    let q = CoefficientTriple::from_state(rho, beta, mu, nu).decay_ratio();
    Ok(ParameterInterval {
        kind: IntervalKind::R,
        lo: (1.0 / beta - b) / a,
        hi: (1.0 / (q * beta) - b) / a,
    })
}

/// Which parameter varies along an interval table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalAxis {
    /// Discount-factor intervals at a fixed ratio.
    Beta { r: f64 },
    /// Ratio intervals at a fixed discount factor.
    Ratio { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalRow {
    pub k: u32,
    pub lo: f64,
    pub hi: f64,
}

/// Intervals of `(K/2, sigma_K)` for `K = 1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalTable {
    pub kind: IntervalKind,
    pub rows: Vec<IntervalRow>,
}

impl IntervalTable {
    /// `lo(K-1) < lo(K) < hi(K-1) < hi(K)` for every consecutive pair.
    pub fn is_interleaved(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[0].lo < w[1].lo && w[1].lo < w[0].hi && w[0].hi < w[1].hi)
    }

    /// First consecutive pair breaking the interleaving chain, if any.
    pub fn first_violation(&self) -> Option<(u32, u32)> {
        self.rows
            .windows(2)
            .find(|w| !(w[0].lo < w[1].lo && w[1].lo < w[0].hi && w[0].hi < w[1].hi))
            .map(|w| (w[0].k, w[1].k))
    }

    /// CSV with header `K,lo,hi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,lo,hi\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                row.k,
                fmt_num(row.lo),
                fmt_num(row.hi)
            ));
        }
        out
    }
}

/// Interval table for the half-threshold protocols `Pi_1..=Pi_{k_max}`.
pub fn interval_interleaving(k_max: u32, rho: f64, axis: IntervalAxis) -> Result<IntervalTable> {
    if k_max == 0 {
        return Err(Error::InvalidStrategy("k_max must be at least 1".into()));
    }
    let rows = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let protocol = Protocol::half_threshold(k)?;
            let iv = match axis {
                IntervalAxis::Beta { r } => beta_interval(&protocol, rho, r)?,
                IntervalAxis::Ratio { beta } => r_interval(&protocol, rho, beta)?,
            };
            Ok(IntervalRow {
                k,
                lo: iv.lo,
                hi: iv.hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kind = match axis {
        IntervalAxis::Beta { .. } => IntervalKind::Beta,
        IntervalAxis::Ratio { .. } => IntervalKind::R,
    };
    Ok(IntervalTable { kind, rows })
}

/// Outcome of the adjacent-mix search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MixedEquilibrium {
    /// Weight `w` on threshold `K + 1` (the rest on `K`).
    Mixed {
        weight: f64,
        residual: f64,
    },
    NoMix,
}

impl MixedEquilibrium {
    pub fn weight(&self) -> Option<f64> {
        match *self {
            MixedEquilibrium::Mixed { weight, .. } => Some(weight),
            MixedEquilibrium::NoMix => None,
        }
    }
}

struct MixEval {
    indifference: f64,
    keep_serving: f64,
}

fn evaluate_mix(alpha: f64, k: u32, w: f64, params: &PopulationParams) -> Result<MixEval> {
    let strategy = PopulationStrategy::mixed(k, w)?;
    let steady = invariant_distribution(&Protocol::new(alpha, strategy)?, params.rho())?;
    steady.ensure_nondegenerate()?;
    let (low, high) = slacks(k, params, steady.mu(), steady.nu());
    Ok(MixEval {
        indifference: -high,
        keep_serving: low,
    })
}

/// Searches for a weight `w` such that `{K: 1 - w, K + 1: w}` with supply
/// `alpha` is an equilibrium: an individual playing `sigma_K` against the
/// mixed steady state is indifferent at holding `K` (`M(K) = c/beta`) and
/// willing to serve below it.
pub fn mixed_equilibrium_weight(
    alpha: f64,
    k: u32,
    params: &PopulationParams,
) -> Result<MixedEquilibrium> {
    mixed_equilibrium_weight_with(alpha, k, params, Tolerances::default())
}

pub fn mixed_equilibrium_weight_with(
    alpha: f64,
    k: u32,
    params: &PopulationParams,
    tol: Tolerances,
) -> Result<MixedEquilibrium> {
    if k == 0 {
        return Err(Error::InvalidStrategy("mixing needs K >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < f64::from(k + 1)) {
        return Err(Error::InvalidSupply {
            alpha,
            max_threshold: k + 1,
        });
    }
    // With alpha >= K the pure-K end of the segment has no invariant
    // distribution; start just inside it.
    let w_lo = if alpha < f64::from(k) { 0.0 } else { 1e-9 };
    let at_lo = evaluate_mix(alpha, k, w_lo, params)?;
    let at_hi = evaluate_mix(alpha, k, 1.0, params)?;

    let accept = |w: f64, eval: &MixEval| {
        if eval.keep_serving >= -tol.classify {
            MixedEquilibrium::Mixed {
                weight: w,
                residual: eval.indifference,
            }
        } else {
            MixedEquilibrium::NoMix
        }
    };
    if at_lo.indifference.abs() <= tol.classify {
        return Ok(accept(w_lo, &at_lo));
    }
    if at_hi.indifference.abs() <= tol.classify {
        return Ok(accept(1.0, &at_hi));
    }
    if at_lo.indifference.signum() == at_hi.indifference.signum() {
        return Ok(MixedEquilibrium::NoMix);
    }

    let lo_sign = at_lo.indifference.signum();
    let (mut lo, mut hi) = (w_lo, 1.0);
    let mut eval = at_lo;
    let mut w = lo;
    for _ in 0..200 {
        w = 0.5 * (lo + hi);
        eval = evaluate_mix(alpha, k, w, params)?;
        if eval.indifference == 0.0 || hi - lo <= tol.root * 1e-2 {
            break;
        }
        if eval.indifference.signum() == lo_sign {
            lo = w;
        } else {
            hi = w;
        }
    }
    Ok(accept(w, &eval))
}

/// One row of a classification sweep over `(beta, r, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationRow {
    pub beta: f64,
    pub r: f64,
    pub k: u32,
    pub class: EquilibriumClass,
}

/// Classifies `(alpha, sigma_K)` on a grid; `alpha = None` uses `K/2`.
/// Rows are ordered by `beta`, then `r`, then `K`.
pub fn classification_sweep(
    alpha: Option<f64>,
    rho: f64,
    betas: &[f64],
    ratios: &[f64],
    ks: &[u32],
) -> Result<Vec<ClassificationRow>> {
    let cells: Vec<(f64, f64, u32)> = betas
        .iter()
        .flat_map(|&b| {
            ratios
                .iter()
                .flat_map(move |&r| ks.iter().map(move |&k| (b, r, k)))
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(beta, r, k)| {
            let protocol = match alpha {
                Some(a) => Protocol::pure(a, k)?,
                None => Protocol::half_threshold(k)?,
            };
            let params = PopulationParams::with_ratio(rho, beta, r)?;
            Ok(ClassificationRow {
                beta,
                r,
                k,
                class: check_equilibrium(&protocol, &params)?,
            })
        })
        .collect()
}

pub fn classification_csv(rows: &[ClassificationRow]) -> String {
    let mut out = String::from("beta,r,K,class,slack_low,slack_high\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_num(row.beta),
            fmt_num(row.r),
            row.k,
            row.class.tag.as_str(),
            fmt_num(row.class.slack_low),
            fmt_num(row.class.slack_high),
        ));
    }
    out
}

/// One row of the pure/mixed equilibrium map at a fixed supply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub k: u32,
    pub tag: EquilibriumTag,
    /// Interior weight on `K + 1` when a proper mix `{K, K+1}` is an
    /// equilibrium at this `beta`.
    pub mix_weight: Option<f64>,
}

/// Pure and mixed equilibria of `(alpha, sigma_K)` for `K` with
/// `alpha < K <= k_max` across a grid of discount factors.
pub fn equilibrium_sweep(
    alpha: f64,
    rho: f64,
    r: f64,
    betas: &[f64],
    k_max: u32,
) -> Result<Vec<SweepRow>> {
    let k_min = alpha.floor() as u32 + 1;
    let cells: Vec<(f64, u32)> = betas
        .iter()
        .flat_map(|&b| (k_min..=k_max).map(move |k| (b, k)))
        .collect();
    cells
        .into_par_iter()
        .map(|(beta, k)| {
            let params = PopulationParams::with_ratio(rho, beta, r)?;
            let class = check_equilibrium(&Protocol::pure(alpha, k)?, &params)?;
            let mix_weight = mixed_equilibrium_weight(alpha, k, &params)?
                .weight()
                .filter(|&w| w > 0.0 && w < 1.0);
            Ok(SweepRow {
                beta,
                k,
                tag: class.tag,
                mix_weight,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,K,class,mix_weight\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_num(row.beta),
            row.k,
            row.tag.as_str(),
            fmt_opt(row.mix_weight)
        ));
    }
    out
}
