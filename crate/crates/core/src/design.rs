//! Efficiency, threshold bounds and protocol search.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{check_equilibrium, slacks, EquilibriumClass, EquilibriumTag, Tolerances};
use crate::error::{Error, Result};
use crate::format::{fmt_num, fmt_opt};
use crate::population::{invariant_distribution, PopulationParams, Protocol, SteadyState};

/// Fraction of matches that end in a trade: `(1 - mu)(1 - nu)`.
pub fn efficiency(steady: &SteadyState) -> f64 {
    (1.0 - steady.mu()) * (1.0 - steady.nu())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyBounds {
    /// `1 - 1/(2 ceil(alpha) + 1)`.
    pub upper_alpha: f64,
    /// `(K/(K+1))^2`, attained by `(K/2, sigma_K)`.
    pub upper_k: f64,
}

impl EfficiencyBounds {
    pub fn min(&self) -> f64 {
        self.upper_alpha.min(self.upper_k)
    }
}

/// Upper bounds on the efficiency of `(alpha, sigma_K)`.
pub fn efficiency_bounds(alpha: f64, k: u32) -> EfficiencyBounds {
    let kf = f64::from(k);
    EfficiencyBounds {
        upper_alpha: 1.0 - 1.0 / (2.0 * alpha.ceil() + 1.0),
        upper_k: (kf / (kf + 1.0)).powi(2),
    }
}

/// Real bracket containing every threshold `K` for which `(K/2, sigma_K)`
/// is a robust equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdBounds {
    #[serde(rename = "K_L")]
    pub k_low: f64,
    #[serde(rename = "K_H")]
    pub k_high: f64,
}

impl ThresholdBounds {
    /// Integer thresholds `max(1, ceil(K_L))..=floor(K_H)`, or `None` when
    /// the range is empty.
    pub fn integer_range(&self) -> Option<(u32, u32)> {
        let lo = self.k_low.ceil().max(1.0);
        let hi = self.k_high.floor();
        (lo <= hi).then_some((lo as u32, hi as u32))
    }

    /// `ceil(log2(K_H - K_L)) + 1`, and at least one evaluation.
    pub fn iteration_cap(&self) -> u32 {
        let span = self.k_high - self.k_low;
        let cap = span.log2().ceil() + 1.0;
        if cap.is_finite() && cap >= 1.0 {
            cap as u32
        } else {
            1
        }
    }
}

/// Closed-form threshold bracket for `params`.
pub fn threshold_bounds(params: &PopulationParams) -> ThresholdBounds {
    let (rho, beta, r) = (params.rho(), params.beta(), params.ratio());
    let low_base = rho * beta / (2.0 * (1.0 - beta) + 2.0 * rho * beta);
    let high_base = rho * beta / (1.0 - beta + rho * beta);
    let k_low = ((1.0 / (1.0 + r)).ln() / low_base.ln() - 1.0).max(0.0);
    let k_high = (1.0 / (2.0 * r)).ln() / high_base.ln();
    ThresholdBounds { k_low, k_high }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignStep {
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(flatten)]
    pub class: EquilibriumClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    #[serde(rename = "K_star")]
    pub k_star: u32,
    pub alpha_star: f64,
    pub efficiency: f64,
    pub iterations: u32,
    pub trail: Vec<DesignStep>,
}

/// Bisection over `[K_L, K_H]` for an equilibrium protocol `(K/2, sigma_K)`.
///
/// At the midpoint `K`: stop if `sigma_K` is an equilibrium; if
/// `M(K-1) < c/beta` no larger threshold works, so search left; otherwise
/// `M(K) > c/beta` and no smaller threshold works, so search right.
pub fn bisection_design(params: &PopulationParams) -> Result<DesignResult> {
    let bounds = threshold_bounds(params);
    let Some((mut lo, mut hi)) = bounds.integer_range() else {
        return Err(Error::NoEquilibriumFound(format!(
            "empty threshold range [{}, {}]",
            bounds.k_low, bounds.k_high
        )));
    };
    let mut trail = Vec::new();
    while lo <= hi {
        let k = lo + (hi - lo) / 2;
        let class = check_equilibrium(&Protocol::half_threshold(k)?, params)?;
        trail.push(DesignStep { k, class });
        if class.tag.is_equilibrium() {
            let steady = invariant_distribution(&Protocol::half_threshold(k)?, params.rho())?;
            return Ok(DesignResult {
                k_star: k,
                alpha_star: f64::from(k) / 2.0,
                efficiency: efficiency(&steady),
                iterations: trail.len() as u32,
                trail,
            });
        }
        if class.slack_low < 0.0 {
            if k == 0 {
                break;
            }
            hi = k - 1;
        } else {
            lo = k + 1;
        }
    }
    Err(Error::NoEquilibriumFound(format!(
        "bisection over [{}, {}] found no equilibrium after {} checks",
        bounds.k_low,
        bounds.k_high,
        trail.len()
    )))
}

/// Every `K` in `1..=k_max` whose `(K/2, sigma_K)` is an equilibrium
/// (boundary or robust), with its classification.
pub fn equilibrium_thresholds(
    params: &PopulationParams,
    k_max: u32,
) -> Result<Vec<(u32, EquilibriumClass)>> {
    let classes = (1..=k_max)
        .into_par_iter()
        .map(|k| Ok((k, check_equilibrium(&Protocol::half_threshold(k)?, params)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(classes
        .into_iter()
        .filter(|(_, c)| c.tag.is_equilibrium())
        .collect())
}

/// Default scan limit for exhaustive searches: `ceil(K_H) + 5`.
pub fn exhaustive_limit(params: &PopulationParams) -> u32 {
    threshold_bounds(params).k_high.ceil().max(0.0) as u32 + 5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolScore {
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalProtocols {
    /// Most efficient robust equilibrium on the supply grid.
    pub best: ProtocolScore,
    /// Most efficient robust `(K/2, sigma_K)`, for comparison.
    pub best_half_threshold: Option<ProtocolScore>,
}

#[derive(Debug, Clone, Copy)]
struct GridCell {
    alpha: f64,
    k: u32,
    half: bool,
    mu: f64,
    nu: f64,
}

/// Precomputed steady states for `(alpha, sigma_K)` with
/// `alpha = j K / steps`, `0 < j < steps`. Steady states do not depend on the
/// population parameters, so one grid serves a whole parameter sweep.
#[derive(Debug, Clone)]
pub struct SupplyGrid {
    cells: Vec<GridCell>,
    tol: Tolerances,
}

impl SupplyGrid {
    pub fn new(k_min: u32, k_max: u32, alpha_steps: u32) -> Result<Self> {
        if k_min == 0 || k_min > k_max {
            return Err(Error::InvalidStrategy(format!(
                "bad threshold range {k_min}..={k_max}"
            )));
        }
        if alpha_steps < 2 {
            return Err(Error::InvalidConfig(
                "alpha_steps must be at least 2".into(),
            ));
        }
        let specs: Vec<(u32, u32)> = (k_min..=k_max)
            .flat_map(|k| (1..alpha_steps).map(move |j| (k, j)))
            .collect();
        let cells = specs
            .into_par_iter()
            .map(|(k, j)| {
                let half = 2 * j == alpha_steps;
                let alpha = if half {
                    f64::from(k) / 2.0
                } else {
                    f64::from(j) * f64::from(k) / f64::from(alpha_steps)
                };
                let steady = invariant_distribution(&Protocol::pure(alpha, k)?, 0.5)?;
                Ok(GridCell {
                    alpha,
                    k,
                    half,
                    mu: steady.mu(),
                    nu: steady.nu(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            tol: Tolerances::default(),
        })
    }

    fn robust(&self, cell: &GridCell, params: &PopulationParams) -> bool {
        let (low, high) = slacks(cell.k, params, cell.mu, cell.nu);
        EquilibriumClass::from_slacks(low, high, self.tol.classify).tag
            == EquilibriumTag::RobustEquilibrium
    }

    fn best_where<F>(&self, params: &PopulationParams, keep: F) -> Option<ProtocolScore>
    where
        F: Fn(&GridCell) -> bool + Sync,
    {
        let hits: Vec<Option<ProtocolScore>> = self
            .cells
            .par_iter()
            .map(|cell| {
                (keep(cell) && self.robust(cell, params)).then_some(ProtocolScore {
                    alpha: cell.alpha,
                    k: cell.k,
                    efficiency: (1.0 - cell.mu) * (1.0 - cell.nu),
                })
            })
            .collect();
        // cells are ordered by (K, alpha); strict improvement keeps the
        // smallest K, then the smallest alpha, among ties
        hits.into_iter().flatten().fold(None, |best, s| match best {
            Some(b) if b.efficiency >= s.efficiency => Some(b),
            _ => Some(s),
        })
    }

    /// Best robust equilibrium on the grid, plus the best half-threshold one.
    pub fn search(&self, params: &PopulationParams) -> Result<OptimalProtocols> {
        let best = self.best_where(params, |_| true).ok_or_else(|| {
            Error::NoEquilibriumFound("no robust equilibrium on the supply grid".into())
        })?;
        Ok(OptimalProtocols {
            best,
            best_half_threshold: self.best_where(params, |c| c.half),
        })
    }

    /// Best robust equilibrium restricted to threshold `k`.
    pub fn best_for_threshold(&self, params: &PopulationParams, k: u32) -> Option<ProtocolScore> {
        self.best_where(params, |c| c.k == k)
    }
}

/// Default threshold range for the supply search: `1..=2 ceil(K_H) + 2`.
/// Protocols with fewer tokens than `K/2` can sustain thresholds above
/// `K_H`, which only bounds the half-threshold family.
pub fn default_search_limit(params: &PopulationParams) -> u32 {
    2 * threshold_bounds(params).k_high.ceil().max(0.0) as u32 + 2
}

/// Scans `alpha` over `j K / alpha_steps` for every `K` in `k_min..=k_max`
/// and returns the most efficient robust equilibrium.
pub fn optimal_protocol_search(
    params: &PopulationParams,
    alpha_steps: u32,
    k_min: u32,
    k_max: u32,
) -> Result<OptimalProtocols> {
    SupplyGrid::new(k_min, k_max, alpha_steps)?.search(params)
}

/// One point of the optimal-versus-half-threshold efficiency comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierRow {
    pub beta: f64,
    pub optimal: Option<ProtocolScore>,
    pub half_threshold: Option<ProtocolScore>,
}

impl FrontierRow {
    /// Efficiency of the best robust protocol; zero (no trade) if none.
    pub fn eff_opt(&self) -> f64 {
        self.optimal.map_or(0.0, |s| s.efficiency)
    }

    pub fn eff_half(&self) -> f64 {
        self.half_threshold.map_or(0.0, |s| s.efficiency)
    }
}

fn grid_limit(rho: f64, r: f64, betas: &[f64]) -> Result<u32> {
    betas.iter().try_fold(1u32, |acc, &beta| {
        Ok(acc.max(default_search_limit(&PopulationParams::with_ratio(
            rho, beta, r,
        )?)))
    })
}

/// Optimal robust protocol and best half-threshold protocol per `beta`.
pub fn efficiency_frontier(
    rho: f64,
    r: f64,
    betas: &[f64],
    alpha_steps: u32,
    k_max: Option<u32>,
) -> Result<Vec<FrontierRow>> {
    let k_max = match k_max {
        Some(k) => k,
        None => grid_limit(rho, r, betas)?,
    };
    let grid = SupplyGrid::new(1, k_max, alpha_steps)?;
    betas
        .iter()
        .map(|&beta| {
            let params = PopulationParams::with_ratio(rho, beta, r)?;
            let (optimal, half_threshold) = match grid.search(&params) {
                Ok(o) => (Some(o.best), o.best_half_threshold),
                Err(Error::NoEquilibriumFound(_)) => (None, None),
                Err(e) => return Err(e),
            };
            Ok(FrontierRow {
                beta,
                optimal,
                half_threshold,
            })
        })
        .collect()
}

pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    let mut out = String::from("beta,K_star,alpha_star,eff_opt,eff_piK\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_num(row.beta),
            row.optimal.map(|s| s.k.to_string()).unwrap_or_default(),
            fmt_opt(row.optimal.map(|s| s.alpha)),
            fmt_num(row.eff_opt()),
            fmt_num(row.eff_half()),
        ));
    }
    out
}

/// Unconstrained optimum versus the best protocol with a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedThresholdRow {
    pub beta: f64,
    pub eff_opt: f64,
    pub eff_fixed: f64,
}

pub fn fixed_threshold_comparison(
    rho: f64,
    r: f64,
    betas: &[f64],
    fixed_k: u32,
    alpha_steps: u32,
    k_max: Option<u32>,
) -> Result<Vec<FixedThresholdRow>> {
    let k_max = match k_max {
        Some(k) => k,
        None => grid_limit(rho, r, betas)?,
    }
    .max(fixed_k);
    let grid = SupplyGrid::new(1, k_max, alpha_steps)?;
    betas
        .iter()
        .map(|&beta| {
            let params = PopulationParams::with_ratio(rho, beta, r)?;
            let eff_opt = match grid.search(&params) {
                Ok(o) => o.best.efficiency,
                Err(Error::NoEquilibriumFound(_)) => 0.0,
                Err(e) => return Err(e),
            };
            let eff_fixed = grid
                .best_for_threshold(&params, fixed_k)
                .map_or(0.0, |s| s.efficiency);
            Ok(FixedThresholdRow {
                beta,
                eff_opt,
                eff_fixed,
            })
        })
        .collect()
}

pub fn fixed_threshold_csv(rows: &[FixedThresholdRow]) -> String {
    let mut out = String::from("beta,eff_opt,eff_fixedK\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_num(row.beta),
            fmt_num(row.eff_opt),
            fmt_num(row.eff_fixed)
        ));
    }
    out
}

/// Row of the threshold-bounds sweep CSV.
pub fn bounds_csv(rows: &[(PopulationParams, ThresholdBounds)]) -> String {
    let mut out = String::from("rho,beta,r,K_L,K_H\n");
    for (p, b) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_num(p.rho()),
            fmt_num(p.beta()),
            fmt_num(p.ratio()),
            fmt_num(b.k_low),
            fmt_num(b.k_high)
        ));
    }
    out
}
