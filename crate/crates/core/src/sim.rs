//! Finite-population Monte Carlo of the matching and exchange process.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::population::{invariant_distribution, PopulationParams, PopulationStrategy, Protocol};

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.3, seed_from_u64)";

/// How tokens are handed out before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// `floor(T/N)` tokens each, the remainder one apiece to the lowest
    /// agent indices.
    #[default]
    Spread,
    /// Independent draws from the invariant distribution, then adjusted one
    /// token at a time to the exact total.
    SampleFromInvariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub steps: u64,
    pub seed: u64,
    /// Per-capita supply; the population holds `round(alpha N)` tokens.
    pub alpha: f64,
    pub strategy: PopulationStrategy,
    pub rho: f64,
    pub burn_in: u64,
    pub init: InitMode,
    /// Keep the per-step `t,trades,eta0,etaK` trace.
    #[serde(default)]
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(protocol: &Protocol, rho: f64, n_agents: usize, steps: u64, seed: u64) -> Self {
        Self {
            n_agents,
            steps,
            seed,
            alpha: protocol.alpha(),
            strategy: protocol.strategy().clone(),
            rho,
            burn_in: steps / 5,
            init: InitMode::default(),
            record_trace: false,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        (self.alpha * self.n_agents as f64).round() as u64
    }

    /// Matched pairs per step: `floor(rho N)`.
    pub fn pairs_per_step(&self) -> usize {
        (self.rho * self.n_agents as f64).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidConfig("n_agents must be at least 2".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "rho = {} not in (0, 1/2]",
                self.rho
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must be non-negative",
                self.alpha
            )));
        }
        if self.burn_in >= self.steps {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than steps ({})",
                self.burn_in, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub trades: u64,
    pub eta0: f64,
    #[serde(rename = "etaK")]
    pub eta_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub generator: &'static str,
    pub seed: u64,
    pub n_agents: usize,
    pub steps: u64,
    pub burn_in: u64,
    pub total_tokens: u64,
    /// Histogram averaged over the states after steps `burn_in+1..=steps`.
    pub empirical_eta: Vec<f64>,
    /// `None` when the supply admits no analytic invariant distribution.
    pub l1_distance_to_invariant: Option<f64>,
    /// Trades per matched pair after burn-in.
    pub empirical_efficiency: f64,
    /// Trades over the whole run.
    pub trades: u64,
    pub token_conservation_check: bool,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,trades,eta0,etaK\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.t,
                row.trades,
                fmt_num(row.eta0),
                fmt_num(row.eta_k)
            ));
        }
        out
    }
}

/// Analytic stationary distribution, including the two point masses at the
/// ends of the supply range.
fn reference_distribution(alpha: f64, strategy: &PopulationStrategy) -> Option<Vec<f64>> {
    let top = strategy.max_threshold();
    if alpha == 0.0 {
        return Some(vec![1.0]);
    }
    if strategy.pure_threshold().is_some() && alpha == f64::from(top) {
        let mut eta = vec![0.0; top as usize + 1];
        eta[top as usize] = 1.0;
        return Some(eta);
    }
    let protocol = Protocol::new(alpha, strategy.clone()).ok()?;
    invariant_distribution(&protocol, 0.5)
        .ok()
        .map(|s| s.eta().to_vec())
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len().max(b.len()))
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum()
}

/// Threshold of each agent: the first `round(w N)` agents take the lowest
/// threshold of a mix, the rest the next one.
fn assign_thresholds(strategy: &PopulationStrategy, n: usize) -> Vec<u32> {
    let mut types = Vec::with_capacity(n);
    let mut assigned = 0usize;
    let mut cumulative = 0.0;
    for &(k, w) in strategy.weights() {
        cumulative += w;
        let upto = ((cumulative * n as f64).round() as usize).min(n);
        types.extend(std::iter::repeat_n(k, upto.saturating_sub(assigned)));
        assigned = assigned.max(upto);
    }
    let last = strategy.max_threshold();
    types.resize(n, last);
    types
}

struct Population {
    holdings: Vec<u64>,
    thresholds: Vec<u32>,
    counts: Vec<u64>,
    order: Vec<usize>,
    total: u64,
}

impl Population {
    fn new(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = config.n_agents;
        let thresholds = assign_thresholds(&config.strategy, n);
        let total = config.total_tokens();
        let capacity: u64 = thresholds.iter().map(|&k| u64::from(k)).sum();
        if total > capacity {
            return Err(Error::InfeasibleAllocation {
                tokens: total,
                capacity,
            });
        }
        let holdings = match config.init {
            InitMode::Spread => {
                let base = total / n as u64;
                let extra = (total % n as u64) as usize;
                (0..n).map(|i| base + u64::from(i < extra)).collect()
            }
            InitMode::SampleFromInvariant => {
                let eta =
                    reference_distribution(config.alpha, &config.strategy).ok_or_else(|| {
                        Error::InvalidConfig(
                            "supply has no invariant distribution to sample".into(),
                        )
                    })?;
                sample_holdings(&eta, &thresholds, total, rng)?
            }
        };
        let mut pop = Self {
            holdings,
            thresholds,
            counts: Vec::new(),
            order: (0..n).collect(),
            total,
        };
        pop.rebuild_counts();
        Ok(pop)
    }

    fn rebuild_counts(&mut self) {
        let top = self.holdings.iter().copied().max().unwrap_or(0) as usize;
        self.counts = vec![0; top + 2];
        for &h in &self.holdings {
            self.counts[h as usize] += 1;
        }
    }

    fn move_count(&mut self, from: u64, to: u64) {
        self.counts[from as usize] -= 1;
        let to = to as usize;
        if to >= self.counts.len() {
            self.counts.resize(to + 1, 0);
        }
        self.counts[to] += 1;
    }

    fn serves(&self, agent: usize) -> bool {
        self.holdings[agent] < u64::from(self.thresholds[agent])
    }

    /// One matching round; returns the number of trades.
    fn step(&mut self, pairs: usize, rng: &mut ChaCha8Rng) -> u64 {
        let (chosen, _) = self.order.partial_shuffle(rng, 2 * pairs);
        let chosen: Vec<usize> = chosen.to_vec();
        let mut trades = 0;
        for pair in chosen.chunks_exact(2) {
            let (client, server) = (pair[0], pair[1]);
            if self.holdings[client] >= 1 && self.serves(server) {
                let (hc, hs) = (self.holdings[client], self.holdings[server]);
                self.holdings[client] = hc - 1;
                self.holdings[server] = hs + 1;
                self.move_count(hc, hc - 1);
                self.move_count(hs, hs + 1);
                trades += 1;
            }
        }
        trades
    }

    fn tokens_in_histogram(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as u64 * c)
            .sum()
    }
}

fn sample_holdings(
    eta: &[f64],
    thresholds: &[u32],
    total: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u64>> {
    let n = thresholds.len();
    let dist = WeightedIndex::new(eta)
        .map_err(|e| Error::InvalidConfig(format!("bad invariant weights: {e}")))?;
    let mut holdings: Vec<u64> = (0..n)
        .map(|i| (dist.sample(rng) as u64).min(u64::from(thresholds[i])))
        .collect();
    let mut sum: u64 = holdings.iter().sum();
    while sum != total {
        let i = rng.gen_range(0..n);
        if sum < total && holdings[i] < u64::from(thresholds[i]) {
            holdings[i] += 1;
            sum += 1;
        } else if sum > total && holdings[i] > 0 {
            holdings[i] -= 1;
            sum -= 1;
        }
    }
    Ok(holdings)
}

/// Runs the seeded simulation. Bit-identical output for identical configs.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop = Population::new(config, &mut rng)?;
    let pairs = config.pairs_per_step();
    let n = config.n_agents as f64;
    let trace_k = config.strategy.max_threshold() as usize;

    let mut eta_sum: Vec<f64> = Vec::new();
    let mut trades_total = 0u64;
    let mut trades_measured = 0u64;
    let mut conserved = pop.tokens_in_histogram() == pop.total;
    let mut trace = Vec::new();

    for t in 1..=config.steps {
        let trades = pop.step(pairs, &mut rng);
        trades_total += trades;
        conserved &= pop.tokens_in_histogram() == pop.total;
        if t > config.burn_in {
            trades_measured += trades;
            if eta_sum.len() < pop.counts.len() {
                eta_sum.resize(pop.counts.len(), 0.0);
            }
            for (acc, &c) in eta_sum.iter_mut().zip(&pop.counts) {
                *acc += c as f64;
            }
        }
        if config.record_trace {
            let frac = |k: usize| pop.counts.get(k).map_or(0.0, |&c| c as f64 / n);
            trace.push(TraceRow {
                t,
                trades,
                eta0: frac(0),
                eta_k: frac(trace_k),
            });
        }
    }
    conserved &= pop.holdings.iter().sum::<u64>() == pop.total;

    let measured = (config.steps - config.burn_in) as f64;
    let mut empirical_eta: Vec<f64> = eta_sum.iter().map(|s| s / (measured * n)).collect();
    while empirical_eta.len() > 1 && empirical_eta.last() == Some(&0.0) {
        empirical_eta.pop();
    }
    let l1 = reference_distribution(config.alpha, &config.strategy)
        .map(|eta| l1_distance(&empirical_eta, &eta));
    let pair_count = pairs as f64 * measured;
    Ok(SimReport {
        generator: GENERATOR,
        seed: config.seed,
        n_agents: config.n_agents,
        steps: config.steps,
        burn_in: config.burn_in,
        total_tokens: pop.total,
        empirical_eta,
        l1_distance_to_invariant: l1,
        empirical_efficiency: if pair_count > 0.0 {
            trades_measured as f64 / pair_count
        } else {
            0.0
        },
        trades: trades_total,
        token_conservation_check: conserved,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub threshold: u32,
    pub mean: f64,
    pub std_error: f64,
    pub replications: u32,
}

const DEVIATION_BATCHES: u32 = 16;

fn batch_seed(seed: u64, batch: u32) -> u64 {
    seed ^ (u64::from(batch) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Discounted payoff of tagged agents using threshold `deviant` against a
/// live population playing `config`'s protocol.
///
/// Tagged agents meet uniformly random population members but never change
/// their holdings, so the population stays on its own path. Each starts
/// from a draw of the invariant distribution after `config.burn_in` steps
/// and accumulates `sum_{t < horizon} beta^t u_t`. Replications are split
/// into independent population runs executed in parallel. The tag streams
/// do not depend on `deviant`, so estimates for different thresholds use
/// common random numbers.
pub fn deviation_payoff_estimate(
    config: &SimConfig,
    params: &PopulationParams,
    deviant: u32,
    horizon: u32,
    replications: u32,
) -> Result<PayoffEstimate> {
    if (config.rho - params.rho()).abs() > 0.0 {
        return Err(Error::InvalidConfig(
            "config rho differs from population rho".into(),
        ));
    }
    if config.n_agents < 2 {
        return Err(Error::InvalidConfig("n_agents must be at least 2".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be positive".into()));
    }
    if horizon == 0 {
        return Ok(PayoffEstimate {
            threshold: deviant,
            mean: 0.0,
            std_error: 0.0,
            replications,
        });
    }
    let eta = reference_distribution(config.alpha, &config.strategy)
        .ok_or_else(|| Error::InvalidConfig("supply has no invariant distribution".into()))?;
    let start = WeightedIndex::new(&eta)
        .map_err(|e| Error::InvalidConfig(format!("bad invariant weights: {e}")))?;
    let batches = DEVIATION_BATCHES.min(replications);
    let payoffs: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let tags = (replications / batches + u32::from(b < replications % batches)) as usize;
            let seed = batch_seed(config.seed, b);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tag_rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0xA5A5);
            let mut pop = Population::new(config, &mut rng)?;
            let pairs = config.pairs_per_step();
            for _ in 0..config.burn_in {
                pop.step(pairs, &mut rng);
            }
            let mut holding: Vec<u64> = (0..tags)
                .map(|_| start.sample(&mut tag_rng) as u64)
                .collect();
            let mut payoff = vec![0.0; tags];
            let mut discount = 1.0;
            let n = config.n_agents;
            for _ in 0..horizon {
                for (h, pay) in holding.iter_mut().zip(payoff.iter_mut()) {
                    let role: f64 = tag_rng.gen();
                    let partner = tag_rng.gen_range(0..n);
                    if role < config.rho {
                        if *h >= 1 && pop.serves(partner) {
                            *h -= 1;
                            *pay += discount * params.b();
                        }
                    } else if role < 2.0 * config.rho
                        && *h < u64::from(deviant)
                        && pop.holdings[partner] >= 1
                    {
                        *h += 1;
                        *pay -= discount * params.c();
                    }
                }
                pop.step(pairs, &mut rng);
                discount *= params.beta();
            }
            Ok(payoff)
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = payoffs.into_iter().flatten().collect();
    let m = all.len() as f64;
    let mean = all.iter().sum::<f64>() / m;
    let var = if all.len() > 1 {
        all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(PayoffEstimate {
        threshold: deviant,
        mean,
        std_error: (var / m).sqrt(),
        replications,
    })
}
