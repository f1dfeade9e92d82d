//! Command-line front end. Every analysis is a subcommand; vectors and
//! sweeps print as CSV, scalars and records as JSON.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::design::{
    bisection_design, default_search_limit, efficiency_frontier, fixed_threshold_comparison,
    fixed_threshold_csv, frontier_csv, optimal_protocol_search, threshold_bounds,
};
use crate::equilibrium::{
    beta_interval_with, check_equilibrium_with, equilibrium_sweep, r_interval, sweep_csv,
    Tolerances,
};
use crate::error::Error;
use crate::population::{invariant_distribution, PopulationParams, PopulationStrategy, Protocol};
use crate::sim::{run_simulation, InitMode, SimConfig};
use crate::values::{solve_marginals, solve_values};

pub const THREADS_ENV: &str = "TOKEN_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "token-lab",
    version,
    about = "Token-exchange protocol analysis"
)]
struct Cli {
    /// Write the artifact to this path instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Slack tolerance used when classifying equilibria.
    #[arg(long, global = true, default_value_t = 1e-9)]
    classify_tol: f64,

    /// Bracket width at which root searches stop.
    #[arg(long, global = true, default_value_t = 1e-10)]
    root_tol: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SupplyArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    k: u32,
}

#[derive(Debug, Args)]
struct GameArgs {
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    r: f64,
}

#[derive(Debug, Args)]
struct BetaGrid {
    #[arg(long)]
    beta_min: f64,
    #[arg(long)]
    beta_max: f64,
    #[arg(long)]
    beta_steps: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Spread,
    SampleFromInvariant,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Invariant token distribution as `k,eta` CSV.
    Steady {
        #[command(flatten)]
        supply: SupplyArgs,
        /// Weight on threshold K+1.
        #[arg(long)]
        mix_weight: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
    },
    /// Marginal utilities from the tridiagonal solve, as `k,M,V` CSV.
    Marginals {
        #[command(flatten)]
        supply: SupplyArgs,
        #[command(flatten)]
        game: GameArgs,
    },
    /// Values from the direct recursion solve, as `k,M,V` CSV.
    Values {
        #[command(flatten)]
        supply: SupplyArgs,
        #[command(flatten)]
        game: GameArgs,
    },
    /// Equilibrium classification as JSON.
    Check {
        #[command(flatten)]
        supply: SupplyArgs,
        #[command(flatten)]
        game: GameArgs,
    },
    /// Discount-factor interval as JSON.
    BetaInterval {
        #[command(flatten)]
        supply: SupplyArgs,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        r: f64,
    },
    /// Benefit/cost ratio interval as JSON.
    RInterval {
        #[command(flatten)]
        supply: SupplyArgs,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Threshold bracket as JSON.
    Bounds {
        #[command(flatten)]
        game: GameArgs,
    },
    /// Bisection design result as JSON.
    Design {
        #[command(flatten)]
        game: GameArgs,
    },
    /// Most efficient robust protocol on a supply grid, as JSON.
    Optimize {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 200)]
        alpha_steps: u32,
        #[arg(long)]
        k_max: Option<u32>,
    },
    /// Pure and mixed equilibria at fixed supply, as `beta,K,class,mix_weight` CSV.
    Sweep {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        r: f64,
        #[command(flatten)]
        grid: BetaGrid,
        #[arg(long, default_value_t = 8)]
        k_max: u32,
    },
    /// Optimal versus half-threshold efficiency per beta.
    Fig3 {
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        r: f64,
        #[command(flatten)]
        grid: BetaGrid,
        #[arg(long, default_value_t = 200)]
        alpha_steps: u32,
        #[arg(long)]
        k_max: Option<u32>,
    },
    /// Optimal versus fixed-threshold efficiency per beta.
    Fig4 {
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        r: f64,
        #[command(flatten)]
        grid: BetaGrid,
        #[arg(long, default_value_t = 3)]
        fixed_k: u32,
        #[arg(long, default_value_t = 200)]
        alpha_steps: u32,
        #[arg(long)]
        k_max: Option<u32>,
    },
    /// Seeded finite-population simulation; prints the report as JSON.
    Simulate {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        mix_weight: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Defaults to a fifth of the steps.
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long, value_enum, default_value_t = InitArg::Spread)]
        init: InitArg,
        /// Also write the per-step `t,trades,eta0,etaK` trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Solver(Error),
    Io(String),
}

type Outcome<T> = std::result::Result<T, Failure>;

trait UsageExt<T> {
    fn usage(self) -> Outcome<T>;
}

impl<T> UsageExt<T> for crate::Result<T> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.to_string()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Solver(e)
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn strategy(k: u32, mix_weight: Option<f64>) -> Outcome<PopulationStrategy> {
    match mix_weight {
        None => Ok(PopulationStrategy::pure(k)),
        Some(w) => PopulationStrategy::mixed(k, w).usage(),
    }
}

fn params(game: &GameArgs) -> Outcome<PopulationParams> {
    PopulationParams::with_ratio(game.rho, game.beta, game.r).usage()
}

fn supply(s: &SupplyArgs) -> Outcome<Protocol> {
    Protocol::pure(s.alpha, s.k).usage()
}

fn beta_grid(g: &BetaGrid) -> Outcome<Vec<f64>> {
    if g.beta_steps == 0 {
        return Err(Failure::Usage("--beta-steps must be positive".into()));
    }
    let ok = |b: f64| b > 0.0 && b < 1.0;
    if !(ok(g.beta_min) && ok(g.beta_max) && g.beta_min <= g.beta_max) {
        return Err(Failure::Usage(format!(
            "beta range [{}, {}] must satisfy 0 < min <= max < 1",
            g.beta_min, g.beta_max
        )));
    }
    if g.beta_steps == 1 {
        return Ok(vec![g.beta_min]);
    }
    let step = (g.beta_max - g.beta_min) / (g.beta_steps - 1) as f64;
    Ok((0..g.beta_steps)
        .map(|i| g.beta_min + i as f64 * step)
        .collect())
}

fn check_grid_params(rho: f64, r: f64) -> Outcome<()> {
    PopulationParams::with_ratio(rho, 0.5, r)
        .usage()
        .map(|_| ())
}

fn run(cli: Cli) -> Outcome<String> {
    let tol = Tolerances {
        classify: cli.classify_tol,
        root: cli.root_tol,
    };
    if !(tol.classify >= 0.0 && tol.root > 0.0) {
        return Err(Failure::Usage("tolerances must be positive".into()));
    }
    let text = match cli.command {
        Command::Steady {
            supply,
            mix_weight,
            rho,
        } => {
            let strat = strategy(supply.k, mix_weight)?;
            let protocol = Protocol::new(supply.alpha, strat).usage()?;
            crate::population::validate_rho(rho).usage()?;
            invariant_distribution(&protocol, rho)?.to_csv()
        }
        Command::Marginals { supply: s, game } => {
            let (protocol, p) = (supply(&s)?, params(&game)?);
            let steady = invariant_distribution(&protocol, p.rho())?;
            let mut profile = solve_marginals(s.k, &p, &steady)?;
            profile.values = solve_values(s.k, &p, &steady)?.values;
            profile.to_csv()
        }
        Command::Values { supply: s, game } => {
            let (protocol, p) = (supply(&s)?, params(&game)?);
            let steady = invariant_distribution(&protocol, p.rho())?;
            solve_values(s.k, &p, &steady)?.to_csv()
        }
        Command::Check { supply: s, game } => {
            let (protocol, p) = (supply(&s)?, params(&game)?);
            json(&check_equilibrium_with(&protocol, &p, tol)?)
        }
        Command::BetaInterval { supply: s, rho, r } => {
            let protocol = supply(&s)?;
            check_grid_params(rho, r)?;
            json(&beta_interval_with(&protocol, rho, r, tol)?)
        }
        Command::RInterval {
            supply: s,
            rho,
            beta,
        } => {
            let protocol = supply(&s)?;
            PopulationParams::with_ratio(rho, beta, 2.0).usage()?;
            json(&r_interval(&protocol, rho, beta)?)
        }
        Command::Bounds { game } => json(&threshold_bounds(&params(&game)?)),
        Command::Design { game } => json(&bisection_design(&params(&game)?)?),
        Command::Optimize {
            game,
            alpha_steps,
            k_max,
        } => {
            let p = params(&game)?;
            if alpha_steps < 2 {
                return Err(Failure::Usage("--alpha-steps must be at least 2".into()));
            }
            let k_max = k_max.unwrap_or_else(|| default_search_limit(&p));
            json(&optimal_protocol_search(&p, alpha_steps, 1, k_max.max(1))?)
        }
        Command::Sweep {
            alpha,
            rho,
            r,
            grid,
            k_max,
        } => {
            let betas = beta_grid(&grid)?;
            check_grid_params(rho, r)?;
            if !(alpha > 0.0 && alpha < f64::from(k_max)) {
                return Err(Failure::Usage(format!(
                    "--alpha {alpha} must lie in (0, --k-max = {k_max})"
                )));
            }
            sweep_csv(&equilibrium_sweep(alpha, rho, r, &betas, k_max)?)
        }
        Command::Fig3 {
            rho,
            r,
            grid,
            alpha_steps,
            k_max,
        } => {
            let betas = beta_grid(&grid)?;
            check_grid_params(rho, r)?;
            if alpha_steps < 2 {
                return Err(Failure::Usage("--alpha-steps must be at least 2".into()));
            }
            frontier_csv(&efficiency_frontier(rho, r, &betas, alpha_steps, k_max)?)
        }
        Command::Fig4 {
            rho,
            r,
            grid,
            fixed_k,
            alpha_steps,
            k_max,
        } => {
            let betas = beta_grid(&grid)?;
            check_grid_params(rho, r)?;
            if fixed_k == 0 || alpha_steps < 2 {
                return Err(Failure::Usage(
                    "--fixed-k must be positive and --alpha-steps at least 2".into(),
                ));
            }
            fixed_threshold_csv(&fixed_threshold_comparison(
                rho,
                r,
                &betas,
                fixed_k,
                alpha_steps,
                k_max,
            )?)
        }
        Command::Simulate {
            agents,
            steps,
            seed,
            alpha,
            k,
            mix_weight,
            rho,
            burn_in,
            init,
            trace,
        } => {
            let config = SimConfig {
                n_agents: agents,
                steps,
                seed,
                alpha,
                strategy: strategy(k, mix_weight)?,
                rho,
                burn_in: burn_in.unwrap_or(steps / 5),
                init: match init {
                    InitArg::Spread => InitMode::Spread,
                    InitArg::SampleFromInvariant => InitMode::SampleFromInvariant,
                },
                record_trace: trace.is_some(),
            };
            let report = run_simulation(&config).map_err(|e| match e {
                Error::InvalidConfig(m) => Failure::Usage(m),
                other => Failure::Solver(other),
            })?;
            if let Some(path) = trace {
                std::fs::write(&path, report.trace_csv())
                    .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            }
            json(&report)
        }
    };
    Ok(text)
}

fn thread_cap() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            )),
        },
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code: 0 on success, 1 on solver errors (JSON on `err`), 2 on usage
/// errors (one line on `err`).
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let rendered = e.to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            let _ = writeln!(err, "{}", line.trim());
            return 2;
        }
    };
    let threads = match thread_cap() {
        Ok(t) => t,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return 2;
        }
    };
    let output = cli.output.clone();
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(Failure::Io(e.to_string())),
        },
        None => run(cli),
    };
    match result {
        Ok(text) => {
            let written = match output {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))
                }
                None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
            };
            match written {
                Ok(()) => 0,
                Err(msg) => {
                    let _ = writeln!(err, "error: {msg}");
                    1
                }
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Solver(e)) => {
            let body = serde_json::json!({ "error": e.name(), "message": e.to_string() });
            let _ = writeln!(err, "{body}");
            1
        }
        Err(Failure::Io(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
