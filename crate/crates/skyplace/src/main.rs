//! Command-line interface of the placement toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use skyplace::baselines::{brute_force_min_abs, lower_bound};
use skyplace::error::{Error, Result};
use skyplace::harness::{
    build_environment, emit_csv, load_scenario, placement_file, run_sweep, Algorithm, Environment,
    SweepParameter, SweepSpec,
};
use skyplace::lp::{max_served_users, min_connections};
use skyplace::propagation::{build_gain_map, save_gain_map, ChannelModel};
use skyplace::solver_core::{gspa_solve, AdmmConfig};

/// `println!` that propagates write failures (notably EPIPE when stdout is a
/// closed pipe, e.g. `skyplace … | head`) instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}

#[derive(Parser)]
#[command(
    name = "skyplace",
    version,
    about = "Aerial base-station placement: minimize stations so every ground terminal \
             gets its demanded rate"
)]
struct Cli {
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

/// Solver overrides shared by the placement-running subcommands; unset flags
/// keep the scenario's (or built-in) values.
#[derive(Args, Clone, Copy, Default)]
struct SolverFlags {
    /// ADMM step size ρ.
    #[arg(long)]
    rho: Option<f64>,
    /// Absolute stopping tolerance.
    #[arg(long)]
    eps_abs: Option<f64>,
    /// Relative stopping tolerance.
    #[arg(long)]
    eps_rel: Option<f64>,
    /// Iteration cap per reweighting round.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Number of reweighting rounds.
    #[arg(long)]
    reweight_rounds: Option<usize>,
}

impl SolverFlags {
    fn apply(&self, base: AdmmConfig) -> AdmmConfig {
        AdmmConfig {
            rho: self.rho.unwrap_or(base.rho),
            eps_abs: self.eps_abs.unwrap_or(base.eps_abs),
            eps_rel: self.eps_rel.unwrap_or(base.eps_rel),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            reweight_rounds: self.reweight_rounds.unwrap_or(base.reweight_rounds),
            ..base
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and report the station placement.
    Place {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Write the placement (stations, positions, rates) as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Monte Carlo sweep over one scenario parameter, written as CSV.
    Sweep {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Swept parameter: num_gts, min_rate, backhaul, building_absorption,
        /// min_flight_height or building_height.
        #[arg(long)]
        param: SweepParameter,
        /// Values the parameter takes, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Trials per value.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Master seed; per-trial seeds derive from it.
        #[arg(long, default_value_t = 1)]
        master_seed: u64,
        /// Algorithms to run, comma-separated: gspa, kmeans, lower_bound,
        /// oracle.
        #[arg(long, value_delimiter = ',', default_value = "gspa,kmeans,lower_bound")]
        algorithms: Vec<Algorithm>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the backhaul lower bound on the station count.
    Bound {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exact minimum station count by subset enumeration (tiny grids only).
    Oracle {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Minimize the number of terminal–station connections at fixed
    /// stations (default: the stations GSPA deploys).
    MinConnections {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Station set as flight-grid indices; defaults to the GSPA
        /// placement.
        #[arg(long, value_delimiter = ',')]
        stations: Option<Vec<usize>>,
        /// Reweighting rounds of the connection-count surrogate.
        #[arg(long, default_value_t = 2)]
        lp_reweight_rounds: usize,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Maximize the number of terminals served at the demanded rate at
    /// fixed stations (default: the stations GSPA deploys).
    AllocateServed {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Station set as flight-grid indices; defaults to the GSPA
        /// placement.
        #[arg(long, value_delimiter = ',')]
        stations: Option<Vec<usize>>,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Precompute the terminal–candidate gain map of a scenario and write it
    /// in the plain-text exchange format.
    GainMap {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Output gain-map path.
        #[arg(long)]
        out: PathBuf,
        /// Override the terminal-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        // A reader that stopped consuming our output (e.g. `… | head`) is
        // not an error on our side.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::from(0),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_infeasibility() {
                2
            } else if e.is_input_error() {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Place {
            scenario,
            out,
            seed,
            solver,
        } => place(&scenario, out.as_deref(), seed, solver),
        Command::Sweep {
            scenario,
            param,
            values,
            trials,
            master_seed,
            algorithms,
            out,
        } => sweep(&scenario, param, values, trials, master_seed, &algorithms, &out),
        Command::Bound { scenario, seed } => bound(&scenario, seed),
        Command::Oracle { scenario, seed } => oracle(&scenario, seed),
        Command::MinConnections {
            scenario,
            stations,
            lp_reweight_rounds,
            seed,
            solver,
        } => connections(&scenario, stations, lp_reweight_rounds, seed, solver),
        Command::AllocateServed {
            scenario,
            stations,
            seed,
            solver,
        } => served(&scenario, stations, seed, solver),
        Command::GainMap { scenario, out, seed } => gain_map(&scenario, &out, seed),
    }
}

fn environment(path: &Path, seed: Option<u64>) -> Result<Environment> {
    let scenario = load_scenario(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    build_environment(&scenario, dir, seed)
}

fn place(path: &Path, out: Option<&Path>, seed: Option<u64>, flags: SolverFlags) -> Result<u8> {
    let env = environment(path, seed)?;
    let config = flags.apply(env.solver);
    let solution = gspa_solve(&env.placement_problem()?, &env.flight_grid, &config)?;

    outln!(
        "stations: {}   feasible: {}   converged: {}   iterations: {}",
        solution.active_columns.len(),
        solution.feasible,
        solution.converged,
        solution.iterations
    );
    outln!(
        "residuals: primal {:.3e}, dual {:.3e}",
        solution.primal_residual, solution.dual_residual
    );
    for (j, &col) in solution.active_columns.iter().enumerate() {
        let p = env.flight_grid[col];
        outln!(
            "  station {j}: grid {col} at ({:.1}, {:.1}, {:.1}) m, load {:.3e} bit/s",
            p[0],
            p[1],
            p[2],
            solution.rates.column(j).sum()
        );
    }
    if let Some(out) = out {
        let file = placement_file(&solution, &env.flight_grid);
        let text = toml::to_string_pretty(&file)
            .map_err(|e| Error::Invalid(format!("cannot serialize placement: {e}")))?;
        std::fs::write(out, text)?;
        outln!("placement written to {}", out.display());
    }
    Ok(if solution.converged { 0 } else { 4 })
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    path: &Path,
    param: SweepParameter,
    values: Vec<f64>,
    trials: usize,
    master_seed: u64,
    algorithms: &[Algorithm],
    out: &Path,
) -> Result<u8> {
    let scenario = load_scenario(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let spec = SweepSpec {
        parameter: param,
        values,
        trials,
        master_seed,
    };
    let result = run_sweep(&scenario, &spec, algorithms, dir)?;
    emit_csv(&result, out)?;
    outln!("{} records written to {}", result.records.len(), out.display());
    outln!("mean station count per ({param}, algorithm):");
    for (value, alg, mean) in &result.means {
        let alg = alg.to_string();
        if mean.is_nan() {
            outln!("  {value:>12}  {alg:<11}  (no feasible trial)");
        } else {
            outln!("  {value:>12}  {alg:<11}  {mean:.3}");
        }
    }
    Ok(0)
}

fn bound(path: &Path, seed: Option<u64>) -> Result<u8> {
    let env = environment(path, seed)?;
    let b = lower_bound(env.gts.len(), env.min_rate, &env.backhaul)?;
    outln!(
        "lower bound: {b} station(s) for {} terminals at {:.3e} bit/s",
        env.gts.len(),
        env.min_rate
    );
    Ok(0)
}

fn oracle(path: &Path, seed: Option<u64>) -> Result<u8> {
    let env = environment(path, seed)?;
    let res = brute_force_min_abs(&env.placement_problem()?)?;
    outln!(
        "exact minimum: {} station(s) at grid indices {:?} ({} subsets explored)",
        res.min_count, res.witness_columns, res.explored
    );
    Ok(0)
}

/// The station set the extension subcommands work on: explicit indices when
/// given, the GSPA placement otherwise.
fn station_set(
    env: &Environment,
    stations: Option<Vec<usize>>,
    flags: SolverFlags,
) -> Result<Vec<usize>> {
    match stations {
        Some(list) => {
            let g = env.flight_grid.len();
            for &col in &list {
                if col >= g {
                    return Err(Error::Invalid(format!(
                        "station index {col} out of range; the flight grid has {g} points"
                    )));
                }
            }
            if list.is_empty() {
                return Err(Error::Invalid("the station list must not be empty".into()));
            }
            Ok(list)
        }
        None => {
            let config = flags.apply(env.solver);
            let solution = gspa_solve(&env.placement_problem()?, &env.flight_grid, &config)?;
            Ok(solution.active_columns)
        }
    }
}

fn restrict_columns(env: &Environment, stations: &[usize]) -> (ndarray::Array2<f64>, Vec<f64>) {
    let m = env.gts.len();
    let n = stations.len();
    let mut capacity = ndarray::Array2::<f64>::zeros((m, n));
    for (j, &col) in stations.iter().enumerate() {
        for row in 0..m {
            capacity[[row, j]] = env.capacity[[row, col]];
        }
    }
    let backhaul = stations.iter().map(|&c| env.backhaul[c]).collect();
    (capacity, backhaul)
}

fn connections(
    path: &Path,
    stations: Option<Vec<usize>>,
    lp_reweight_rounds: usize,
    seed: Option<u64>,
    flags: SolverFlags,
) -> Result<u8> {
    let env = environment(path, seed)?;
    let stations = station_set(&env, stations, flags)?;
    let (capacity, backhaul) = restrict_columns(&env, &stations);
    let (rates, count) = min_connections(&capacity, &backhaul, env.min_rate, lp_reweight_rounds)?;
    outln!(
        "{count} connection(s) serve {} terminals over {} station(s)",
        env.gts.len(),
        stations.len()
    );
    for (j, &col) in stations.iter().enumerate() {
        let users = rates
            .column(j)
            .iter()
            .filter(|&&r| r > 1e-9 * env.min_rate)
            .count();
        outln!("  station at grid {col}: {users} terminal(s), load {:.3e} bit/s", rates.column(j).sum());
    }
    Ok(0)
}

fn served(
    path: &Path,
    stations: Option<Vec<usize>>,
    seed: Option<u64>,
    flags: SolverFlags,
) -> Result<u8> {
    let env = environment(path, seed)?;
    let stations = station_set(&env, stations, flags)?;
    let (capacity, backhaul) = restrict_columns(&env, &stations);
    let (rates, served) = max_served_users(&capacity, &backhaul, env.min_rate)?;
    outln!(
        "{served} of {} terminal(s) served at {:.3e} bit/s over {} station(s)",
        env.gts.len(),
        env.min_rate,
        stations.len()
    );
    let shortfall: f64 = (0..env.gts.len())
        .map(|m| (env.min_rate - rates.row(m).sum()).max(0.0))
        .sum();
    outln!("total rate shortfall: {shortfall:.3e} bit/s");
    Ok(0)
}

fn gain_map(path: &Path, out: &Path, seed: Option<u64>) -> Result<u8> {
    let scenario = load_scenario(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let env = build_environment(&scenario, dir, seed)?;

    use skyplace::geometry::{voxel_grid_over, voxelize_slf};
    use skyplace::harness::ChannelSpec;
    use skyplace::propagation::load_gain_map;
    let map = match &scenario.channel {
        ChannelSpec::Tomographic => {
            let grid = voxel_grid_over(&scenario.region, scenario.slf_grid.dims)?;
            let slf = voxelize_slf(&scenario.buildings, &grid)?;
            build_gain_map(
                &env.gts,
                &env.flight_grid,
                &ChannelModel::Tomographic { slf: &slf },
                &scenario.radio,
            )?
        }
        ChannelSpec::FreeSpace => build_gain_map(
            &env.gts,
            &env.flight_grid,
            &ChannelModel::FreeSpace,
            &scenario.radio,
        )?,
        ChannelSpec::Alhourani { params } => build_gain_map(
            &env.gts,
            &env.flight_grid,
            &ChannelModel::AlHourani {
                params: params.params(),
            },
            &scenario.radio,
        )?,
        ChannelSpec::Ingested { path } => load_gain_map(&dir.join(path))?,
    };
    save_gain_map(&map, out)?;
    outln!(
        "{}×{} gain map written to {}",
        env.gts.len(),
        env.flight_grid.len(),
        out.display()
    );
    Ok(0)
}
