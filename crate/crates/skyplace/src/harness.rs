//! Scenario files, Monte Carlo sweeps and CSV emission.
//!
//! A *scenario* is a versioned TOML description of one experiment: the
//! region and its buildings, the voxel and flight grids, the radio link
//! budget, the channel model, the per-terminal rate demand, the backhaul
//! model and the ground-terminal source. [`build_environment`] turns a
//! scenario into the numerical inputs of the solvers; [`run_sweep`] repeats
//! that over a swept parameter and seeded Monte Carlo trials, and
//! [`emit_csv`] serializes the records for plotting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{brute_force_min_abs, kmeans_placement, lower_bound};
use crate::error::{Error, Result};
use crate::geometry::{build_flight_grid, voxel_grid_over, voxelize_slf, Building, Point3, Region};
use crate::propagation::{
    backhaul_vector, build_capacity_matrix, load_gain_map, AlHouraniParams, BackhaulModel,
    ChannelModel, RadioParams,
};
use crate::solver_core::{gspa_solve, AdmmConfig, PlacementProblem, PlacementSolution};

/// Scenario schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Channel model selector of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Free-space loss plus shadowing integrated over the voxelized
    /// buildings.
    Tomographic,
    /// Pure free-space loss.
    FreeSpace,
    /// Elevation-angle statistical model with a named parameter preset.
    Alhourani {
        /// Environment preset selecting the sigmoid/excess-loss parameters.
        params: AlhouraniPreset,
    },
    /// Gains read verbatim from a file (path relative to the scenario file).
    Ingested {
        /// Gain-map file in the plain-text exchange format.
        path: String,
    },
}

/// Named parameter sets of the elevation-angle model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlhouraniPreset {
    /// Dense European-style urban environment.
    DenseUrban,
    /// High-rise urban environment.
    HighriseUrban,
}

impl AlhouraniPreset {
    /// The numeric parameters of the preset.
    pub fn params(self) -> AlHouraniParams {
        match self {
            AlhouraniPreset::DenseUrban => AlHouraniParams::dense_urban(),
            AlhouraniPreset::HighriseUrban => AlHouraniParams::highrise_urban(),
        }
    }
}

/// Backhaul model selector of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackhaulSpec {
    /// Every candidate position gets the same backhaul rate.
    Constant {
        /// Common backhaul rate, bits/s.
        rate_bps: f64,
    },
    /// Backhaul gains from a `1 × G` gain-map file (path relative to the
    /// scenario file), converted to rates with the scenario's radio
    /// parameters.
    GainFile {
        /// Gain-map file with one row, one column per flight-grid point.
        path: String,
    },
}

/// Ground-terminal source of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GtSpec {
    /// Draw `count` positions uniformly at random, without replacement, from
    /// the ground candidate grid (outside buildings).
    Sampled {
        /// Number of terminals.
        count: usize,
        /// Seed of the draw.
        seed: u64,
    },
    /// Explicit terminal positions.
    Explicit {
        /// Terminal positions in metres.
        positions: Vec<Point3>,
    },
}

/// Optional solver overrides in a scenario file; unset fields keep the
/// [`AdmmConfig`] defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    /// ADMM step size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Absolute stopping tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_abs: Option<f64>,
    /// Relative stopping tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_rel: Option<f64>,
    /// Iteration cap per reweighting round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Number of reweighting rounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reweight_rounds: Option<usize>,
    /// Activation threshold as a fraction of the minimum rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_threshold: Option<f64>,
}

impl SolverOverrides {
    /// `base` with every set field replaced.
    pub fn apply(&self, base: AdmmConfig) -> AdmmConfig {
        AdmmConfig {
            rho: self.rho.unwrap_or(base.rho),
            eps_abs: self.eps_abs.unwrap_or(base.eps_abs),
            eps_rel: self.eps_rel.unwrap_or(base.eps_rel),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            reweight_rounds: self.reweight_rounds.unwrap_or(base.reweight_rounds),
            activation_threshold: self
                .activation_threshold
                .unwrap_or(base.activation_threshold),
            ..base
        }
    }
}

/// Grid dimensions of the voxelized loss field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlfGridSpec {
    /// Voxel counts per axis.
    pub dims: [usize; 3],
}

/// Flight-grid construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightGridSpec {
    /// Lattice points per axis before filtering.
    pub dims: [usize; 3],
    /// Minimum allowed flight height in metres.
    pub min_height_m: f64,
}

/// One complete experiment description; see the crate README for the file
/// format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// File format version; must equal [`SCHEMA_VERSION`].
    pub schema_version: u32,
    /// Rate every terminal must receive, bits/s. (Scalar fields precede the
    /// table-valued ones so the TOML serializer can emit them in order.)
    pub min_rate_bps: f64,
    /// Simulation region.
    pub region: Region,
    /// Voxel grid of the loss field.
    pub slf_grid: SlfGridSpec,
    /// Flight grid of candidate station positions.
    pub flight_grid: FlightGridSpec,
    /// Link budget of the access channel.
    pub radio: RadioParams,
    /// Channel model selector.
    pub channel: ChannelSpec,
    /// Backhaul model selector.
    pub backhaul: BackhaulSpec,
    /// Ground-terminal source.
    pub gts: GtSpec,
    /// Solver overrides.
    #[serde(default)]
    pub solver: SolverOverrides,
    /// Buildings inside the region.
    #[serde(default)]
    pub buildings: Vec<Building>,
}

impl Scenario {
    /// Validates field values and (given the directory of the scenario
    /// file) the existence of referenced files.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "schema_version {} is not supported; this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.region.validate()?;
        for b in &self.buildings {
            b.validate()?;
        }
        if self.slf_grid.dims.iter().any(|&d| d == 0)
            || self.flight_grid.dims.iter().any(|&d| d == 0)
        {
            return Err(Error::Scenario("grid dims must all be at least 1".into()));
        }
        self.radio.validate()?;
        if !(self.min_rate_bps.is_finite() && self.min_rate_bps >= 0.0) {
            return Err(Error::Scenario(format!(
                "min_rate_bps must be finite and non-negative, got {}",
                self.min_rate_bps
            )));
        }
        match &self.gts {
            GtSpec::Sampled { count, .. } if *count == 0 => {
                return Err(Error::Scenario("gts.count must be at least 1".into()));
            }
            GtSpec::Explicit { positions } if positions.is_empty() => {
                return Err(Error::Scenario("gts.positions must not be empty".into()));
            }
            _ => {}
        }
        for path in [self.channel_file(), self.backhaul_file()].into_iter().flatten() {
            let full = base_dir.join(path);
            if !full.is_file() {
                return Err(Error::Scenario(format!(
                    "referenced file {} does not exist",
                    full.display()
                )));
            }
        }
        Ok(())
    }

    fn channel_file(&self) -> Option<&str> {
        match &self.channel {
            ChannelSpec::Ingested { path } => Some(path),
            _ => None,
        }
    }

    fn backhaul_file(&self) -> Option<&str> {
        match &self.backhaul {
            BackhaulSpec::GainFile { path } => Some(path),
            _ => None,
        }
    }
}

/// Loads and validates a scenario file; referenced files are resolved
/// relative to the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let scenario: Scenario = toml::from_str(&text)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    scenario.validate(dir)?;
    Ok(scenario)
}

/// Writes a scenario as TOML; [`load_scenario`] recovers it field-for-field.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(scenario)
        .map_err(|e| Error::Scenario(format!("cannot serialize scenario: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Ground candidate positions of a scenario: the x–y lattice of the loss
/// field's voxel centres at ground height, excluding points inside a
/// building footprint, in x-fastest canonical order.
pub fn ground_candidates(scenario: &Scenario) -> Result<Vec<Point3>> {
    let grid = voxel_grid_over(&scenario.region, scenario.slf_grid.dims)?;
    let z = scenario.region.min[2];
    let mut candidates = Vec::new();
    for j in 0..grid.dims[1] {
        for i in 0..grid.dims[0] {
            let p = grid.point(i, j, 0)?;
            let p = [p[0], p[1], z];
            if scenario
                .buildings
                .iter()
                .any(|b| b.footprint_contains(p[0], p[1]))
            {
                continue;
            }
            candidates.push(p);
        }
    }
    if candidates.is_empty() {
        return Err(Error::Scenario(
            "no ground positions outside buildings to sample terminals from".into(),
        ));
    }
    Ok(candidates)
}

/// Draws `count` ground-terminal positions uniformly at random without
/// replacement from the scenario's ground candidates, deterministically in
/// `seed`. The draw is returned in canonical (x-fastest) order.
pub fn sample_gts(scenario: &Scenario, count: usize, seed: u64) -> Result<Vec<Point3>> {
    let candidates = ground_candidates(scenario)?;
    if count > candidates.len() {
        return Err(Error::Scenario(format!(
            "cannot sample {count} terminals from {} ground candidates",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, candidates.len(), count).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| candidates[i]).collect())
}

/// Numerical inputs of one experiment, derived from a scenario.
#[derive(Debug, Clone)]
pub struct Environment {
    /// Ground-terminal positions.
    pub gts: Vec<Point3>,
    /// Candidate station positions.
    pub flight_grid: Vec<Point3>,
    /// `M × G` link capacities, bits/s.
    pub capacity: Array2<f64>,
    /// Per-candidate backhaul rates, bits/s.
    pub backhaul: Vec<f64>,
    /// Demanded per-terminal rate, bits/s.
    pub min_rate: f64,
    /// Solver configuration with the scenario's overrides applied.
    pub solver: AdmmConfig,
}

impl Environment {
    /// The unit-weight placement instance of this environment.
    pub fn placement_problem(&self) -> Result<PlacementProblem> {
        PlacementProblem::new(self.capacity.clone(), self.backhaul.clone(), self.min_rate)
    }
}

/// Builds the flight grid, terminals, capacity matrix and backhaul vector of
/// a scenario. `base_dir` resolves referenced files; `seed_override`
/// replaces the seed of a sampled GT source (used by sweep trials).
pub fn build_environment(
    scenario: &Scenario,
    base_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Environment> {
    scenario.validate(base_dir)?;
    let flight_grid = build_flight_grid(
        &scenario.region,
        scenario.flight_grid.dims,
        scenario.flight_grid.min_height_m,
        &scenario.buildings,
    )?;
    let gts = match &scenario.gts {
        GtSpec::Sampled { count, seed } => {
            sample_gts(scenario, *count, seed_override.unwrap_or(*seed))?
        }
        GtSpec::Explicit { positions } => positions.clone(),
    };

    let capacity = match &scenario.channel {
        ChannelSpec::Tomographic => {
            let grid = voxel_grid_over(&scenario.region, scenario.slf_grid.dims)?;
            let slf = voxelize_slf(&scenario.buildings, &grid)?;
            build_capacity_matrix(
                &gts,
                &flight_grid,
                &ChannelModel::Tomographic { slf: &slf },
                &scenario.radio,
            )?
        }
        ChannelSpec::FreeSpace => build_capacity_matrix(
            &gts,
            &flight_grid,
            &ChannelModel::FreeSpace,
            &scenario.radio,
        )?,
        ChannelSpec::Alhourani { params } => build_capacity_matrix(
            &gts,
            &flight_grid,
            &ChannelModel::AlHourani {
                params: params.params(),
            },
            &scenario.radio,
        )?,
        ChannelSpec::Ingested { path } => {
            let map = load_gain_map(&base_dir.join(path))?;
            build_capacity_matrix(
                &gts,
                &flight_grid,
                &ChannelModel::Ingested { map: &map },
                &scenario.radio,
            )?
        }
    };

    let backhaul = match &scenario.backhaul {
        BackhaulSpec::Constant { rate_bps } => backhaul_vector(
            &flight_grid,
            &BackhaulModel::Constant { rate_bps: *rate_bps },
        )?,
        BackhaulSpec::GainFile { path } => {
            let map = load_gain_map(&base_dir.join(path))?;
            backhaul_vector(
                &flight_grid,
                &BackhaulModel::GainMap {
                    map: &map,
                    params: &scenario.radio,
                },
            )?
        }
    };

    Ok(Environment {
        gts,
        flight_grid,
        capacity,
        backhaul,
        min_rate: scenario.min_rate_bps,
        solver: scenario.solver.apply(AdmmConfig::default()),
    })
}

/// The scenario parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Number of sampled terminals.
    NumGts,
    /// Demanded per-terminal rate, bits/s.
    MinRate,
    /// Constant backhaul rate, bits/s.
    Backhaul,
    /// Absorption of every building, dB/m.
    BuildingAbsorption,
    /// Minimum flight height, m.
    MinFlightHeight,
    /// Height of every building, m.
    BuildingHeight,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepParameter::NumGts => "num_gts",
            SweepParameter::MinRate => "min_rate",
            SweepParameter::Backhaul => "backhaul",
            SweepParameter::BuildingAbsorption => "building_absorption",
            SweepParameter::MinFlightHeight => "min_flight_height",
            SweepParameter::BuildingHeight => "building_height",
        };
        f.write_str(s)
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num_gts" => Ok(SweepParameter::NumGts),
            "min_rate" => Ok(SweepParameter::MinRate),
            "backhaul" => Ok(SweepParameter::Backhaul),
            "building_absorption" => Ok(SweepParameter::BuildingAbsorption),
            "min_flight_height" => Ok(SweepParameter::MinFlightHeight),
            "building_height" => Ok(SweepParameter::BuildingHeight),
            other => Err(Error::Invalid(format!(
                "unknown sweep parameter {other:?}; expected num_gts, min_rate, backhaul, \
                 building_absorption, min_flight_height or building_height"
            ))),
        }
    }
}

/// A Monte Carlo sweep: one scenario parameter, the values it takes, and
/// seeded repetitions per value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Swept parameter.
    pub parameter: SweepParameter,
    /// Values the parameter takes, in output order.
    pub values: Vec<f64>,
    /// Trials per value.
    pub trials: usize,
    /// Master seed; per-trial seeds are derived from it.
    pub master_seed: u64,
}

impl SweepSpec {
    /// Checks the value list and trial count.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Invalid("sweep needs at least one value".into()));
        }
        if self.trials == 0 {
            return Err(Error::Invalid("sweep needs at least one trial".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("sweep values must be finite".into()));
        }
        Ok(())
    }
}

/// Algorithms a sweep can run at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// The group-sparse ADMM placement solver.
    Gspa,
    /// The K-means clustering baseline.
    Kmeans,
    /// The backhaul lower bound (a count, not a placement).
    LowerBound,
    /// The brute-force exact oracle (tiny instances only).
    Oracle,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Algorithm::Gspa => "gspa",
            Algorithm::Kmeans => "kmeans",
            Algorithm::LowerBound => "lower_bound",
            Algorithm::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gspa" => Ok(Algorithm::Gspa),
            "kmeans" => Ok(Algorithm::Kmeans),
            "lower_bound" => Ok(Algorithm::LowerBound),
            "oracle" => Ok(Algorithm::Oracle),
            other => Err(Error::Invalid(format!(
                "unknown algorithm {other:?}; expected gspa, kmeans, lower_bound or oracle"
            ))),
        }
    }
}

/// One sweep measurement: one algorithm at one (value, trial) point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    /// Value of the swept parameter.
    pub param_value: f64,
    /// Algorithm that produced the row.
    pub algorithm: Algorithm,
    /// Trial index, `0 .. trials`.
    pub trial: usize,
    /// Station count; `None` when the trial was infeasible for this
    /// algorithm.
    pub abs_count: Option<usize>,
    /// Whether the algorithm produced a verified-feasible placement (for
    /// `lower_bound`, whether the bound exists).
    pub feasible: bool,
    /// Backhaul lower bound of the trial instance.
    pub lower_bound: usize,
    /// Wall-clock solve time, milliseconds.
    pub wall_ms: f64,
}

/// All records of a sweep plus per-(value, algorithm) means.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sweep that produced the records.
    pub spec: SweepSpec,
    /// One record per (value, trial, algorithm), ordered by value index,
    /// then trial, then the algorithm order given to [`run_sweep`].
    pub records: Vec<SweepRecord>,
    /// Mean station count over the feasible trials of each (value,
    /// algorithm) pair, in the same order as the values; `NaN` when no
    /// trial was feasible.
    pub means: Vec<(f64, Algorithm, f64)>,
}

/// SplitMix64 step, used to derive independent per-trial seeds.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial_idx` at value index `value_idx`: a SplitMix64 chain
/// over the master seed and both indices, so trials are decorrelated and
/// independent of execution order.
pub fn trial_seed(master_seed: u64, value_idx: usize, trial_idx: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ value_idx as u64) ^ trial_idx as u64)
}

/// Returns `scenario` with the swept parameter set to `value`.
pub fn apply_parameter(
    scenario: &Scenario,
    parameter: SweepParameter,
    value: f64,
) -> Result<Scenario> {
    let mut s = scenario.clone();
    match parameter {
        SweepParameter::NumGts => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Invalid(format!(
                    "num_gts values must be positive integers, got {value}"
                )));
            }
            match &mut s.gts {
                GtSpec::Sampled { count, .. } => *count = value as usize,
                GtSpec::Explicit { .. } => {
                    return Err(Error::Invalid(
                        "cannot sweep num_gts over explicit terminal positions".into(),
                    ));
                }
            }
        }
        SweepParameter::MinRate => s.min_rate_bps = value,
        SweepParameter::Backhaul => s.backhaul = BackhaulSpec::Constant { rate_bps: value },
        SweepParameter::BuildingAbsorption => {
            for b in &mut s.buildings {
                b.absorption_db_per_m = value;
            }
        }
        SweepParameter::MinFlightHeight => s.flight_grid.min_height_m = value,
        SweepParameter::BuildingHeight => {
            for b in &mut s.buildings {
                b.height = value;
            }
        }
    }
    Ok(s)
}

/// Runs every algorithm on every (value, trial) point of the sweep. Trials
/// run in parallel; records are assembled in deterministic order afterwards.
/// Infeasibility of a single trial is recorded in its rows, not an error;
/// anything else (bad input, solver breakdown) aborts the sweep.
pub fn run_sweep(
    scenario: &Scenario,
    sweep: &SweepSpec,
    algorithms: &[Algorithm],
    base_dir: &Path,
) -> Result<SweepResult> {
    sweep.validate()?;
    if algorithms.is_empty() {
        return Err(Error::Invalid("sweep needs at least one algorithm".into()));
    }

    let points: Vec<(usize, usize)> = (0..sweep.values.len())
        .flat_map(|vi| (0..sweep.trials).map(move |ti| (vi, ti)))
        .collect();
    let per_point: Vec<Vec<SweepRecord>> = points
        .par_iter()
        .map(|&(vi, ti)| run_trial(scenario, sweep, algorithms, base_dir, vi, ti))
        .collect::<Result<_>>()?;
    let records: Vec<SweepRecord> = per_point.into_iter().flatten().collect();

    // Records are laid out (value-major, then trial, then algorithm), so the
    // row of (vi, ti, ai) sits at ((vi·trials + ti)·|algs| + ai); grouping by
    // index keeps duplicate sweep values separate.
    let mut means = Vec::with_capacity(sweep.values.len() * algorithms.len());
    for (vi, &value) in sweep.values.iter().enumerate() {
        for (ai, &alg) in algorithms.iter().enumerate() {
            let counts: Vec<f64> = (0..sweep.trials)
                .map(|ti| &records[(vi * sweep.trials + ti) * algorithms.len() + ai])
                .filter(|r| r.feasible)
                .filter_map(|r| r.abs_count.map(|c| c as f64))
                .collect();
            let mean = if counts.is_empty() {
                f64::NAN
            } else {
                counts.iter().sum::<f64>() / counts.len() as f64
            };
            means.push((value, alg, mean));
        }
    }

    Ok(SweepResult {
        spec: sweep.clone(),
        records,
        means,
    })
}

/// All algorithm rows of one (value, trial) point.
fn run_trial(
    scenario: &Scenario,
    sweep: &SweepSpec,
    algorithms: &[Algorithm],
    base_dir: &Path,
    vi: usize,
    ti: usize,
) -> Result<Vec<SweepRecord>> {
    let value = sweep.values[vi];
    let seed = trial_seed(sweep.master_seed, vi, ti);
    let trial_scenario = apply_parameter(scenario, sweep.parameter, value)?;

    let infeasible_rows = |wall_ms: f64| {
        algorithms
            .iter()
            .map(|&alg| SweepRecord {
                param_value: value,
                algorithm: alg,
                trial: ti,
                abs_count: None,
                feasible: false,
                lower_bound: 0,
                wall_ms,
            })
            .collect::<Vec<_>>()
    };

    let start = Instant::now();
    let env = match build_environment(&trial_scenario, base_dir, Some(seed)) {
        Ok(env) => env,
        Err(e) if e.is_infeasibility() => {
            return Ok(infeasible_rows(start.elapsed().as_secs_f64() * 1e3));
        }
        Err(e) => return Err(e),
    };
    let bound = match lower_bound(env.gts.len(), env.min_rate, &env.backhaul) {
        Ok(b) => b,
        Err(Error::InfiniteLowerBound) => {
            return Ok(infeasible_rows(start.elapsed().as_secs_f64() * 1e3));
        }
        Err(e) => return Err(e),
    };

    let mut rows = Vec::with_capacity(algorithms.len());
    for &alg in algorithms {
        let start = Instant::now();
        let outcome: Result<(Option<usize>, bool)> = match alg {
            Algorithm::Gspa => env.placement_problem().and_then(|p| {
                gspa_solve(&p, &env.flight_grid, &env.solver)
                    .map(|sol| (Some(sol.active_columns.len()), sol.feasible))
            }),
            Algorithm::Kmeans => kmeans_placement(
                &env.gts,
                &env.flight_grid,
                |m, g| env.capacity[[m, g]],
                &env.backhaul,
                env.min_rate,
                env.gts.len(),
                seed,
            )
            .map(|sol| (Some(sol.active_columns.len()), sol.feasible)),
            Algorithm::LowerBound => Ok((Some(bound), true)),
            Algorithm::Oracle => env
                .placement_problem()
                .and_then(|p| brute_force_min_abs(&p))
                .map(|res| (Some(res.min_count), true)),
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let (abs_count, feasible) = match outcome {
            Ok(pair) => pair,
            Err(e) if e.is_infeasibility() => (None, false),
            Err(e) => return Err(e),
        };
        rows.push(SweepRecord {
            param_value: value,
            algorithm: alg,
            trial: ti,
            abs_count,
            feasible,
            lower_bound: bound,
            wall_ms,
        });
    }
    Ok(rows)
}

/// CSV header of [`emit_csv`].
pub const CSV_HEADER: &str = "param_value,algorithm,trial,abs_count,feasible,lower_bound,wall_ms";

/// Formats the sweep records as CSV (LF line endings). All columns except
/// `wall_ms` are deterministic for a fixed scenario and master seed.
pub fn format_csv(result: &SweepResult) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &result.records {
        let count = r
            .abs_count
            .map(|c| c.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            r.param_value, r.algorithm, r.trial, count, r.feasible, r.lower_bound, r.wall_ms
        ));
    }
    out
}

/// Writes [`format_csv`] to `path`.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, format_csv(result))?;
    Ok(())
}

/// Parses CSV text produced by [`format_csv`] back into records.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}"),
            });
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 7 comma-separated fields, got {}", fields.len()),
            });
        }
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        records.push(SweepRecord {
            param_value: fields[0]
                .parse()
                .map_err(|e| err(format!("param_value: {e}")))?,
            algorithm: fields[1].parse()?,
            trial: fields[2].parse().map_err(|e| err(format!("trial: {e}")))?,
            abs_count: if fields[3].is_empty() {
                None
            } else {
                Some(fields[3].parse().map_err(|e| err(format!("abs_count: {e}")))?)
            },
            feasible: fields[4]
                .parse()
                .map_err(|e| err(format!("feasible: {e}")))?,
            lower_bound: fields[5]
                .parse()
                .map_err(|e| err(format!("lower_bound: {e}")))?,
            wall_ms: fields[6].parse().map_err(|e| err(format!("wall_ms: {e}")))?,
        });
    }
    Ok(records)
}

/// A placement rendered for the `place` subcommand: the chosen stations and
/// the rate each terminal draws from each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementFile {
    /// Number of deployed stations.
    pub station_count: usize,
    /// Whether the allocation passed the exact feasibility check.
    pub feasible: bool,
    /// Whether the solver met its stopping criterion.
    pub converged: bool,
    /// ADMM sweeps used.
    pub iterations: usize,
    /// Deployed stations.
    pub stations: Vec<StationEntry>,
}

/// One deployed station in a [`PlacementFile`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationEntry {
    /// Flight-grid column of the station.
    pub grid_index: usize,
    /// Station position in metres.
    pub position: Point3,
    /// Rate delivered to each terminal, bits/s (length `M`).
    pub rates_bps: Vec<f64>,
}

/// Renders a solution against the flight grid it was computed on.
pub fn placement_file(solution: &PlacementSolution, flight_grid: &[Point3]) -> PlacementFile {
    let stations = solution
        .active_columns
        .iter()
        .enumerate()
        .map(|(j, &col)| StationEntry {
            grid_index: col,
            position: flight_grid[col],
            rates_bps: solution.rates.column(j).to_vec(),
        })
        .collect();
    PlacementFile {
        station_count: solution.active_columns.len(),
        feasible: solution.feasible,
        converged: solution.converged,
        iterations: solution.iterations,
        stations,
    }
}
