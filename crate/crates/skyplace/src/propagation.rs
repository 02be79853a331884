//! Channel-gain prediction and capacity-matrix construction.
//!
//! Three gain models are provided, all returning a channel gain `γ` in dB
//! (negative for a lossy link):
//!
//! * **Tomographic**: free-space loss plus a shadowing term obtained by
//!   integrating a voxelised spatial loss field (dB/m) along the straight
//!   line between the endpoints — see [`tomographic_integral`].
//! * **Free space**: `20·log10(λ / (4π d))`.
//! * **Elevation-angle empirical model**: free-space loss plus an excess
//!   loss that interpolates between line-of-sight and non-line-of-sight
//!   values with a sigmoid probability in the elevation angle.
//!
//! Gains are converted to link capacities in bits/s by [`capacity`], and
//! whole ground-terminal × candidate-position matrices are assembled by
//! [`build_capacity_matrix`]. Dense gain matrices can also be exchanged with
//! external tools (e.g. a ray tracer) through a plain-text file format — see
//! [`load_gain_map`].

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, sub, Grid3, Point3};

/// Speed of light in vacuum, m/s; used to derive the carrier wavelength.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Piecewise-constant spatial loss field: a non-negative absorption value in
/// dB/m for every voxel of a regular 3D grid. Voxel `(i, j, k)` is centred on
/// the grid point `(i, j, k)` and extends half a `spacing` in each direction;
/// border voxels extend to infinity so the field is defined everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLossField {
    /// Voxel-centre grid; `grid.dims` matches the tensor shape.
    pub grid: Grid3,
    tensor: Array3<f64>,
}

impl SpatialLossField {
    /// Validates that tensor shape matches the grid and all entries are
    /// finite and non-negative.
    pub fn new(grid: Grid3, tensor: Array3<f64>) -> Result<Self> {
        if tensor.shape() != grid.dims {
            return Err(Error::Invalid(format!(
                "loss tensor shape {:?} does not match grid dims {:?}",
                tensor.shape(),
                grid.dims
            )));
        }
        if tensor.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(
                "loss tensor entries must be finite and non-negative".into(),
            ));
        }
        Ok(SpatialLossField { grid, tensor })
    }

    /// Field with the same value in every voxel.
    pub fn uniform(grid: Grid3, value: f64) -> Result<Self> {
        Self::new(grid, Array3::from_elem(grid.dims, value))
    }

    /// Absorption of voxel `(i, j, k)` in dB/m.
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.tensor[[i, j, k]]
    }

    /// The full voxel tensor.
    pub fn tensor(&self) -> &Array3<f64> {
        &self.tensor
    }

    /// Voxel lookup with indices clamped to the grid, implementing the
    /// border-voxels-extend-to-infinity convention.
    fn value_clamped(&self, idx: [i64; 3]) -> f64 {
        let c = |v: i64, n: usize| (v.max(0) as usize).min(n - 1);
        self.tensor[[
            c(idx[0], self.grid.dims[0]),
            c(idx[1], self.grid.dims[1]),
            c(idx[2], self.grid.dims[2]),
        ]]
    }
}

/// Link-budget parameters shared by all channel models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Carrier frequency in Hz; the wavelength is derived from it.
    pub carrier_hz: f64,
    /// Channel bandwidth `W` in Hz.
    pub bandwidth_hz: f64,
    /// Transmit power in dBm.
    pub tx_power_dbm: f64,
    /// Noise-plus-interference power in dBm.
    pub noise_interference_dbm: f64,
}

impl RadioParams {
    /// Checks positivity of carrier and bandwidth and finiteness of powers.
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::Invalid(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_hz
            )));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Invalid(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_interference_dbm.is_finite() {
            return Err(Error::Invalid(
                "transmit and noise powers must be finite dBm values".into(),
            ));
        }
        Ok(())
    }

    /// Carrier wavelength `λ = c / f` in metres.
    pub fn lambda_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_S / self.carrier_hz
    }
}

impl Default for RadioParams {
    /// 2.4 GHz carrier, 20 MHz bandwidth, 20 dBm transmit power and
    /// −96 dBm noise-plus-interference floor.
    fn default() -> Self {
        RadioParams {
            carrier_hz: 2.4e9,
            bandwidth_hz: 20e6,
            tx_power_dbm: 20.0,
            noise_interference_dbm: -96.0,
        }
    }
}

/// Parameters of the empirical elevation-angle air-to-ground model: the
/// line-of-sight probability is `1 / (1 + a·exp(−b(θ − a)))` with `θ` the
/// elevation angle in degrees, and the excess losses `η` are added on top of
/// free-space loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlHouraniParams {
    /// Sigmoid offset parameter (also appears inside the exponent), unitless.
    pub a: f64,
    /// Sigmoid steepness parameter, 1/degree; must be positive.
    pub b: f64,
    /// Mean excess loss on line-of-sight links, dB.
    pub eta_los_db: f64,
    /// Mean excess loss on non-line-of-sight links, dB.
    pub eta_nlos_db: f64,
}

impl AlHouraniParams {
    /// Standard parameter set for a dense-urban environment.
    pub fn dense_urban() -> Self {
        AlHouraniParams {
            a: 12.08,
            b: 0.11,
            eta_los_db: 1.6,
            eta_nlos_db: 23.0,
        }
    }

    /// Standard parameter set for a high-rise-urban environment.
    pub fn highrise_urban() -> Self {
        AlHouraniParams {
            a: 27.23,
            b: 0.08,
            eta_los_db: 2.3,
            eta_nlos_db: 34.0,
        }
    }

    /// Checks sigmoid steepness positivity and finiteness of all fields.
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Invalid(format!(
                "elevation-model steepness b must be positive, got {}",
                self.b
            )));
        }
        if !self.a.is_finite() || !self.eta_los_db.is_finite() || !self.eta_nlos_db.is_finite() {
            return Err(Error::Invalid(
                "elevation-model parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Line-of-sight probability at elevation `theta_deg` degrees.
    pub fn p_los(&self, theta_deg: f64) -> f64 {
        1.0 / (1.0 + self.a * (-self.b * (theta_deg - self.a)).exp())
    }
}

/// How the gain matrix entries of a [`GainMap`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    /// Free-space loss plus tomographic shadowing from a loss field.
    Tomographic,
    /// Pure free-space loss.
    FreeSpace,
    /// Elevation-angle empirical model.
    AlHourani,
    /// Loaded from an external file (e.g. produced by a ray tracer).
    Ingested,
}

/// Dense matrix of channel gains in dB: entry `(m, g)` is the gain from
/// ground terminal `m` to candidate position `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMap {
    /// `M × G` gain matrix, dB. All entries finite.
    pub gains: Array2<f64>,
    /// Provenance of the entries.
    pub source: GainSource,
}

impl GainMap {
    /// Validates finiteness of all entries.
    pub fn new(gains: Array2<f64>, source: GainSource) -> Result<Self> {
        if gains.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("gain map entries must be finite".into()));
        }
        Ok(GainMap { gains, source })
    }
}

/// Channel model used to predict the gain of a single link.
#[derive(Debug, Clone, Copy)]
pub enum ChannelModel<'a> {
    /// Free-space loss plus shadowing integrated over `slf`.
    Tomographic {
        /// Loss field the shadowing term integrates over.
        slf: &'a SpatialLossField,
    },
    /// Pure free-space loss.
    FreeSpace,
    /// Elevation-angle empirical model with the given parameters.
    AlHourani {
        /// Sigmoid and excess-loss parameters.
        params: AlHouraniParams,
    },
    /// Precomputed gains, used verbatim (positions are ignored).
    Ingested {
        /// The precomputed gain matrix; dimensions must match the request.
        map: &'a GainMap,
    },
}

impl ChannelModel<'_> {
    /// Provenance tag for gain maps built with this model.
    pub fn source(&self) -> GainSource {
        match self {
            ChannelModel::Tomographic { .. } => GainSource::Tomographic,
            ChannelModel::FreeSpace => GainSource::FreeSpace,
            ChannelModel::AlHourani { .. } => GainSource::AlHourani,
            ChannelModel::Ingested { .. } => GainSource::Ingested,
        }
    }
}

/// Shadowing term `ξ(x1, x2)` in dB: the line integral of the piecewise-
/// constant loss field along the segment from `x1` to `x2`, divided by
/// `‖x2 − x1‖^{1/2}`.
///
/// The traversal visits voxels in the order the segment crosses them,
/// accumulating `(t_i − t_{i−1}) · L[voxel_i]` over the crossing parameters
/// `t ∈ [0, 1]`, and finally scales by `‖x2 − x1‖^{1/2}`. Segment endpoints
/// may lie outside the grid: voxel indices are clamped, so border voxels
/// extend to infinity and the result stays continuous in both endpoints.
/// A zero-length segment integrates to `0`.
pub fn tomographic_integral(x1: Point3, x2: Point3, slf: &SpatialLossField) -> f64 {
    tomographic_integral_with_crossings(x1, x2, slf).0
}

/// [`tomographic_integral`] together with the number of voxel boundaries
/// crossed, exposed so callers can check the linear-in-grid-size runtime of
/// the traversal.
pub fn tomographic_integral_with_crossings(
    x1: Point3,
    x2: Point3,
    slf: &SpatialLossField,
) -> (f64, usize) {
    let length = dist(x1, x2);
    if length == 0.0 {
        return (0.0, 0);
    }
    let origin = slf.grid.origin;
    let spacing = slf.grid.spacing;
    let p1 = sub(x1, origin);
    let delta = sub(sub(x2, origin), p1);

    // Direction sign per axis; axes the segment does not advance along are
    // masked out of the crossing search. Zero components are replaced by 1
    // before division so the (unused) quotients stay finite.
    let mut b_inc = [0i64; 3];
    let mut delta_safe = delta;
    for a in 0..3 {
        if delta[a] > 0.0 {
            b_inc[a] = 1;
        } else if delta[a] < 0.0 {
            b_inc[a] = -1;
        } else {
            delta_safe[a] = 1.0;
        }
    }

    // Voxel containing x1: nearest voxel centre per axis. Half-open voxel
    // boxes [centre − δ/2, centre + δ/2) correspond to round-half-up.
    let mut idx = [
        (p1[0] / spacing[0]).round() as i64,
        (p1[1] / spacing[1]).round() as i64,
        (p1[2] / spacing[2]).round() as i64,
    ];

    let mut t = 0.0f64;
    let mut acc = 0.0f64;
    let mut crossings = 0usize;
    while t < 1.0 {
        // Earliest upcoming voxel-boundary crossing among the active axes.
        let mut best_axis = usize::MAX;
        let mut best_t = f64::INFINITY;
        for a in 0..3 {
            if b_inc[a] == 0 {
                continue;
            }
            let boundary = spacing[a] * (idx[a] as f64 + 0.5 * b_inc[a] as f64);
            let t_cand = (boundary - p1[a]) / delta_safe[a];
            if t_cand < best_t {
                best_t = t_cand;
                best_axis = a;
            }
        }
        let t_next = if best_axis == usize::MAX {
            1.0
        } else {
            best_t.min(1.0)
        };
        acc += (t_next - t) * slf.value_clamped(idx);
        t = t_next;
        if t < 1.0 {
            idx[best_axis] += b_inc[best_axis];
            crossings += 1;
        }
    }
    (length.sqrt() * acc, crossings)
}

/// Validates a link's endpoints and returns its length.
fn link_distance(gt: Point3, abs_pos: Point3) -> Result<f64> {
    for p in [gt, abs_pos] {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("link endpoints must be finite".into()));
        }
    }
    let d = dist(gt, abs_pos);
    if d == 0.0 {
        return Err(Error::Invalid(
            "link endpoints coincide; the gain is undefined at zero distance".into(),
        ));
    }
    Ok(d)
}

fn validate_lambda(lambda_m: f64) -> Result<()> {
    if !(lambda_m > 0.0 && lambda_m.is_finite()) {
        return Err(Error::Invalid(format!(
            "wavelength must be positive, got {lambda_m}"
        )));
    }
    Ok(())
}

/// Tomographic channel gain in dB:
/// `20·log10(λ / (4π d)) − ξ(gt, abs_pos)`.
pub fn gain_tomographic(
    gt: Point3,
    abs_pos: Point3,
    slf: &SpatialLossField,
    lambda_m: f64,
) -> Result<f64> {
    let free_space = gain_free_space(gt, abs_pos, lambda_m)?;
    Ok(free_space - tomographic_integral(gt, abs_pos, slf))
}

/// Free-space channel gain in dB: `20·log10(λ / (4π d))`.
pub fn gain_free_space(gt: Point3, abs_pos: Point3, lambda_m: f64) -> Result<f64> {
    validate_lambda(lambda_m)?;
    let d = link_distance(gt, abs_pos)?;
    Ok(20.0 * (lambda_m / (4.0 * std::f64::consts::PI * d)).log10())
}

/// Elevation-angle empirical gain in dB: free-space loss plus an excess loss
/// that blends `η_LOS` and `η_NLOS` with the line-of-sight probability at the
/// link's elevation angle. The aerial endpoint must be strictly above the
/// ground terminal.
pub fn gain_alhourani(
    gt: Point3,
    abs_pos: Point3,
    params: &AlHouraniParams,
    lambda_m: f64,
) -> Result<f64> {
    params.validate()?;
    validate_lambda(lambda_m)?;
    let d = link_distance(gt, abs_pos)?;
    let dz = abs_pos[2] - gt[2];
    if dz <= 0.0 {
        return Err(Error::Invalid(format!(
            "elevation-angle model requires the aerial endpoint strictly above \
             the terminal, got height difference {dz} m"
        )));
    }
    let theta_deg = (dz / d).asin().to_degrees();
    let p_los = params.p_los(theta_deg);
    let free_space = 20.0 * (lambda_m / (4.0 * std::f64::consts::PI * d)).log10();
    Ok(free_space - p_los * params.eta_los_db - (1.0 - p_los) * params.eta_nlos_db)
}

/// Link capacity in bits/s for a channel gain `γ` (dB):
/// `W · log2(1 + P_TX·10^{γ/10} / σ²)` with both powers converted from dBm
/// to linear milliwatts. A gain of `−∞` yields capacity 0.
pub fn capacity(gain_db: f64, params: &RadioParams) -> f64 {
    let p_rx_mw = 10f64.powf((params.tx_power_dbm + gain_db) / 10.0);
    let noise_mw = 10f64.powf(params.noise_interference_dbm / 10.0);
    params.bandwidth_hz * (1.0 + p_rx_mw / noise_mw).log2()
}

/// Predicts the gain of every (terminal, candidate) link under `model`,
/// returning an `M × G` gain matrix tagged with the model's provenance.
pub fn build_gain_map(
    gts: &[Point3],
    flight_grid: &[Point3],
    model: &ChannelModel,
    params: &RadioParams,
) -> Result<GainMap> {
    params.validate()?;
    if gts.is_empty() || flight_grid.is_empty() {
        return Err(Error::Invalid(
            "capacity matrix needs at least one terminal and one candidate position".into(),
        ));
    }
    if let ChannelModel::Ingested { map } = model {
        let (m, g) = map.gains.dim();
        if m != gts.len() || g != flight_grid.len() {
            return Err(Error::Invalid(format!(
                "ingested gain map is {m}×{g} but the scenario has {} terminals \
                 and {} candidate positions",
                gts.len(),
                flight_grid.len()
            )));
        }
        return Ok((*map).clone());
    }

    let lambda = params.lambda_m();
    let mut gains = Array2::<f64>::zeros((gts.len(), flight_grid.len()));
    for (m, gt) in gts.iter().enumerate() {
        for (g, pos) in flight_grid.iter().enumerate() {
            let gain = match model {
                ChannelModel::Tomographic { slf } => gain_tomographic(*gt, *pos, slf, lambda),
                ChannelModel::FreeSpace => gain_free_space(*gt, *pos, lambda),
                ChannelModel::AlHourani { params } => gain_alhourani(*gt, *pos, params, lambda),
                ChannelModel::Ingested { .. } => unreachable!("handled above"),
            };
            gains[[m, g]] = gain.map_err(|e| {
                Error::Invalid(format!(
                    "channel model failed for terminal {m}, candidate {g}: {e}"
                ))
            })?;
        }
    }
    GainMap::new(gains, model.source())
}

/// Capacity matrix `C ∈ ℝ₊^{M×G}`: entry `(m, g)` is the capacity of the
/// link from ground terminal `m` to candidate position `g` under `model`.
pub fn build_capacity_matrix(
    gts: &[Point3],
    flight_grid: &[Point3],
    model: &ChannelModel,
    params: &RadioParams,
) -> Result<Array2<f64>> {
    let map = build_gain_map(gts, flight_grid, model, params)?;
    Ok(map.gains.mapv(|g| capacity(g, params)))
}

/// Per-candidate backhaul capacity specification.
#[derive(Debug, Clone, Copy)]
pub enum BackhaulModel<'a> {
    /// Every candidate position gets the same backhaul rate in bits/s.
    Constant {
        /// Common backhaul rate, bits/s; must be non-negative.
        rate_bps: f64,
    },
    /// Backhaul gains (a `1 × G` gain map, e.g. towards a hub) converted to
    /// capacities with the given link-budget parameters.
    GainMap {
        /// `1 × G` gain map of the backhaul links.
        map: &'a GainMap,
        /// Link budget of the backhaul channel.
        params: &'a RadioParams,
    },
}

/// Backhaul capacity `c^BH ∈ ℝ₊^G` for every candidate position.
pub fn backhaul_vector(flight_grid: &[Point3], spec: &BackhaulModel) -> Result<Vec<f64>> {
    let g = flight_grid.len();
    match spec {
        BackhaulModel::Constant { rate_bps } => {
            if !(rate_bps.is_finite() && *rate_bps >= 0.0) {
                return Err(Error::Invalid(format!(
                    "constant backhaul rate must be non-negative, got {rate_bps}"
                )));
            }
            Ok(vec![*rate_bps; g])
        }
        BackhaulModel::GainMap { map, params } => {
            params.validate()?;
            let (rows, cols) = map.gains.dim();
            if rows != 1 || cols != g {
                return Err(Error::Invalid(format!(
                    "backhaul gain map must be 1×{g}, got {rows}×{cols}"
                )));
            }
            Ok(map
                .gains
                .row(0)
                .iter()
                .map(|&gain| capacity(gain, params))
                .collect())
        }
    }
}

/// Parses a gain map from the plain-text exchange format: a header line
/// `M G`, then `M` lines of `G` whitespace-separated decimal dB values.
/// Blank lines are ignored. The loaded map is tagged
/// [`GainSource::Ingested`].
pub fn load_gain_map(path: &Path) -> Result<GainMap> {
    let text = std::fs::read_to_string(path)?;
    parse_gain_map(&text)
}

/// [`load_gain_map`] on an in-memory string; line numbers in errors are
/// 1-based.
pub fn parse_gain_map(text: &str) -> Result<GainMap> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty gain-map file".into(),
    })?;
    let mut header_tokens = header.split_whitespace();
    let parse_dim = |tok: Option<&str>, what: &str| -> Result<usize> {
        tok.ok_or(Error::Parse {
            line: header_line,
            message: format!("header is missing the {what}"),
        })?
        .parse::<usize>()
        .map_err(|e| Error::Parse {
            line: header_line,
            message: format!("bad {what} in header: {e}"),
        })
    };
    let m = parse_dim(header_tokens.next(), "row count")?;
    let g = parse_dim(header_tokens.next(), "column count")?;
    if header_tokens.next().is_some() {
        return Err(Error::Parse {
            line: header_line,
            message: "header must contain exactly two integers".into(),
        });
    }
    if m == 0 || g == 0 {
        return Err(Error::Parse {
            line: header_line,
            message: format!("gain map dimensions must be positive, got {m}×{g}"),
        });
    }

    let mut gains = Array2::<f64>::zeros((m, g));
    for row in 0..m {
        let (line_no, line) = lines.next().ok_or(Error::Parse {
            line: header_line,
            message: format!("expected {m} data rows, found {row}"),
        })?;
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            if count >= g {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("row has more than {g} values"),
                });
            }
            let v: f64 = tok.parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad gain value '{tok}': {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("gain value '{tok}' is not finite"),
                });
            }
            gains[[row, count]] = v;
            count += 1;
        }
        if count != g {
            return Err(Error::Parse {
                line: line_no,
                message: format!("row has {count} values, expected {g}"),
            });
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(Error::Parse {
            line: line_no,
            message: format!("unexpected data after {m} rows"),
        });
    }
    GainMap::new(gains, GainSource::Ingested)
}

/// Serialises a gain map in the plain-text exchange format with 17
/// significant digits, enough for a bit-exact save→load round trip.
pub fn save_gain_map(map: &GainMap, path: &Path) -> Result<()> {
    std::fs::write(path, format_gain_map(map))?;
    Ok(())
}

/// [`save_gain_map`] into an in-memory string.
pub fn format_gain_map(map: &GainMap) -> String {
    let (m, g) = map.gains.dim();
    let mut out = String::new();
    let _ = writeln!(out, "{m} {g}");
    for row in map.gains.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}
