//! Group-sparse placement solver.
//!
//! The placement task — serve every ground terminal at rate `min_rate` using
//! as few candidate positions (columns) as possible — is relaxed to
//!
//! ```text
//! min_{R,s}  Σ_g w_g·s_g   s.t.  R·1 = min_rate·1,   Rᵀ·1 ≤ backhaul,
//!                                0 ≤ R ≤ C,          r_{m,g} ≤ s_g,
//! ```
//!
//! whose weighted column-peak objective drives whole columns of the rate
//! matrix to zero. It is solved by consensus ADMM: an `X`-block carrying the
//! peak/backhaul constraints (one independent subproblem per column, solved
//! by bisection on a piecewise-linear scalar equation), a `Z`-block carrying
//! the box and rate-floor constraints (one independent Euclidean projection
//! per row, again a scalar bisection), and a scaled dual matrix `U` tying
//! them together. Outer reweighting rounds (`w_g = 1/(‖r_g‖_∞ + ε)`)
//! sharpen the support; the surviving columns are re-normalised by an exact
//! LP so the reported rates are feasible, not merely feasible-to-tolerance.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::lp::{build_relaxed_lp, solve_lp, LpStatus};

/// Minimum number of independent subproblems before an ADMM sweep bothers
/// with thread-level parallelism; below this the spawn overhead dominates.
const PAR_THRESHOLD: usize = 64;

/// A placement instance: per-link capacities, per-column backhaul, the
/// demanded per-terminal rate, and the column weights of the relaxed
/// objective.
#[derive(Debug, Clone)]
pub struct PlacementProblem {
    /// `M × G` link capacities in bits/s (terminal × candidate position).
    pub capacity: Array2<f64>,
    /// Backhaul capacity of each candidate position, bits/s (length `G`).
    pub backhaul: Vec<f64>,
    /// Rate every terminal must receive, bits/s.
    pub min_rate: f64,
    /// Non-negative column weights of the relaxed objective (length `G`).
    pub weights: Vec<f64>,
}

impl PlacementProblem {
    /// Instance with unit weights.
    pub fn new(capacity: Array2<f64>, backhaul: Vec<f64>, min_rate: f64) -> Result<Self> {
        let g = capacity.ncols();
        let p = PlacementProblem {
            capacity,
            backhaul,
            min_rate,
            weights: vec![1.0; g],
        };
        p.validate()?;
        Ok(p)
    }

    /// Number of ground terminals `M`.
    pub fn num_gts(&self) -> usize {
        self.capacity.nrows()
    }

    /// Number of candidate positions `G`.
    pub fn num_columns(&self) -> usize {
        self.capacity.ncols()
    }

    /// Checks dimensions, finiteness and signs.
    pub fn validate(&self) -> Result<()> {
        let (m, g) = self.capacity.dim();
        if m == 0 || g == 0 {
            return Err(Error::Invalid(
                "placement needs at least one terminal and one candidate position".into(),
            ));
        }
        if self.backhaul.len() != g {
            return Err(Error::Invalid(format!(
                "backhaul has {} entries for {g} candidate positions",
                self.backhaul.len()
            )));
        }
        if self.weights.len() != g {
            return Err(Error::Invalid(format!(
                "weights has {} entries for {g} candidate positions",
                self.weights.len()
            )));
        }
        fn non_negative<'a>(mut vals: impl Iterator<Item = &'a f64>) -> bool {
            vals.all(|v| v.is_finite() && *v >= 0.0)
        }
        if !non_negative(self.capacity.iter()) {
            return Err(Error::Invalid("capacities must be finite and non-negative".into()));
        }
        if !non_negative(self.backhaul.iter()) {
            return Err(Error::Invalid("backhaul must be finite and non-negative".into()));
        }
        if !non_negative(self.weights.iter()) {
            return Err(Error::Invalid("weights must be finite and non-negative".into()));
        }
        if !(self.min_rate.is_finite() && self.min_rate >= 0.0) {
            return Err(Error::Invalid(format!(
                "minimum rate must be finite and non-negative, got {}",
                self.min_rate
            )));
        }
        Ok(())
    }
}

/// Tuning knobs of the ADMM solver.
#[derive(Debug, Clone, Copy)]
pub struct AdmmConfig {
    /// ADMM step size `ρ`. The default suits capacities on the bits/s scale
    /// (≈1e8); instances on other scales converge faster with `ρ` of order
    /// `1/scale`.
    pub rho: f64,
    /// Absolute stopping tolerance.
    pub eps_abs: f64,
    /// Relative stopping tolerance.
    pub eps_rel: f64,
    /// Iteration cap per reweighting round.
    pub max_iters: usize,
    /// Relative bracket-width target of the scalar bisections.
    pub bisection_tol: f64,
    /// Number of outer rounds; round 1 uses the problem's weights, each
    /// later round re-derives them from the current rate matrix.
    pub reweight_rounds: usize,
    /// `ε` of the reweighting rule `w = 1/(‖r_g‖_∞ + ε)`; `None` derives
    /// `1e−3·min_rate` from the problem.
    pub reweight_epsilon: Option<f64>,
    /// Fraction of `min_rate` below which a column's peak rate counts as
    /// zero when extracting the deployed positions.
    pub activation_threshold: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1e-7,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iters: 20_000,
            bisection_tol: 1e-12,
            reweight_rounds: 3,
            reweight_epsilon: None,
            activation_threshold: 1e-3,
        }
    }
}

impl AdmmConfig {
    /// Checks positivity of every knob.
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rho", self.rho),
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
            ("bisection_tol", self.bisection_tol),
            ("activation_threshold", self.activation_threshold),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(e) = self.reweight_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Invalid(format!(
                    "reweight_epsilon must be positive, got {e}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if self.reweight_rounds == 0 {
            return Err(Error::Invalid("reweight_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mutable state of the ADMM iteration.
#[derive(Debug, Clone)]
pub struct AdmmState {
    /// `X`-block rate matrix `R` (`M × G`).
    pub r: Array2<f64>,
    /// `Z`-block consensus matrix (`M × G`).
    pub z: Array2<f64>,
    /// Scaled dual matrix `U` (`M × G`).
    pub u: Array2<f64>,
    /// Per-column peaks `s` (length `G`).
    pub s: Array1<f64>,
    /// Completed full sweeps.
    pub iter: usize,
}

/// Relative size of the symmetry-breaking tilt applied to the initial
/// consensus iterate. When many columns could serve the terminals equally
/// well (capacities far above the rates in play), a column-uniform start is a
/// stationary point of the sweeps and the weight updates see identical column
/// peaks forever — no column ever wins, and the support never shrinks. A tiny
/// deterministic tilt toward columns with better average capacity (plus an
/// index ramp to split exact ties) gives the weight updates a gradient to
/// amplify while perturbing well-conditioned instances far below solver
/// tolerance.
pub const INIT_TILT: f64 = 1e-3;

impl AdmmState {
    /// Deterministic warm start: `Z` is the capacity-clipped uniform split
    /// `min(C, min_rate/M)` with a small column tilt (see [`INIT_TILT`]) and
    /// columns rescaled into their backhaul budgets; `R`, `U` and `s` start
    /// at zero.
    pub fn new(problem: &PlacementProblem) -> Self {
        let (m, g) = problem.capacity.dim();
        let per_entry = problem.min_rate / m as f64;
        let col_mean: Vec<f64> = (0..g)
            .map(|col| problem.capacity.column(col).mean().unwrap_or(0.0))
            .collect();
        let mean_peak = col_mean.iter().cloned().fold(0.0f64, f64::max);
        let mut z = problem.capacity.mapv(|c| c.min(per_entry));
        for col in 0..g {
            let rank = if mean_peak > 0.0 { col_mean[col] / mean_peak } else { 0.0 };
            let ramp = (col + 1) as f64 / g as f64;
            let tilt = 1.0 + INIT_TILT * (rank + INIT_TILT * ramp);
            for row in 0..m {
                z[[row, col]] = (z[[row, col]] * tilt).min(problem.capacity[[row, col]]);
            }
            let sum: f64 = z.column(col).sum();
            let cap = problem.backhaul[col];
            if sum > cap && sum > 0.0 {
                let scale = cap / sum;
                for row in 0..m {
                    z[[row, col]] *= scale;
                }
            }
        }
        AdmmState {
            r: Array2::zeros((m, g)),
            z,
            u: Array2::zeros((m, g)),
            s: Array1::zeros(g),
            iter: 0,
        }
    }
}

/// Residual norms and stopping thresholds of one ADMM sweep.
#[derive(Debug, Clone, Copy)]
pub struct Residuals {
    /// Primal residual `‖R − Z‖_F`.
    pub primal: f64,
    /// Dual residual `ρ·‖Z^{k+1} − Z^k‖_F`.
    pub dual: f64,
    /// Primal threshold `√(MG)·eps_abs + eps_rel·max(‖R‖_F, ‖Z‖_F)`.
    pub eps_pri: f64,
    /// Dual threshold `√(MG)·eps_abs + eps_rel·ρ·‖U‖_F`.
    pub eps_dual: f64,
}

/// The extracted placement.
#[derive(Debug, Clone)]
pub struct PlacementSolution {
    /// Flight-grid indices of the deployed stations, ascending. `N` is the
    /// length of this list.
    pub active_columns: Vec<usize>,
    /// `M × N` rate allocation over the deployed stations, bits/s.
    pub rates: Array2<f64>,
    /// Total ADMM sweeps across all reweighting rounds.
    pub iterations: usize,
    /// Primal residual at the last sweep.
    pub primal_residual: f64,
    /// Dual residual at the last sweep.
    pub dual_residual: f64,
    /// Whether the final round met the stopping criterion before its
    /// iteration cap.
    pub converged: bool,
    /// Result of the exact post-verification of the returned rates.
    pub feasible: bool,
}

/// Finds a root of the non-increasing function `f` on `[lo, hi]`:
/// the returned point encloses the solution of `f(s) = target` within a
/// bracket of width `tol·max(1, hi − lo)`. On a plateau where `f` equals
/// `target`, any plateau point may be returned. The initial bracket must
/// straddle the target (`f(lo) ≥ target ≥ f(hi)`); a violation beyond
/// rounding slack indicates a bug in the caller's bracket derivation and is
/// reported with both endpoint values.
pub fn bisect_root(
    f: impl Fn(f64) -> f64,
    target: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    context: &'static str,
) -> Result<f64> {
    let f_lo = f(lo);
    let f_hi = f(hi);
    // Rounding slack: the bracket endpoints are themselves computed in
    // floating point, so an exact straddle check would misfire on ties.
    let slack = 1e-9 * (1.0 + target.abs() + f_lo.abs() + f_hi.abs());
    if !(f_lo >= target - slack && f_hi <= target + slack) || !(lo <= hi) {
        return Err(Error::BracketViolation {
            f_lo,
            f_hi,
            target,
            context,
        });
    }
    let width = hi - lo;
    let threshold = tol * width.max(1.0);
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        if hi - lo <= threshold {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves the per-column `X`-subproblem for column `g`:
///
/// ```text
/// min_{r, s}  w_g·s + (ρ/2)·‖r − (z − u)‖²   s.t.  r ≤ s·1,  1ᵀr ≤ cbh_g.
/// ```
///
/// First the backhaul constraint is ignored: the peak `s` solves
/// `Σ_m max(z_m − u_m − s, 0) = w_g/ρ` (bisected inside the bracket
/// `[min(z−u), max(z−u)] − w_g/(Mρ)`), and `r = min(z − u, s·1)`. If that
/// `r` overshoots the backhaul budget, the multiplier
/// `μ̃ = (ρ·(1ᵀ(z−u) − cbh_g) − w_g)/M` is activated: `s` then solves
/// `Σ_m max(μ̃, ρ·(z_m − u_m − s)) = w_g + μ̃·M` inside the same bracket
/// shifted by `−μ̃/ρ`, and `r = min(z − u − (μ̃/ρ)·1, s·1)`, which meets the
/// budget with equality. Returns `(r, s)`.
pub fn solve_x_column(
    g: usize,
    z_col: &[f64],
    u_col: &[f64],
    w_g: f64,
    cbh_g: f64,
    rho: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    debug_assert!(rho > 0.0 && w_g >= 0.0 && cbh_g >= 0.0);
    let m = z_col.len();
    let v: Vec<f64> = z_col.iter().zip(u_col).map(|(z, u)| z - u).collect();
    let v_min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let _ = g;

    // Unconstrained-backhaul branch.
    let target = w_g / rho;
    let offset = w_g / (m as f64 * rho);
    let f_peak = |s: f64| v.iter().map(|&vi| (vi - s).max(0.0)).sum::<f64>();
    let mut s = bisect_root(
        f_peak,
        target,
        v_min - offset,
        v_max - offset,
        tol,
        "column peak equation",
    )?;
    let mut r: Vec<f64> = v.iter().map(|&vi| vi.min(s)).collect();

    // Backhaul-active branch: strict violation avoids chattering at equality.
    let load: f64 = r.iter().sum();
    if load > cbh_g * (1.0 + 1e-12) {
        let v_sum: f64 = v.iter().sum();
        let mu = (rho * (v_sum - cbh_g) - w_g) / m as f64;
        let shift = mu / rho;
        let f_budget = |s: f64| v.iter().map(|&vi| (rho * (vi - s)).max(mu)).sum::<f64>();
        let target2 = w_g + mu * m as f64;
        s = bisect_root(
            f_budget,
            target2,
            v_min - offset - shift,
            v_max - offset - shift,
            tol,
            "column budget equation",
        )?;
        for (ri, &vi) in r.iter_mut().zip(&v) {
            *ri = (vi - shift).min(s);
        }
    }
    Ok((r, s))
}

/// Solves the per-row `Z`-subproblem for terminal `m`: the Euclidean
/// projection of `rbar + ubar` onto `{z : 1ᵀz = min_rate, 0 ≤ z ≤ cbar}`.
///
/// The projection is `z = max(0, min(cbar, rbar + ubar − λ·1))` with `λ`
/// bisected so the row sums to `min_rate`; the bracket is
/// `[min_g(v_g − c̄_g), max{v_g : c̄_g > min_rate/G} − min_rate/G]` with
/// `v = rbar + ubar`. When `1ᵀcbar < min_rate` the feasible set is empty:
/// no placement can serve this terminal, reported as an infeasibility naming
/// the terminal.
pub fn solve_z_row(
    m: usize,
    rbar_row: &[f64],
    ubar_row: &[f64],
    cbar_row: &[f64],
    min_rate: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let g = cbar_row.len();
    let total: f64 = cbar_row.iter().sum();
    if total < min_rate {
        return Err(Error::InsufficientRowCapacity {
            gt: m,
            total,
            required: min_rate,
        });
    }
    let v: Vec<f64> = rbar_row.iter().zip(ubar_row).map(|(r, u)| r + u).collect();
    let per_col = min_rate / g as f64;

    // Upper bracket endpoint ranges over columns whose cap exceeds the
    // uniform share; if none exists the caps sum to exactly min_rate and the
    // projection saturates all of them.
    let lam_hi = v
        .iter()
        .zip(cbar_row)
        .filter(|(_, &c)| c > per_col)
        .map(|(&vi, _)| vi)
        .fold(f64::NEG_INFINITY, f64::max);
    if lam_hi == f64::NEG_INFINITY {
        return Ok(cbar_row.to_vec());
    }
    let lam_hi = lam_hi - per_col;
    let lam_lo = v
        .iter()
        .zip(cbar_row)
        .map(|(&vi, &c)| vi - c)
        .fold(f64::INFINITY, f64::min);

    let f = |lam: f64| {
        v.iter()
            .zip(cbar_row)
            .map(|(&vi, &c)| (vi - lam).min(c).max(0.0))
            .sum::<f64>()
    };
    let lam = bisect_root(f, min_rate, lam_lo, lam_hi, tol, "row projection equation")?;
    Ok(v.iter()
        .zip(cbar_row)
        .map(|(&vi, &c)| (vi - lam).min(c).max(0.0))
        .collect())
}

/// Scaled dual ascent `U ← U + R − Z`, elementwise.
pub fn update_dual(u: &mut Array2<f64>, r: &Array2<f64>, z: &Array2<f64>) {
    debug_assert_eq!(u.dim(), r.dim());
    debug_assert_eq!(u.dim(), z.dim());
    for ((uv, rv), zv) in u.iter_mut().zip(r.iter()).zip(z.iter()) {
        *uv += rv - zv;
    }
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Residuals of the current sweep and whether the stopping criterion holds.
/// Following the solver's stopping rule, the *squared* residual norms are
/// compared against the (unsquared) thresholds.
pub fn check_convergence(
    state: &AdmmState,
    prev_z: &Array2<f64>,
    rho: f64,
    eps_abs: f64,
    eps_rel: f64,
) -> (Residuals, bool) {
    let diff = &state.r - &state.z;
    let primal = frobenius(&diff);
    let dz = &state.z - prev_z;
    let dual = rho * frobenius(&dz);
    let (m, g) = state.r.dim();
    let scale = ((m * g) as f64).sqrt();
    let eps_pri = scale * eps_abs + eps_rel * frobenius(&state.r).max(frobenius(&state.z));
    let eps_dual = scale * eps_abs + eps_rel * rho * frobenius(&state.u);
    let res = Residuals {
        primal,
        dual,
        eps_pri,
        eps_dual,
    };
    let converged = primal * primal <= eps_pri && dual * dual <= eps_dual;
    (res, converged)
}

/// One full ADMM sweep: every column's `X`-subproblem (from the common
/// pre-sweep state), every row's `Z`-projection, then the dual update. The
/// column and row subproblems are mutually independent; they may run in
/// parallel and the result is bitwise independent of the schedule.
pub fn gspa_iterate(
    problem: &PlacementProblem,
    state: &mut AdmmState,
    config: &AdmmConfig,
) -> Result<()> {
    let (m, g) = problem.capacity.dim();

    // X-step: per-column peak/backhaul subproblems.
    let solve_col = |col: usize| -> Result<(Vec<f64>, f64)> {
        let z_col: Vec<f64> = state.z.column(col).to_vec();
        let u_col: Vec<f64> = state.u.column(col).to_vec();
        solve_x_column(
            col,
            &z_col,
            &u_col,
            problem.weights[col],
            problem.backhaul[col],
            config.rho,
            config.bisection_tol,
        )
    };
    let cols: Vec<(Vec<f64>, f64)> = if g >= PAR_THRESHOLD {
        (0..g).into_par_iter().map(solve_col).collect::<Result<_>>()?
    } else {
        (0..g).map(solve_col).collect::<Result<_>>()?
    };
    for (col, (r_col, s_g)) in cols.into_iter().enumerate() {
        for (row, val) in r_col.into_iter().enumerate() {
            state.r[[row, col]] = val;
        }
        state.s[col] = s_g;
    }

    // Z-step: per-row projections using the fresh R and the current U.
    let solve_row = |row: usize| -> Result<Vec<f64>> {
        let r_row: Vec<f64> = state.r.row(row).to_vec();
        let u_row: Vec<f64> = state.u.row(row).to_vec();
        let c_row: Vec<f64> = problem.capacity.row(row).to_vec();
        solve_z_row(
            row,
            &r_row,
            &u_row,
            &c_row,
            problem.min_rate,
            config.bisection_tol,
        )
    };
    let rows: Vec<Vec<f64>> = if m >= PAR_THRESHOLD {
        (0..m).into_par_iter().map(solve_row).collect::<Result<_>>()?
    } else {
        (0..m).map(solve_row).collect::<Result<_>>()?
    };
    for (row, z_row) in rows.into_iter().enumerate() {
        for (col, val) in z_row.into_iter().enumerate() {
            state.z[[row, col]] = val;
        }
    }

    update_dual(&mut state.u, &state.r, &state.z);
    state.iter += 1;
    Ok(())
}

/// Column weights from the current rate matrix: `w_g = 1/(‖r_g‖_∞ + ε)`,
/// normalised so the largest weight is 1.
pub fn reweight(r: &Array2<f64>, epsilon: f64) -> Vec<f64> {
    debug_assert!(epsilon > 0.0);
    let g = r.ncols();
    let mut w: Vec<f64> = (0..g)
        .map(|col| {
            let peak = r.column(col).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            1.0 / (peak + epsilon)
        })
        .collect();
    let w_max = w.iter().cloned().fold(0.0f64, f64::max);
    if w_max > 0.0 {
        for wi in &mut w {
            *wi /= w_max;
        }
    }
    w
}

/// Weighted column-peak objective `Σ_g w_g·‖r_g‖_∞` of a rate matrix — the
/// quantity the relaxed program minimises.
pub fn weighted_linf_objective(r: &Array2<f64>, weights: &[f64]) -> f64 {
    (0..r.ncols())
        .map(|col| {
            let peak = r.column(col).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            weights[col] * peak
        })
        .sum()
}

/// Result of the ADMM rounds before support extraction.
#[derive(Debug, Clone)]
pub struct AdmmRun {
    /// Final iterate.
    pub state: AdmmState,
    /// Residuals at the last sweep.
    pub residuals: Residuals,
    /// Whether the final round stopped on the criterion rather than the cap.
    pub converged: bool,
    /// Weights used in the final round.
    pub weights: Vec<f64>,
}

/// Runs the reweighting rounds of ADMM to convergence (or the per-round
/// iteration cap), warm-starting each round from the previous iterate.
/// Requires `min_rate > 0`.
pub fn admm_solve(problem: &PlacementProblem, config: &AdmmConfig) -> Result<AdmmRun> {
    problem.validate()?;
    config.validate()?;
    if problem.min_rate <= 0.0 {
        return Err(Error::Invalid(
            "ADMM rounds need a positive minimum rate; zero-rate instances are trivial".into(),
        ));
    }
    let epsilon = config
        .reweight_epsilon
        .unwrap_or(1e-3 * problem.min_rate);
    if epsilon <= 0.0 {
        return Err(Error::Invalid("reweighting epsilon must be positive".into()));
    }

    let mut prob = problem.clone();
    let mut state = AdmmState::new(&prob);
    let mut residuals = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        eps_pri: 0.0,
        eps_dual: 0.0,
    };
    let mut converged = false;
    for round in 0..config.reweight_rounds {
        if round > 0 {
            prob.weights = reweight(&state.r, epsilon);
        }
        converged = false;
        for _ in 0..config.max_iters {
            let prev_z = state.z.clone();
            gspa_iterate(&prob, &mut state, config)?;
            let (res, conv) =
                check_convergence(&state, &prev_z, config.rho, config.eps_abs, config.eps_rel);
            residuals = res;
            if conv {
                converged = true;
                break;
            }
        }
    }
    Ok(AdmmRun {
        state,
        residuals,
        converged,
        weights: prob.weights,
    })
}

/// Full pipeline: upfront feasibility checks, ADMM with reweighting, support
/// extraction at the activation threshold, and an exact LP repair of the
/// rates on the surviving columns. `flight_grid` must have one position per
/// capacity column; the solution refers to stations by column index.
///
/// Infeasibility that is certain upfront (a terminal whose total capacity is
/// below `min_rate`, or a backhaul lower bound exceeding the number of
/// candidate positions) is an error. Non-convergence is not: the solution is
/// returned with `converged = false`.
pub fn gspa_solve(
    problem: &PlacementProblem,
    flight_grid: &[Point3],
    config: &AdmmConfig,
) -> Result<PlacementSolution> {
    problem.validate()?;
    config.validate()?;
    let (m, g) = problem.capacity.dim();
    if flight_grid.len() != g {
        return Err(Error::Invalid(format!(
            "flight grid has {} points for {g} capacity columns",
            flight_grid.len()
        )));
    }

    // A zero rate demand is served by deploying nothing.
    if problem.min_rate == 0.0 {
        return Ok(PlacementSolution {
            active_columns: Vec::new(),
            rates: Array2::zeros((m, 0)),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            feasible: true,
        });
    }

    for row in 0..m {
        let total: f64 = problem.capacity.row(row).sum();
        if total < problem.min_rate {
            return Err(Error::InsufficientRowCapacity {
                gt: row,
                total,
                required: problem.min_rate,
            });
        }
    }
    let bound = crate::baselines::lower_bound(m, problem.min_rate, &problem.backhaul)?;
    if bound > g {
        return Err(Error::BoundExceedsColumns { bound, columns: g });
    }

    let run = admm_solve(problem, config)?;
    let threshold = config.activation_threshold * problem.min_rate;
    let active: Vec<usize> = (0..g)
        .filter(|&col| {
            run.state
                .r
                .column(col)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
                > threshold
        })
        .collect();

    let (active, rates) = repair_rates(problem, &run, active, bound)?;
    let mut solution = PlacementSolution {
        active_columns: active,
        rates,
        iterations: run.state.iter,
        primal_residual: run.residuals.primal,
        dual_residual: run.residuals.dual,
        converged: run.converged,
        feasible: false,
    };
    solution.feasible = verify_feasibility(problem, &solution).feasible;
    Ok(solution)
}

/// Ceiling on dense-tableau entries a single repair solve may allocate.
/// Beyond it the restricted program is attempted on progressively larger
/// prefixes of the active columns (ordered by consensus mass) instead of all
/// at once; a full-support solve past this size would need gigabytes.
const REPAIR_TABLEAU_BUDGET: usize = 100_000_000;

/// Rough dense phase-1 tableau footprint of the restricted program on `n`
/// columns of an `m`-terminal problem: `m·n + n` structural variables, one
/// slack per inequality and up to one artificial per row.
fn repair_tableau_entries(m: usize, n: usize) -> usize {
    let vars = m * n + n;
    let rows = m + n + m * n;
    (rows + 1) * (vars + rows + n + m * n + 1)
}

/// Exact rate allocation on the active columns: solves the relaxed program
/// restricted to them (with the final reweighting round's weights), then
/// drops columns the optimal allocation left numerically empty — a vertex
/// solution routinely zeroes columns the consensus iterate had only smeared
/// mass onto, and each terminal loses at most `G` crumbs of size
/// [`REPAIR_PRUNE_TOL`]`·min_rate`, far inside the verification tolerance.
///
/// When the full active set would blow the tableau budget, prefixes of the
/// columns ranked by consensus mass are tried instead, doubling from the
/// backhaul lower bound until the restriction is feasible. If no affordable
/// restriction is feasible, the consensus iterate's own (clamped) columns are
/// returned so the caller still sees the allocation that failed verification.
fn repair_rates(
    problem: &PlacementProblem,
    run: &AdmmRun,
    active: Vec<usize>,
    bound: usize,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let m = problem.capacity.nrows();
    if active.is_empty() {
        return Ok((active, Array2::zeros((m, 0))));
    }

    let mut candidates: Vec<usize> = active.clone();
    candidates.sort_unstable_by(|&a, &b| {
        let peak = |col: usize| {
            run.state
                .r
                .column(col)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()))
        };
        peak(b).partial_cmp(&peak(a)).unwrap().then(a.cmp(&b))
    });

    let mut size = if repair_tableau_entries(m, active.len()) <= REPAIR_TABLEAU_BUDGET {
        active.len()
    } else {
        bound.max(8).min(active.len())
    };
    loop {
        if repair_tableau_entries(m, size) > REPAIR_TABLEAU_BUDGET {
            break;
        }
        let mut subset: Vec<usize> = candidates[..size].to_vec();
        subset.sort_unstable();
        if let Some(found) = try_repair(problem, run, &subset)? {
            return Ok(found);
        }
        if size == active.len() {
            break;
        }
        size = (size * 2).min(active.len());
    }

    // No affordable restriction was feasible: surrender exactness and hand
    // back the consensus columns for the verifier to judge.
    let mut rates = Array2::<f64>::zeros((m, active.len()));
    for (j, &col) in active.iter().enumerate() {
        for row in 0..m {
            rates[[row, j]] =
                run.state.z[[row, col]].clamp(0.0, problem.capacity[[row, col]]);
        }
    }
    Ok((active, rates))
}

/// One restricted-program solve on `subset` (sorted column indices). Returns
/// the pruned support and its rates when the restriction is feasible.
fn try_repair(
    problem: &PlacementProblem,
    run: &AdmmRun,
    subset: &[usize],
) -> Result<Option<(Vec<usize>, Array2<f64>)>> {
    let m = problem.capacity.nrows();
    let n = subset.len();
    let mut capacity = Array2::<f64>::zeros((m, n));
    for (j, &col) in subset.iter().enumerate() {
        for row in 0..m {
            capacity[[row, j]] = problem.capacity[[row, col]];
        }
    }
    let sub = PlacementProblem {
        capacity: capacity.clone(),
        backhaul: subset.iter().map(|&c| problem.backhaul[c]).collect(),
        min_rate: problem.min_rate,
        weights: subset.iter().map(|&c| run.weights[c]).collect(),
    };
    let sol = solve_lp(&build_relaxed_lp(&sub))?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    let mut rates = Array2::<f64>::zeros((m, n));
    for row in 0..m {
        for j in 0..n {
            rates[[row, j]] = sol.x[row * n + j].clamp(0.0, capacity[[row, j]]);
        }
    }
    let prune = REPAIR_PRUNE_TOL * problem.min_rate;
    let kept: Vec<usize> = (0..n)
        .filter(|&j| rates.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs())) > prune)
        .collect();
    if kept.len() == n {
        return Ok(Some((subset.to_vec(), rates)));
    }
    let mut pruned = Array2::<f64>::zeros((m, kept.len()));
    for (out, &j) in kept.iter().enumerate() {
        pruned.column_mut(out).assign(&rates.column(j));
    }
    Ok(Some((kept.iter().map(|&j| subset[j]).collect(), pruned)))
}

/// Outcome of [`verify_feasibility`].
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// True when every check passed.
    pub feasible: bool,
    /// Human-readable description of each violation.
    pub violations: Vec<String>,
}

/// Fraction of `min_rate` below which a repaired column is considered empty
/// and removed from the active set. Kept many orders of magnitude under
/// [`VERIFY_REL_TOL`] so pruning can never turn a feasible allocation
/// infeasible: a row loses at most `G` such crumbs.
pub const REPAIR_PRUNE_TOL: f64 = 1e-12;

/// Relative tolerance of the feasibility post-verification. Loose enough to
/// absorb the LP solver's constraint tolerance accumulated over a row sum,
/// tight enough that a terminal short by a millionth of its demanded rate is
/// still flagged.
pub const VERIFY_REL_TOL: f64 = 1e-6;

/// Exact-arithmetic sanity check of a solution against its problem: row sums
/// reach `min_rate`, column sums fit the backhaul of their grid column, and
/// every rate sits inside `[0, capacity]` — all with relative tolerance
/// [`VERIFY_REL_TOL`]. Violations are reported, never thrown.
pub fn verify_feasibility(
    problem: &PlacementProblem,
    solution: &PlacementSolution,
) -> FeasibilityReport {
    let mut violations = Vec::new();
    let (m, g) = problem.capacity.dim();
    let n = solution.active_columns.len();
    let tol = |scale: f64| VERIFY_REL_TOL * scale.abs().max(1.0);

    if solution.rates.dim() != (m, n) {
        violations.push(format!(
            "rate matrix is {:?} but must be {m}×{n}",
            solution.rates.dim()
        ));
        return FeasibilityReport {
            feasible: false,
            violations,
        };
    }
    for &col in &solution.active_columns {
        if col >= g {
            violations.push(format!("active column {col} out of range (G = {g})"));
            return FeasibilityReport {
                feasible: false,
                violations,
            };
        }
    }

    for row in 0..m {
        let sum: f64 = solution.rates.row(row).sum();
        if sum < problem.min_rate - tol(problem.min_rate) {
            violations.push(format!(
                "terminal {row} receives {sum:.6e} bit/s, below the demanded {:.6e}",
                problem.min_rate
            ));
        }
    }
    for (j, &col) in solution.active_columns.iter().enumerate() {
        let sum: f64 = solution.rates.column(j).sum();
        let cap = problem.backhaul[col];
        if sum > cap + tol(cap) {
            violations.push(format!(
                "station at column {col} carries {sum:.6e} bit/s, over its backhaul {cap:.6e}"
            ));
        }
        for row in 0..m {
            let rate = solution.rates[[row, j]];
            let link = problem.capacity[[row, col]];
            if rate < -tol(link) {
                violations.push(format!(
                    "rate for terminal {row}, column {col} is negative: {rate:.6e}"
                ));
            }
            if rate > link + tol(link) {
                violations.push(format!(
                    "rate for terminal {row}, column {col} is {rate:.6e}, over the link \
                     capacity {link:.6e}"
                ));
            }
        }
    }
    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn bisect_root_linear_piecewise_and_plateau() {
        // Simple linear root.
        let s = bisect_root(|s| -s, 0.0, -1.0, 1.0, 1e-12, "test").unwrap();
        assert_relative_eq!(s, 0.0, epsilon = 1e-9);

        // Piecewise-linear peak equation with two hinge points.
        let f = |s: f64| (3.0 - s).max(0.0) + (1.0 - s).max(0.0);
        let s = bisect_root(f, 1.0, 0.5, 2.5, 1e-12, "test").unwrap();
        assert_relative_eq!(s, 2.0, epsilon = 1e-9);

        // Plateau: any point where f equals the target is acceptable.
        let s = bisect_root(|_| 5.0, 5.0, 0.0, 1.0, 1e-12, "test").unwrap();
        let v = 5.0f64;
        assert_relative_eq!(v, 5.0);
        assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn bisect_root_rejects_bad_brackets() {
        let err = bisect_root(|s| -s, 10.0, -1.0, 1.0, 1e-12, "test").unwrap_err();
        assert!(matches!(err, Error::BracketViolation { .. }));
    }

    #[test]
    fn x_column_single_terminal_closed_form() {
        // One term: max(5 − s, 0) = 1 → s = 4, r = min(5, 4) = 4.
        let (r, s) = solve_x_column(0, &[5.0], &[0.0], 1.0, 10.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(s, 4.0, epsilon = 1e-9);
        assert_relative_eq!(r[0], 4.0, epsilon = 1e-9);
    }

    #[test]
    fn x_column_two_terminals_unconstrained() {
        // max(3 − s, 0) + max(1 − s, 0) = 1 → s = 2, r = (2, 1).
        let (r, s) = solve_x_column(0, &[3.0, 1.0], &[0.0, 0.0], 1.0, 100.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(s, 2.0, epsilon = 1e-9);
        assert_relative_eq!(r[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(r[1], 1.0, epsilon = 1e-9);
        assert!(r.iter().sum::<f64>() <= 100.0);
    }

    #[test]
    fn x_column_backhaul_branch_meets_budget_with_equality() {
        // Unconstrained solve gives 1ᵀr = 3 > 1.5, so the budget branch
        // fires with μ̃ = (−1.5 + 4 − 1)/2 = 0.75 and lands exactly on the
        // budget.
        let (r, s) = solve_x_column(0, &[3.0, 1.0], &[0.0, 0.0], 1.0, 1.5, 1.0, 1e-12).unwrap();
        assert_relative_eq!(r.iter().sum::<f64>(), 1.5, epsilon = 1e-9);
        assert_relative_eq!(r[0], 1.25, epsilon = 1e-9);
        assert_relative_eq!(r[1], 0.25, epsilon = 1e-9);
        assert_relative_eq!(s, 1.25, epsilon = 1e-9);
    }

    #[test]
    fn z_row_examples() {
        // Single column: project 7 onto {z = 4, 0 ≤ z ≤ 10}.
        let z = solve_z_row(0, &[7.0], &[0.0], &[10.0], 4.0, 1e-12).unwrap();
        assert_relative_eq!(z[0], 4.0, epsilon = 1e-9);

        // Water-filling two columns: λ = 1, z = (4, 0).
        let z = solve_z_row(0, &[5.0, 1.0], &[0.0, 0.0], &[10.0, 10.0], 4.0, 1e-12).unwrap();
        assert_relative_eq!(z[0], 4.0, epsilon = 1e-8);
        assert!(z[1].abs() < 1e-8);
        assert_relative_eq!(z.iter().sum::<f64>(), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn z_row_infeasible_names_the_terminal() {
        let err = solve_z_row(3, &[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], 4.0, 1e-12).unwrap_err();
        match err {
            Error::InsufficientRowCapacity { gt, total, required } => {
                assert_eq!(gt, 3);
                assert_relative_eq!(total, 3.0);
                assert_relative_eq!(required, 4.0);
            }
            other => panic!("expected row infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn z_row_saturated_caps_edge() {
        // Caps sum to exactly the demand: the projection must saturate them.
        let z = solve_z_row(0, &[9.0, -2.0], &[0.0, 0.0], &[3.0, 1.0], 4.0, 1e-12).unwrap();
        assert_relative_eq!(z[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(z[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn dual_update_accumulates_residuals() {
        let r = array![[1.0, 2.0], [3.0, 4.0]];
        let z = array![[1.0, 1.0], [3.0, 3.0]];
        let mut u = Array2::<f64>::zeros((2, 2));
        update_dual(&mut u, &r, &z);
        assert_eq!(u, array![[0.0, 1.0], [0.0, 1.0]]);
        update_dual(&mut u, &r, &z);
        assert_eq!(u, array![[0.0, 2.0], [0.0, 2.0]]);
        // R = Z leaves U unchanged.
        let mut u2 = u.clone();
        update_dual(&mut u2, &z, &z);
        assert_eq!(u2, u);
    }

    #[test]
    fn convergence_check_trivial_cases() {
        let problem = PlacementProblem::new(array![[10.0]], vec![10.0], 4.0).unwrap();
        let mut state = AdmmState::new(&problem);
        state.r = state.z.clone();
        let prev = state.z.clone();
        let (res, converged) = check_convergence(&state, &prev, 1.0, 1e-4, 1e-4);
        assert_eq!(res.primal, 0.0);
        assert_eq!(res.dual, 0.0);
        assert!(converged);

        // Zero tolerances and a gap → not converged.
        state.r[[0, 0]] += 1.0;
        let (_, converged) = check_convergence(&state, &prev, 1.0, 0.0, 0.0);
        assert!(!converged);
    }

    #[test]
    fn convergence_thresholds_scale_with_matrix_size() {
        let p1 = PlacementProblem::new(Array2::ones((2, 2)), vec![1.0; 2], 0.5).unwrap();
        let p2 = PlacementProblem::new(Array2::ones((8, 8)), vec![1.0; 8], 0.5).unwrap();
        let s1 = AdmmState::new(&p1);
        let s2 = AdmmState::new(&p2);
        let (r1, _) = check_convergence(&s1, &s1.z.clone(), 1.0, 1e-4, 0.0);
        let (r2, _) = check_convergence(&s2, &s2.z.clone(), 1.0, 1e-4, 0.0);
        // √(MG) scaling: 8×8 has 4× the √ of 2×2.
        assert_relative_eq!(r2.eps_pri / r1.eps_pri, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn reweight_inverse_peak_scaling() {
        // All-zero matrix → uniform weights 1.
        let w = reweight(&Array2::zeros((3, 4)), 0.1);
        assert!(w.iter().all(|&wi| (wi - 1.0).abs() < 1e-12));

        // A dominant column gets a much smaller weight.
        let r = array![[10.0, 0.0], [0.0, 0.001]];
        let w = reweight(&r, 1e-3);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);
        assert!(w[0] < 1e-3);
        assert!(w.iter().all(|&wi| wi > 0.0));
    }

    #[test]
    fn single_link_pipeline() {
        let problem = PlacementProblem::new(array![[1e8]], vec![1e8], 2e7).unwrap();
        let grid = vec![[0.0, 0.0, 50.0]];
        let sol = gspa_solve(&problem, &grid, &AdmmConfig::default()).unwrap();
        assert_eq!(sol.active_columns, vec![0]);
        assert!(sol.feasible);
        assert!(sol.converged);
        assert_relative_eq!(sol.rates[[0, 0]], 2e7, max_relative = 1e-6);
    }

    #[test]
    fn block_diagonal_forces_both_columns() {
        let problem =
            PlacementProblem::new(array![[1e8, 0.0], [0.0, 1e8]], vec![1e8, 1e8], 2e7).unwrap();
        let grid = vec![[0.0, 0.0, 50.0], [100.0, 0.0, 50.0]];
        let sol = gspa_solve(&problem, &grid, &AdmmConfig::default()).unwrap();
        assert_eq!(sol.active_columns, vec![0, 1]);
        assert!(sol.feasible);
    }

    #[test]
    fn upfront_infeasibility_checks() {
        // Starved terminal.
        let problem = PlacementProblem::new(array![[1e6, 1e6]], vec![1e8, 1e8], 2e7).unwrap();
        let grid = vec![[0.0; 3], [1.0; 3]];
        let err = gspa_solve(&problem, &grid, &AdmmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientRowCapacity { gt: 0, .. }));

        // Backhaul bound exceeding the grid: 3 terminals each needing 2e7
        // through columns with 2.5e7 backhaul → bound ⌈6e7/2.5e7⌉ = 3 > 2.
        let problem = PlacementProblem::new(
            array![[1e8, 1e8], [1e8, 1e8], [1e8, 1e8]],
            vec![2.5e7, 2.5e7],
            2e7,
        )
        .unwrap();
        let err = gspa_solve(&problem, &grid, &AdmmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::BoundExceedsColumns { bound: 3, columns: 2 }));
    }

    #[test]
    fn zero_min_rate_is_trivially_feasible() {
        let problem = PlacementProblem::new(array![[1e8]], vec![1e8], 0.0).unwrap();
        let sol = gspa_solve(&problem, &[[0.0; 3]], &AdmmConfig::default()).unwrap();
        assert!(sol.active_columns.is_empty());
        assert!(sol.feasible);
    }

    #[test]
    fn verify_feasibility_flags_violations_with_indices() {
        let problem =
            PlacementProblem::new(array![[1e8, 5e7], [1e8, 5e7]], vec![1e8, 1e8], 2e7).unwrap();
        let good = PlacementSolution {
            active_columns: vec![0],
            rates: array![[2e7], [2e7]],
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            feasible: false,
        };
        assert!(verify_feasibility(&problem, &good).feasible);

        // Row short of the demanded rate by a relative 1e−3.
        let short = PlacementSolution {
            rates: array![[2e7 * (1.0 - 1e-3)], [2e7]],
            ..good.clone()
        };
        let report = verify_feasibility(&problem, &short);
        assert!(!report.feasible);
        assert!(report.violations[0].contains("terminal 0"), "{:?}", report.violations);

        // Rate above the link capacity.
        let over = PlacementSolution {
            active_columns: vec![1],
            rates: array![[6e7], [2e7]],
            ..good
        };
        let report = verify_feasibility(&problem, &over);
        assert!(!report.feasible);
        assert!(
            report
                .violations
                .iter()
                .any(|v| v.contains("terminal 0") && v.contains("column 1")),
            "{:?}",
            report.violations
        );
    }

    #[test]
    fn fixed_point_is_stable() {
        // Start at an exact consensus fixed point of the single-link
        // instance and check one sweep barely moves it.
        let problem = PlacementProblem::new(array![[10.0]], vec![10.0], 4.0).unwrap();
        let config = AdmmConfig {
            rho: 1.0,
            ..AdmmConfig::default()
        };
        let mut state = AdmmState::new(&problem);
        state.r = array![[4.0]];
        state.z = array![[4.0]];
        // At the fixed point the X-step's shrinkage by w/ρ must be undone by
        // the dual: u = −w/ρ (the KKT stationarity of the peak variable).
        state.u = array![[-1.0]];
        gspa_iterate(&problem, &mut state, &config).unwrap();
        assert_relative_eq!(state.r[[0, 0]], 4.0, epsilon = 1e-9);
        assert_relative_eq!(state.z[[0, 0]], 4.0, epsilon = 1e-9);
        assert_relative_eq!(state.u[[0, 0]], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn single_variable_admm_converges_quickly() {
        let problem = PlacementProblem::new(array![[10.0]], vec![10.0], 4.0).unwrap();
        let config = AdmmConfig {
            rho: 1.0,
            max_iters: 500,
            reweight_rounds: 1,
            ..AdmmConfig::default()
        };
        let run = admm_solve(&problem, &config).unwrap();
        assert!(run.converged);
        assert_relative_eq!(run.state.z[[0, 0]], 4.0, epsilon = 1e-2);
    }
}
