//! Dense linear programming: a small two-phase simplex solver plus the three
//! problem builders used by the placement pipeline:
//!
//! * the relaxed placement program (rates `R` and per-column peaks `s`,
//!   objective `wᵀs`) — the exact optimisation target of the ADMM solver and
//!   the feasibility check of the exhaustive oracle;
//! * the minimum-connections program (entrywise-weighted `1ᵀR̄1`);
//! * the maximum-served-users program (shortfall variables `y`, objective
//!   `1ᵀy`).
//!
//! The solver is a textbook primal simplex with *bounded variables*: variable
//! upper bounds are honoured in the ratio test instead of being expanded into
//! constraint rows, which keeps the placement instances (whose `0 ≤ r ≤ c`
//! boxes would otherwise dominate the row count) small and fast. Bland's rule
//! protects against cycling; instances here are desk-scale, so exactness is
//! preferred over speed.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::solver_core::PlacementProblem;

/// Outcome classification of a linear program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    /// A vertex-optimal solution was found.
    Optimal,
    /// The constraints admit no point.
    Infeasible,
    /// The objective decreases without bound over the feasible set.
    Unbounded,
}

/// A dense linear program
/// `min cᵀx  s.t.  A_eq x = b_eq,  A_ub x ≤ b_ub,  lower ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Objective coefficients `c`, one per variable.
    pub objective: Array1<f64>,
    /// Equality constraint matrix, shape `(m_eq, n)`.
    pub a_eq: Array2<f64>,
    /// Equality right-hand side, length `m_eq`.
    pub b_eq: Array1<f64>,
    /// Inequality (`≤`) constraint matrix, shape `(m_ub, n)`.
    pub a_ub: Array2<f64>,
    /// Inequality right-hand side, length `m_ub`.
    pub b_ub: Array1<f64>,
    /// Per-variable lower bounds; `-∞` allowed.
    pub lower: Vec<f64>,
    /// Per-variable upper bounds; `+∞` allowed.
    pub upper: Vec<f64>,
}

/// Solution of a [`LinearProgram`]. For non-optimal statuses the variable
/// values are empty and the objective is NaN.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Outcome classification.
    pub status: LpStatus,
    /// Optimal variable values (a vertex of the feasible set).
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub objective: f64,
}

impl LinearProgram {
    /// Checks dimensional consistency, finiteness of the matrix data, and
    /// `lower ≤ upper` for every variable.
    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.a_eq.ncols() != n && self.a_eq.nrows() > 0 {
            return Err(Error::Invalid(format!(
                "equality matrix has {} columns for {n} variables",
                self.a_eq.ncols()
            )));
        }
        if self.a_ub.ncols() != n && self.a_ub.nrows() > 0 {
            return Err(Error::Invalid(format!(
                "inequality matrix has {} columns for {n} variables",
                self.a_ub.ncols()
            )));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_ub.nrows() != self.b_ub.len() {
            return Err(Error::Invalid(
                "constraint matrix and right-hand side lengths disagree".into(),
            ));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Invalid("bound vectors must have one entry per variable".into()));
        }
        let finite = self
            .objective
            .iter()
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .chain(self.a_ub.iter())
            .chain(self.b_ub.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("LP data must be finite".into()));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
            {
                return Err(Error::Invalid(format!(
                    "variable {j} has inconsistent bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// How an original variable maps onto the internal non-negative variables.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lo + y[col]`, `y ∈ [0, hi−lo]`.
    Shift { col: usize, lo: f64 },
    /// `x = hi − y[col]`, `y ∈ [0, ∞)` (lower bound −∞).
    Mirror { col: usize, hi: f64 },
    /// `x = y[pos] − y[neg]`, both free in `[0, ∞)`.
    Split { pos: usize, neg: usize },
}

/// Where a variable currently sits in the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Basic(usize),
    Lower,
    Upper,
}

const ENTER_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 200_000;

/// Solves the linear program with a two-phase bounded-variable primal
/// simplex (Bland's rule). Returns a vertex-optimal solution for feasible
/// bounded instances and classifies infeasible/unbounded ones; an error is
/// returned only when pivoting stalls beyond the iteration budget, which
/// indicates degeneracy beyond the pivot tolerance.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n_orig = lp.objective.len();

    // --- Transform original variables to internal y ≥ 0 with upper bounds.
    let mut maps = Vec::with_capacity(n_orig);
    let mut hi_int: Vec<f64> = Vec::new();
    for j in 0..n_orig {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: hi_int.len(), lo });
            hi_int.push(hi - lo);
        } else if hi.is_finite() {
            maps.push(VarMap::Mirror { col: hi_int.len(), hi });
            hi_int.push(f64::INFINITY);
        } else {
            maps.push(VarMap::Split { pos: hi_int.len(), neg: hi_int.len() + 1 });
            hi_int.push(f64::INFINITY);
            hi_int.push(f64::INFINITY);
        }
    }
    let n_struct = hi_int.len();

    let m_eq = lp.a_eq.nrows();
    let m_ub = lp.a_ub.nrows();
    let m = m_eq + m_ub;
    let n_slack = m_ub;
    let n_int = n_struct + n_slack;
    hi_int.extend(std::iter::repeat(f64::INFINITY).take(n_slack));

    // Internal constraint system A y = b (slacks turn ≤ rows into equalities).
    let mut a = Array2::<f64>::zeros((m, n_int));
    let mut b = Array1::<f64>::zeros(m);
    let mut c_int = Array1::<f64>::zeros(n_int);
    for row in 0..m {
        let (src, rhs) = if row < m_eq {
            (lp.a_eq.row(row), lp.b_eq[row])
        } else {
            (lp.a_ub.row(row - m_eq), lp.b_ub[row - m_eq])
        };
        let mut shift = 0.0;
        for j in 0..n_orig {
            let coef = src[j];
            if coef == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lo } => {
                    a[[row, col]] += coef;
                    shift += coef * lo;
                }
                VarMap::Mirror { col, hi } => {
                    a[[row, col]] -= coef;
                    shift += coef * hi;
                }
                VarMap::Split { pos, neg } => {
                    a[[row, pos]] += coef;
                    a[[row, neg]] -= coef;
                }
            }
        }
        if row >= m_eq {
            a[[row, n_struct + (row - m_eq)]] = 1.0;
        }
        b[row] = rhs - shift;
    }
    for j in 0..n_orig {
        let coef = lp.objective[j];
        match maps[j] {
            VarMap::Shift { col, .. } => c_int[col] += coef,
            VarMap::Mirror { col, .. } => c_int[col] -= coef,
            VarMap::Split { pos, neg } => {
                c_int[pos] += coef;
                c_int[neg] -= coef;
            }
        }
    }

    // Row scaling: divide each row by its largest coefficient magnitude so
    // the pivot tolerances below are meaningful across input scales.
    for row in 0..m {
        let mut scale = b[row].abs();
        for j in 0..n_int {
            scale = scale.max(a[[row, j]].abs());
        }
        if scale > 0.0 {
            for j in 0..n_int {
                a[[row, j]] /= scale;
            }
            b[row] /= scale;
        }
    }

    // Phase 1: flip rows to non-negative rhs, add one artificial per row.
    let total = n_int + m;
    let mut t = Array2::<f64>::zeros((m, total));
    let mut rhs = Array1::<f64>::zeros(m);
    for row in 0..m {
        let sign = if b[row] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n_int {
            t[[row, j]] = sign * a[[row, j]];
        }
        t[[row, n_int + row]] = 1.0;
        rhs[row] = sign * b[row];
    }
    let mut hi = hi_int;
    hi.extend(std::iter::repeat(f64::INFINITY).take(m));

    // Row normalization keeps every scaled rhs ≤ 1, so phase-1 artificial
    // values are per-row *relative* violations; record the pre-pivot scale
    // for the feasibility verdict below.
    let rhs_scale = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut position = vec![Pos::Lower; total];
    let mut basis: Vec<usize> = (0..m).map(|i| n_int + i).collect();
    for (row, &j) in basis.iter().enumerate() {
        position[j] = Pos::Basic(row);
    }

    // Phase-1 reduced costs for cost vector (0,…,0,1,…,1): artificials are
    // basic, so z_j = −Σ_i T[i,j] on non-artificial columns.
    let mut cost = Array1::<f64>::zeros(total);
    for j in 0..n_int {
        let mut s = 0.0;
        for row in 0..m {
            s += t[[row, j]];
        }
        cost[j] = -s;
    }

    let mut st = Simplex {
        t: &mut t,
        rhs: &mut rhs,
        cost: &mut cost,
        hi: &hi,
        position: &mut position,
        basis: &mut basis,
        n_eligible: n_int,
        pivots: 0,
    };
    st.run()?; // phase-1 objective is bounded below by 0, never unbounded

    let phase1_obj: f64 = {
        let xb = st.basic_values();
        st.basis
            .iter()
            .enumerate()
            .filter(|(_, &j)| j >= n_int)
            .map(|(i, _)| xb[i])
            .sum()
    };
    if phase1_obj > FEAS_TOL * (1.0 + rhs_scale) {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
        });
    }

    // Drive remaining (zero-valued) artificials out of the basis; rows where
    // no structural pivot exists are redundant and dropped.
    let mut drop_rows = Vec::new();
    for row in 0..m {
        if st.basis[row] < n_int {
            continue;
        }
        let mut pivot_col = None;
        for j in 0..n_int {
            if !matches!(st.position[j], Pos::Basic(_)) && st.t[[row, j]].abs() > PIVOT_TOL {
                pivot_col = Some(j);
                break;
            }
        }
        match pivot_col {
            Some(j) => st.pivot(row, j, Pos::Lower),
            None => drop_rows.push(row),
        }
    }

    // Rebuild the working arrays without redundant rows and artificials.
    let keep: Vec<usize> = (0..m).filter(|r| !drop_rows.contains(r)).collect();
    let m2 = keep.len();
    let mut t2 = Array2::<f64>::zeros((m2, n_int));
    let mut rhs2 = Array1::<f64>::zeros(m2);
    let mut basis2 = Vec::with_capacity(m2);
    for (new_row, &old_row) in keep.iter().enumerate() {
        for j in 0..n_int {
            t2[[new_row, j]] = t[[old_row, j]];
        }
        rhs2[new_row] = rhs[old_row];
        basis2.push(basis[old_row]);
    }
    let mut position2 = position[..n_int].to_vec();
    for (new_row, &j) in basis2.iter().enumerate() {
        position2[j] = Pos::Basic(new_row);
    }
    let hi2 = hi[..n_int].to_vec();

    // Phase-2 reduced costs for the real objective under the current basis.
    let mut cost2 = c_int.clone();
    for row in 0..m2 {
        let cb = c_int[basis2[row]];
        if cb != 0.0 {
            for j in 0..n_int {
                cost2[j] -= cb * t2[[row, j]];
            }
        }
    }

    let mut st2 = Simplex {
        t: &mut t2,
        rhs: &mut rhs2,
        cost: &mut cost2,
        hi: &hi2,
        position: &mut position2,
        basis: &mut basis2,
        n_eligible: n_int,
        pivots: 0,
    };
    if !st2.run()? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NAN,
        });
    }

    // Extract internal values and map back to the original variables.
    let xb = st2.basic_values();
    let mut y = vec![0.0f64; n_int];
    for j in 0..n_int {
        y[j] = match st2.position[j] {
            Pos::Basic(row) => xb[row].max(0.0),
            Pos::Lower => 0.0,
            Pos::Upper => hi2[j],
        };
    }
    let mut x = vec![0.0f64; n_orig];
    for j in 0..n_orig {
        x[j] = match maps[j] {
            VarMap::Shift { col, lo } => lo + y[col],
            VarMap::Mirror { col, hi } => hi - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        };
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}

/// Working state of the bounded-variable simplex on one phase.
struct Simplex<'a> {
    t: &'a mut Array2<f64>,
    rhs: &'a mut Array1<f64>,
    cost: &'a mut Array1<f64>,
    hi: &'a Vec<f64>,
    position: &'a mut Vec<Pos>,
    basis: &'a mut Vec<usize>,
    /// Columns `< n_eligible` may enter the basis (excludes artificials in
    /// the relevant phase).
    n_eligible: usize,
    pivots: usize,
}

impl Simplex<'_> {
    /// Values of the basic variables:
    /// `x_B = B⁻¹b − Σ_{j at upper} (B⁻¹A_j)·hi_j`.
    fn basic_values(&self) -> Array1<f64> {
        let m = self.t.nrows();
        let mut xb = self.rhs.clone();
        for j in 0..self.position.len() {
            if self.position[j] == Pos::Upper {
                let hj = self.hi[j];
                for row in 0..m {
                    xb[row] -= self.t[[row, j]] * hj;
                }
            }
        }
        xb
    }

    /// Gauss-Jordan pivot bringing column `j` into the basis at `row`; the
    /// leaving variable is parked at `leave_to`.
    fn pivot(&mut self, row: usize, j: usize, leave_to: Pos) {
        let m = self.t.nrows();
        let total = self.t.ncols();
        let piv = self.t[[row, j]];
        for col in 0..total {
            self.t[[row, col]] /= piv;
        }
        self.rhs[row] /= piv;
        for r in 0..m {
            if r == row {
                continue;
            }
            let factor = self.t[[r, j]];
            if factor != 0.0 {
                for col in 0..total {
                    let v = self.t[[row, col]];
                    self.t[[r, col]] -= factor * v;
                }
                self.rhs[r] -= factor * self.rhs[row];
            }
        }
        let factor = self.cost[j];
        if factor != 0.0 {
            for col in 0..total {
                let v = self.t[[row, col]];
                self.cost[col] -= factor * v;
            }
        }
        let leaving = self.basis[row];
        self.position[leaving] = leave_to;
        self.basis[row] = j;
        self.position[j] = Pos::Basic(row);
    }

    /// Runs the phase to optimality. Returns `false` when the objective is
    /// unbounded below, `Ok(true)` at an optimal basis.
    fn run(&mut self) -> Result<bool> {
        let m = self.t.nrows();
        loop {
            self.pivots += 1;
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Invalid(
                    "simplex exceeded its pivot budget; the instance is degenerate \
                     beyond the pivot tolerance"
                        .into(),
                ));
            }

            // Bland's rule: the lowest-index improving nonbasic column.
            let mut entering = None;
            for j in 0..self.n_eligible {
                if self.hi[j] <= 0.0 {
                    continue; // fixed variable
                }
                match self.position[j] {
                    Pos::Lower if self.cost[j] < -ENTER_TOL => {
                        entering = Some((j, 1.0));
                    }
                    Pos::Upper if self.cost[j] > ENTER_TOL => {
                        entering = Some((j, -1.0));
                    }
                    _ => continue,
                }
                break;
            }
            let Some((j, dir)) = entering else {
                return Ok(true);
            };

            // Ratio test: largest step Δ keeping every basic variable inside
            // its bounds, and the entering variable inside its own.
            let xb = self.basic_values();
            let mut best: Option<(f64, usize)> = None; // (Δ, row)
            for row in 0..m {
                let e = dir * self.t[[row, j]];
                let bvar = self.basis[row];
                if e > PIVOT_TOL {
                    let delta = (xb[row] / e).max(0.0);
                    if best.map_or(true, |(d, r)| {
                        delta < d - 1e-12 || (delta <= d + 1e-12 && bvar < self.basis[r])
                    }) {
                        best = Some((delta, row));
                    }
                } else if e < -PIVOT_TOL && self.hi[bvar].is_finite() {
                    let delta = ((self.hi[bvar] - xb[row]) / -e).max(0.0);
                    if best.map_or(true, |(d, r)| {
                        delta < d - 1e-12 || (delta <= d + 1e-12 && bvar < self.basis[r])
                    }) {
                        best = Some((delta, row));
                    }
                }
            }
            let flip = self.hi[j]; // Δ at which the entering variable hits its other bound

            match best {
                Some((delta, row)) if !flip.is_finite() || delta <= flip => {
                    // Leaving variable parks at the bound it ran into.
                    let e = dir * self.t[[row, j]];
                    let leave_to = if e > 0.0 { Pos::Lower } else { Pos::Upper };
                    self.pivot(row, j, leave_to);
                    if dir < 0.0 {
                        // The entering variable was at its upper bound; after
                        // the pivot it is basic, which the position tag and
                        // x_B recomputation already reflect.
                    }
                }
                _ if flip.is_finite() => {
                    // Bound flip: no basis change.
                    self.position[j] = if dir > 0.0 { Pos::Upper } else { Pos::Lower };
                }
                _ => return Ok(false), // unbounded ray
            }
        }
    }
}

/// Builds the relaxed placement program for `problem`:
/// variables are the rate matrix `R` (row-major) followed by the per-column
/// peaks `s`; the objective is `Σ_g w_g·s_g` subject to
/// `R·1 = min_rate·1`, `Rᵀ·1 ≤ backhaul`, `0 ≤ R ≤ C` (as variable bounds)
/// and `r_{m,g} ≤ s_g`. Its optimum is the exact convergence target of the
/// ADMM solver.
pub fn build_relaxed_lp(problem: &PlacementProblem) -> LinearProgram {
    let (m, g) = problem.capacity.dim();
    let n = m * g + g;
    let r_idx = |row: usize, col: usize| row * g + col;
    let s_idx = |col: usize| m * g + col;

    let mut objective = Array1::<f64>::zeros(n);
    for col in 0..g {
        objective[s_idx(col)] = problem.weights[col];
    }

    let mut a_eq = Array2::<f64>::zeros((m, n));
    let mut b_eq = Array1::<f64>::zeros(m);
    for row in 0..m {
        for col in 0..g {
            a_eq[[row, r_idx(row, col)]] = 1.0;
        }
        b_eq[row] = problem.min_rate;
    }

    let m_ub = g + m * g;
    let mut a_ub = Array2::<f64>::zeros((m_ub, n));
    let mut b_ub = Array1::<f64>::zeros(m_ub);
    for col in 0..g {
        for row in 0..m {
            a_ub[[col, r_idx(row, col)]] = 1.0;
        }
        b_ub[col] = problem.backhaul[col];
    }
    for row in 0..m {
        for col in 0..g {
            let cons = g + r_idx(row, col);
            a_ub[[cons, r_idx(row, col)]] = 1.0;
            a_ub[[cons, s_idx(col)]] = -1.0;
            b_ub[cons] = 0.0;
        }
    }

    let mut lower = vec![0.0; n];
    let mut upper = vec![f64::INFINITY; n];
    for row in 0..m {
        for col in 0..g {
            upper[r_idx(row, col)] = problem.capacity[[row, col]];
        }
    }
    // s is implicitly non-negative through r ≥ 0 and r ≤ s; make it explicit.
    for col in 0..g {
        lower[s_idx(col)] = 0.0;
    }

    LinearProgram {
        objective,
        a_eq,
        b_eq,
        a_ub,
        b_ub,
        lower,
        upper,
    }
}

fn validate_rate_inputs(capacities: &Array2<f64>, backhaul: &[f64], min_rate: f64) -> Result<()> {
    if capacities.ncols() != backhaul.len() {
        return Err(Error::Invalid(format!(
            "capacity matrix has {} columns but backhaul has {} entries",
            capacities.ncols(),
            backhaul.len()
        )));
    }
    if capacities.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("capacities must be finite and non-negative".into()));
    }
    if backhaul.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("backhaul must be finite and non-negative".into()));
    }
    if !min_rate.is_finite() || min_rate < 0.0 {
        return Err(Error::Invalid(format!(
            "minimum rate must be finite and non-negative, got {min_rate}"
        )));
    }
    Ok(())
}

/// Minimises the number of terminal↔station connections needed to give every
/// terminal at least `min_rate`: solves an entrywise-weighted LP
/// (`min Σ w_{m,n}·r̄_{m,n}` with row sums ≥ `min_rate`, column sums ≤
/// backhaul, `0 ≤ r̄ ≤ C`), then re-solves `reweight_rounds` times with
/// weights `1/(r̄+ε)`, `ε = 1e−3·min_rate`, to concentrate the support.
/// Returns the final rate matrix and the number of entries above
/// `1e−9·min_rate`.
pub fn min_connections(
    capacities: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
    reweight_rounds: usize,
) -> Result<(Array2<f64>, usize)> {
    validate_rate_inputs(capacities, backhaul, min_rate)?;
    let (m, n) = capacities.dim();
    if min_rate == 0.0 {
        return Ok((Array2::zeros((m, n)), 0));
    }
    for row in 0..m {
        let total: f64 = capacities.row(row).sum();
        if total < min_rate {
            return Err(Error::InsufficientRowCapacity {
                gt: row,
                total,
                required: min_rate,
            });
        }
    }

    let epsilon = 1e-3 * min_rate;
    let mut weights = Array2::<f64>::ones((m, n));
    let mut rates = Array2::<f64>::zeros((m, n));
    for round in 0..=reweight_rounds {
        let lp = build_entrywise_lp(capacities, backhaul, min_rate, &weights);
        let sol = solve_lp(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::LpInfeasible(format!(
                "minimum-connections program is {:?} (backhaul too scarce for the demanded rates)",
                sol.status
            )));
        }
        for row in 0..m {
            for col in 0..n {
                rates[[row, col]] = sol.x[row * n + col].clamp(0.0, capacities[[row, col]]);
            }
        }
        if round < reweight_rounds {
            weights = rates.mapv(|r| 1.0 / (r + epsilon));
        }
    }
    let mut count = rates.iter().filter(|&&r| r > 1e-9 * min_rate).count();

    // Reweighting concentrates supports well but stalls on symmetric ties
    // (equal rates produce equal weights, and the next solve has no reason to
    // break the split). `m` connections is the unbeatable floor, so when the
    // weighted rounds end above it, fall back to an exact search for a
    // one-station-per-terminal routing; if one exists it is optimal.
    if count > m {
        if let Some(assignment) = single_station_assignment(capacities, backhaul, min_rate) {
            rates.fill(0.0);
            for (row, &col) in assignment.iter().enumerate() {
                rates[[row, col]] = min_rate;
            }
            count = m;
        }
    }
    Ok((rates, count))
}

/// Searches for a routing that serves every terminal through exactly one
/// station: terminal `m` may use station `c` only if the single link carries
/// the whole demand (`capacities[m][c] ≥ min_rate`, with 1e−9 relative
/// slack), and station `c` hosts at most `⌊backhaul_c/min_rate⌋` terminals.
/// This is a capacity-constrained bipartite matching, solved exactly with
/// augmenting paths (terminals in index order, stations probed in index
/// order, so the result is deterministic). Returns the per-terminal station
/// choices, or `None` when no such routing exists.
fn single_station_assignment(
    capacities: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
) -> Option<Vec<usize>> {
    let (m, n) = capacities.dim();
    let tol = 1e-9 * min_rate;
    let slots: Vec<usize> = backhaul
        .iter()
        .map(|&b| (((b + tol) / min_rate).floor().max(0.0) as usize).min(m))
        .collect();
    let allowed: Vec<Vec<usize>> = (0..m)
        .map(|row| {
            (0..n)
                .filter(|&c| slots[c] > 0 && capacities[[row, c]] >= min_rate - tol)
                .collect()
        })
        .collect();

    fn augment(
        row: usize,
        allowed: &[Vec<usize>],
        slots: &[usize],
        occupants: &mut Vec<Vec<usize>>,
        visited: &mut [bool],
    ) -> bool {
        for &c in &allowed[row] {
            if visited[c] {
                continue;
            }
            visited[c] = true;
            if occupants[c].len() < slots[c] {
                occupants[c].push(row);
                return true;
            }
            for i in 0..occupants[c].len() {
                let displaced = occupants[c][i];
                if augment(displaced, allowed, slots, occupants, visited) {
                    occupants[c][i] = row;
                    return true;
                }
            }
        }
        false
    }

    let mut occupants: Vec<Vec<usize>> = vec![Vec::new(); n];
    for row in 0..m {
        let mut visited = vec![false; n];
        if !augment(row, &allowed, &slots, &mut occupants, &mut visited) {
            return None;
        }
    }
    let mut choice = vec![usize::MAX; m];
    for (c, rows) in occupants.iter().enumerate() {
        for &row in rows {
            choice[row] = c;
        }
    }
    Some(choice)
}

/// Shared builder for the entrywise-weighted rate LP of [`min_connections`].
fn build_entrywise_lp(
    capacities: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
    weights: &Array2<f64>,
) -> LinearProgram {
    let (m, n) = capacities.dim();
    let nv = m * n;
    let mut objective = Array1::<f64>::zeros(nv);
    for row in 0..m {
        for col in 0..n {
            objective[row * n + col] = weights[[row, col]];
        }
    }
    // Row rate floors (as −Σ r ≤ −min_rate) then column backhaul caps.
    let mut a_ub = Array2::<f64>::zeros((m + n, nv));
    let mut b_ub = Array1::<f64>::zeros(m + n);
    for row in 0..m {
        for col in 0..n {
            a_ub[[row, row * n + col]] = -1.0;
        }
        b_ub[row] = -min_rate;
    }
    for col in 0..n {
        for row in 0..m {
            a_ub[[m + col, row * n + col]] = 1.0;
        }
        b_ub[m + col] = backhaul[col];
    }
    let lower = vec![0.0; nv];
    let upper: Vec<f64> = (0..nv).map(|i| capacities[[i / n, i % n]]).collect();
    LinearProgram {
        objective,
        a_eq: Array2::zeros((0, nv)),
        b_eq: Array1::zeros(0),
        a_ub,
        b_ub,
        lower,
        upper,
    }
}

/// Maximises the number of terminals that can be served at `min_rate` by the
/// given stations: minimises the total rate shortfall `1ᵀy` subject to
/// `min_rate·1 − R̄·1 ≤ y`, `y ≥ 0`, column sums ≤ backhaul and
/// `0 ≤ R̄ ≤ C`. Always feasible (`R̄ = 0`, `y = min_rate·1`). Returns the
/// rate matrix and the count of rows whose sum reaches
/// `min_rate·(1 − 1e−9)`.
pub fn max_served_users(
    capacities: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
) -> Result<(Array2<f64>, usize)> {
    validate_rate_inputs(capacities, backhaul, min_rate)?;
    let (m, n) = capacities.dim();
    let extract = |sol: &LpSolution| {
        let mut rates = Array2::<f64>::zeros((m, n));
        for row in 0..m {
            for col in 0..n {
                rates[[row, col]] = sol.x[row * n + col].clamp(0.0, capacities[[row, col]]);
            }
        }
        rates
    };

    let sol = solve_lp(&build_shortfall_lp(capacities, backhaul, min_rate, &[]))?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Invalid(format!(
            "served-users program unexpectedly came back {:?} although it is \
             feasible and bounded by construction",
            sol.status
        )));
    }
    let total_shortfall = sol.objective;
    let mut rates = extract(&sol);
    concentrate_shortfall(&mut rates, capacities, min_rate);

    // The shortfall objective only fixes the *total* deficit; which rows
    // absorb it is a tie, and the solver's vertex may spread it over more
    // rows than necessary. Greedily pin still-deficient rows to zero
    // shortfall (cheapest deficit first) and re-solve; a pin is kept only
    // when the optimum is unchanged, so the returned allocation always
    // attains the minimum total shortfall. Pinning a superset never helps a
    // row that a subset could not, so one pass over the rows suffices.
    let served_mask = |rates: &Array2<f64>| -> Vec<bool> {
        (0..m)
            .map(|row| rates.row(row).sum() >= min_rate * (1.0 - 1e-9))
            .collect()
    };
    let budget = total_shortfall + 1e-6 * min_rate.max(total_shortfall);
    let mut pinned = served_mask(&rates);
    if pinned.iter().any(|&s| !s) {
        let mut candidates: Vec<(usize, f64)> = (0..m)
            .filter(|&row| !pinned[row])
            .map(|row| (row, min_rate - rates.row(row).sum()))
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(row, _) in &candidates {
            if pinned[row] {
                continue;
            }
            let mut attempt = pinned.clone();
            attempt[row] = true;
            let forced: Vec<usize> = (0..m).filter(|&r| attempt[r]).collect();
            let trial = solve_lp(&build_shortfall_lp(capacities, backhaul, min_rate, &forced))?;
            if trial.status == LpStatus::Optimal && trial.objective <= budget {
                rates = extract(&trial);
                concentrate_shortfall(&mut rates, capacities, min_rate);
                for (r, served) in served_mask(&rates).into_iter().enumerate() {
                    pinned[r] = pinned[r] || served;
                }
            }
        }
    }

    // The greedy pass only grows the solver's initial served set, but the
    // largest face-optimal served set need not contain it (serving rows B
    // and C may require giving up A). On small programs settle the tie
    // exactly: sweep served-row subsets from largest to smallest and adopt
    // the first one servable without raising the total shortfall.
    let mut served = served_mask(&rates).iter().filter(|&&s| s).count();
    if served < m && m <= 12 && m * n <= 64 {
        'sizes: for k in ((served + 1)..=m).rev() {
            for mask in 1u32..(1u32 << m) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let forced: Vec<usize> = (0..m).filter(|&r| mask >> r & 1 == 1).collect();
                let trial =
                    solve_lp(&build_shortfall_lp(capacities, backhaul, min_rate, &forced))?;
                if trial.status == LpStatus::Optimal && trial.objective <= budget {
                    rates = extract(&trial);
                    concentrate_shortfall(&mut rates, capacities, min_rate);
                    break 'sizes;
                }
            }
        }
        served = served_mask(&rates).iter().filter(|&&s| s).count();
    }
    Ok((rates, served))
}

/// Builds the shortfall LP behind [`max_served_users`]: variables are the
/// `m·n` rates followed by `m` per-row shortfalls `y`, the objective is
/// `1ᵀy`, each row satisfies `min_rate − Σ_c r ≤ y_row`, columns respect
/// backhaul, and `0 ≤ r ≤ C`. Rows listed in `forced` get `y` clamped to 0,
/// i.e. they must be fully served.
fn build_shortfall_lp(
    capacities: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
    forced: &[usize],
) -> LinearProgram {
    let (m, n) = capacities.dim();
    let nv = m * n + m; // rates then shortfalls
    let r_idx = |row: usize, col: usize| row * n + col;
    let y_idx = |row: usize| m * n + row;

    let mut objective = Array1::<f64>::zeros(nv);
    for row in 0..m {
        objective[y_idx(row)] = 1.0;
    }
    let mut a_ub = Array2::<f64>::zeros((m + n, nv));
    let mut b_ub = Array1::<f64>::zeros(m + n);
    for row in 0..m {
        for col in 0..n {
            a_ub[[row, r_idx(row, col)]] = -1.0;
        }
        a_ub[[row, y_idx(row)]] = -1.0;
        b_ub[row] = -min_rate;
    }
    for col in 0..n {
        for row in 0..m {
            a_ub[[m + col, r_idx(row, col)]] = 1.0;
        }
        b_ub[m + col] = backhaul[col];
    }
    let lower = vec![0.0; nv];
    let mut upper = vec![f64::INFINITY; nv];
    for row in 0..m {
        for col in 0..n {
            upper[r_idx(row, col)] = capacities[[row, col]];
        }
    }
    for &row in forced {
        upper[y_idx(row)] = 0.0;
    }
    LinearProgram {
        objective,
        a_eq: Array2::zeros((0, nv)),
        b_eq: Array1::zeros(0),
        a_ub,
        b_ub,
        lower,
        upper,
    }
}

/// Reshuffles rate between rows of a shortfall-optimal allocation so that the
/// total shortfall stays put but lands on as few rows as possible.
///
/// The shortfall program only pins the *sum* of the per-row deficits; its
/// optimal face usually contains many vertices that spread one station's
/// supply across several under-served rows, and the solver is free to return
/// any of them. At such a point the only moves that keep every constraint and
/// the objective intact are transfers between two still-deficient rows
/// through a shared station (a donation out of a served row's surplus would
/// lower the total shortfall, contradicting optimality, so those only mop up
/// solver round-off). Each round therefore picks the cheapest-to-complete
/// deficient row and tries to fill it entirely from the other deficient rows'
/// rate, capped per station by the receiver's remaining link capacity;
/// partial fills are never committed because they reshuffle deficit without
/// serving anyone. Every committed fill serves one more row, so the loop ends
/// after at most `m` rounds.
fn concentrate_shortfall(rates: &mut Array2<f64>, capacities: &Array2<f64>, min_rate: f64) {
    if min_rate <= 0.0 {
        return;
    }
    let (m, n) = rates.dim();
    let deficit_tol = 1e-9 * min_rate;
    let take_tol = 1e-12 * min_rate;
    loop {
        let deficit = |row: usize, rates: &Array2<f64>| min_rate - rates.row(row).sum();
        let mut targets: Vec<(usize, f64)> = (0..m)
            .map(|row| (row, deficit(row, rates)))
            .filter(|&(_, d)| d > deficit_tol)
            .collect();
        targets.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let mut filled = false;
        for &(target, need) in &targets {
            // Deficient donors can give away everything (their row is lost
            // anyway); served donors only their surplus, largest first.
            let mut donors: Vec<(usize, f64)> = Vec::new();
            let mut surplus: Vec<(usize, f64)> = Vec::new();
            for d in 0..m {
                if d == target {
                    continue;
                }
                let gap = deficit(d, rates);
                if gap > deficit_tol {
                    donors.push((d, gap));
                } else if -gap > take_tol {
                    surplus.push((d, -gap));
                }
            }
            donors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            surplus.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut room_left: Vec<f64> = vec![f64::INFINITY; m];
            for &(d, extra) in &surplus {
                room_left[d] = extra;
            }
            let order: Vec<usize> = donors
                .iter()
                .chain(surplus.iter())
                .map(|&(d, _)| d)
                .collect();

            let mut plan: Vec<(usize, usize, f64)> = Vec::new();
            let mut remaining = need;
            'cols: for col in 0..n {
                let mut room = (capacities[[target, col]] - rates[[target, col]]).min(remaining);
                for &d in &order {
                    let take = rates[[d, col]].min(room).min(remaining).min(room_left[d]);
                    if take <= take_tol {
                        continue;
                    }
                    plan.push((d, col, take));
                    room -= take;
                    remaining -= take;
                    room_left[d] -= take;
                    if remaining <= take_tol {
                        break 'cols;
                    }
                    if room <= take_tol {
                        break;
                    }
                }
            }
            if remaining <= take_tol {
                for &(d, col, amount) in &plan {
                    rates[[d, col]] -= amount;
                    rates[[target, col]] += amount;
                }
                filled = true;
                break;
            }
        }
        if !filled {
            break;
        }
    }
}
