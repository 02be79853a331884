//! Shared numerical oracles and instance generators for the integration
//! suites. Every oracle here deliberately takes a different route than the
//! library code it is checked against: quadrature instead of voxel
//! traversal, alternating projections instead of root bisection, exhaustive
//! enumeration instead of screened search.

#![allow(dead_code)]

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use skyplace::geometry::Point3;
use skyplace::propagation::SpatialLossField;
use skyplace::solver_core::PlacementProblem;

/// Midpoint-rule quadrature of the loss-field line integral: samples the
/// field at `steps` points along the segment, looks each point up by nearest
/// voxel centre (clamped at the borders), and scales by the square-root
/// distance factor. Converges to the traversal result as `steps` grows since
/// the integrand is piecewise constant with finitely many jumps.
pub fn riemann_integral(x1: Point3, x2: Point3, slf: &SpatialLossField, steps: usize) -> f64 {
    let grid = &slf.grid;
    let length = skyplace::geometry::dist(x1, x2);
    let mut acc = 0.0;
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let p = [
            x1[0] + t * (x2[0] - x1[0]),
            x1[1] + t * (x2[1] - x1[1]),
            x1[2] + t * (x2[2] - x1[2]),
        ];
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let rel = (p[a] - grid.origin[a]) / grid.spacing[a];
            let nearest = rel.round().max(0.0) as usize;
            idx[a] = nearest.min(grid.dims[a] - 1);
        }
        acc += slf.value(idx[0], idx[1], idx[2]);
    }
    length.sqrt() * acc / steps as f64
}

/// Euclidean projection onto the box `[0, caps]` intersected with the
/// hyperplane `1ᵀz = total`, computed by Dykstra's alternating projections.
pub fn project_box_hyperplane(v: &[f64], caps: &[f64], total: f64, sweeps: usize) -> Vec<f64> {
    let n = v.len();
    let mut z = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for _ in 0..sweeps {
        for i in 0..n {
            let y = (z[i] + p[i]).clamp(0.0, caps[i]);
            p[i] += z[i] - y;
            z[i] = y;
        }
        let shift = (total - z.iter().zip(&q).map(|(zi, qi)| zi + qi).sum::<f64>()) / n as f64;
        for i in 0..n {
            let y = z[i] + q[i] + shift;
            q[i] += z[i] - y;
            z[i] = y;
        }
    }
    z
}

/// Euclidean projection onto `{r : r ≤ s·1, 1ᵀr ≤ budget}`: water-filling
/// with a scalar multiplier. The clip `min(v − μ, s)` has a non-increasing
/// sum in `μ`, so the multiplier making the budget tight (or zero, when the
/// plain clip already fits) is found by doubling plus bisection.
pub fn project_cap_halfspace(v: &[f64], s: f64, budget: f64) -> Vec<f64> {
    let clip_sum = |mu: f64| -> f64 { v.iter().map(|vi| (vi - mu).min(s)).sum() };
    if clip_sum(0.0) <= budget {
        return v.iter().map(|vi| vi.min(s)).collect();
    }
    let mut hi = 1.0f64;
    while clip_sum(hi) > budget {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip_sum(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    v.iter().map(|vi| (vi - mu).min(s)).collect()
}

/// Value of the per-column subproblem objective `w·s + (ρ/2)‖r − v‖²`.
pub fn column_objective(r: &[f64], s: f64, v: &[f64], w: f64, rho: f64) -> f64 {
    let dist2: f64 = r.iter().zip(v).map(|(ri, vi)| (ri - vi) * (ri - vi)).sum();
    w * s + 0.5 * rho * dist2
}

/// Generic solve of the per-column subproblem: golden-section search over the
/// slack `s` (the partially minimised objective is convex in `s`), with the
/// inner minimisation over `r` done by [`project_cap_halfspace`]. Returns
/// `(r, s, objective)`.
pub fn x_step_oracle(v: &[f64], w: f64, rho: f64, budget: f64) -> (Vec<f64>, f64, f64) {
    // below both kink candidates — the free stationary point and the budget
    // corner s = budget/M — the partially minimised objective is decreasing,
    // so the optimum lies in this bracket.
    let v_min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let lo0 = v_min.min(budget / v.len() as f64) - w / rho - 1.0;
    let hi0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let eval = |s: f64| {
        let r = project_cap_halfspace(v, s, budget);
        column_objective(&r, s, v, w, rho)
    };
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (lo0, hi0);
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (eval(a), eval(b));
    for _ in 0..120 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = eval(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = eval(b);
        }
    }
    let s = 0.5 * (lo + hi);
    let r = project_cap_halfspace(v, s, budget);
    let obj = column_objective(&r, s, v, w, rho);
    (r, s, obj)
}

/// Exhaustive minimum-support search over all `2^G` column subsets, with no
/// cardinality ordering or screening: subset feasibility is decided by a
/// shortfall program (minimise total unserved rate; feasible iff zero).
/// Returns `(min_count, witness)`.
pub fn exhaustive_min_subset(problem: &PlacementProblem) -> Option<(usize, Vec<usize>)> {
    let g = problem.num_columns();
    assert!(g <= 16, "exhaustive oracle is exponential in columns");
    let mut best: Option<(usize, Vec<usize>)> = None;
    for mask in 0u32..(1 << g) {
        let cols: Vec<usize> = (0..g).filter(|&c| mask >> c & 1 == 1).collect();
        if let Some((count, _)) = &best {
            if cols.len() >= *count {
                continue;
            }
        }
        if cols.is_empty() {
            if problem.min_rate == 0.0 {
                return Some((0, Vec::new()));
            }
            continue;
        }
        if subset_shortfall(problem, &cols) <= 1e-6 * problem.min_rate {
            best = Some((cols.len(), cols));
        }
    }
    best
}

/// Total unserved rate when only `cols` may transmit: minimise `Σ_m d_m`
/// subject to `Σ_g r_mg + d_m ≥ min_rate`, column sums within backhaul,
/// `0 ≤ r ≤ C`, `d ≥ 0`.
pub fn subset_shortfall(problem: &PlacementProblem, cols: &[usize]) -> f64 {
    use skyplace::lp::{solve_lp, LinearProgram, LpStatus};
    let m = problem.num_gts();
    let n = cols.len();
    let vars = m * n + m;
    let mut objective = ndarray::Array1::<f64>::zeros(vars);
    for row in 0..m {
        objective[m * n + row] = 1.0;
    }
    // rows: −Σ_g r_mg − d_m ≤ −min_rate, then column sums ≤ backhaul.
    let mut a_ub = Array2::<f64>::zeros((m + n, vars));
    let mut b_ub = ndarray::Array1::<f64>::zeros(m + n);
    for row in 0..m {
        for j in 0..n {
            a_ub[[row, row * n + j]] = -1.0;
        }
        a_ub[[row, m * n + row]] = -1.0;
        b_ub[row] = -problem.min_rate;
    }
    for (j, &col) in cols.iter().enumerate() {
        for row in 0..m {
            a_ub[[m + j, row * n + j]] = 1.0;
        }
        b_ub[m + j] = problem.backhaul[col];
    }
    let mut upper = vec![f64::INFINITY; vars];
    for row in 0..m {
        for (j, &col) in cols.iter().enumerate() {
            upper[row * n + j] = problem.capacity[[row, col]];
        }
    }
    let lp = LinearProgram {
        objective,
        a_eq: Array2::zeros((0, vars)),
        b_eq: ndarray::Array1::zeros(0),
        a_ub,
        b_ub,
        lower: vec![0.0; vars],
        upper,
    };
    let sol = solve_lp(&lp).expect("shortfall program must solve");
    assert_eq!(sol.status, LpStatus::Optimal, "shortfall program is always feasible");
    sol.objective
}

/// A small random placement instance guaranteed feasible by construction: a
/// planted support serves every terminal with margin, surrounded by random
/// clutter columns and entries.
pub struct TinyInstance {
    pub problem: PlacementProblem,
    pub grid: Vec<Point3>,
    pub planted_support: usize,
}

pub fn random_feasible_instance(
    seed: u64,
    gts: std::ops::RangeInclusive<usize>,
    columns: std::ops::RangeInclusive<usize>,
) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(gts);
    let g = rng.gen_range(columns);
    let min_rate = 2.0e7;
    let k = rng.gen_range(1..=g.min(m).max(1));
    let homes: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();

    let mut capacity = Array2::<f64>::zeros((m, g));
    for row in 0..m {
        for col in 0..g {
            capacity[[row, col]] = if rng.gen_bool(0.35) {
                0.0
            } else {
                min_rate * rng.gen_range(0.05..1.5)
            };
        }
    }
    for (row, &home) in homes.iter().enumerate() {
        capacity[[row, home]] = min_rate * rng.gen_range(1.2..2.5);
    }

    let mut backhaul: Vec<f64> = (0..g)
        .map(|_| min_rate * rng.gen_range(0.5..2.0))
        .collect();
    for col in 0..k {
        let load = homes.iter().filter(|&&h| h == col).count() as f64 * min_rate;
        backhaul[col] = load * rng.gen_range(1.1..1.6);
    }

    let problem = PlacementProblem::new(capacity, backhaul, min_rate)
        .expect("generated instance is valid");
    let grid: Vec<Point3> = (0..g).map(|c| [10.0 * c as f64, 0.0, 60.0]).collect();
    TinyInstance {
        problem,
        grid,
        planted_support: k,
    }
}

/// An instance whose per-link capacities all exceed `M·min_rate`, making the
/// capacity box irrelevant, with a common finite backhaul chosen so the
/// backhaul lower bound lands between 1 and the column count.
pub fn unconstraining_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(4..=24);
    let g = rng.gen_range(m..=2 * m);
    let min_rate = 2.0e7;
    let floor = m as f64 * min_rate;
    let capacity =
        Array2::from_shape_fn((m, g), |_| floor * rng.gen_range(1.0..3.0));
    let per_station = rng.gen_range(2..=6) as f64 * min_rate;
    let problem =
        PlacementProblem::new(capacity, vec![per_station; g], min_rate)
            .expect("generated instance is valid");
    let grid: Vec<Point3> = (0..g).map(|c| [10.0 * c as f64, 0.0, 60.0]).collect();
    TinyInstance {
        problem,
        grid,
        planted_support: 0,
    }
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return if vx == vy { 1.0 } else { 0.0 };
    }
    cov / (vx * vy).sqrt()
}

/// Whether every row in `rows` can simultaneously draw `min_rate` under the
/// link capacities and per-column backhaul budgets. Answered by maximum flow
/// on the transport network source → rows → columns → sink with shortest
/// (BFS) augmenting paths, so the augmentation count stays polynomial even
/// with real-valued capacities — a route entirely independent of the
/// library's shortfall program.
pub fn rows_servable(
    caps: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
    rows: &[usize],
) -> bool {
    let n = caps.ncols();
    let k = rows.len();
    if k == 0 {
        return true;
    }
    // Node ids: 0 source, 1..=k rows, k+1..=k+n columns, k+n+1 sink.
    let nodes = k + n + 2;
    let sink = k + n + 1;
    let mut residual = vec![vec![0.0f64; nodes]; nodes];
    for (i, &r) in rows.iter().enumerate() {
        residual[0][1 + i] = min_rate;
        for c in 0..n {
            residual[1 + i][1 + k + c] = caps[[r, c]];
        }
    }
    for c in 0..n {
        residual[1 + k + c][sink] = backhaul[c];
    }
    let tol = 1e-9 * min_rate.max(1.0);
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; nodes];
        prev[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if prev[v] == usize::MAX && residual[u][v] > tol {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut path = vec![sink];
        while *path.last().unwrap() != 0 {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        let mut push = f64::INFINITY;
        for pair in path.windows(2) {
            push = push.min(residual[pair[0]][pair[1]]);
        }
        for pair in path.windows(2) {
            residual[pair[0]][pair[1]] -= push;
            residual[pair[1]][pair[0]] += push;
        }
        flow += push;
    }
    flow >= k as f64 * min_rate - k as f64 * tol
}

/// Largest number of rows simultaneously servable at `min_rate`, by
/// exhaustive sweep over row subsets with a max-flow check each.
pub fn max_servable_by_enumeration(
    caps: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
) -> usize {
    let m = caps.nrows();
    assert!(m <= 16, "subset enumeration limited to 16 rows");
    let mut best = 0usize;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|&r| mask >> r & 1 == 1).collect();
        if rows.len() > best && rows_servable(caps, backhaul, min_rate, &rows) {
            best = rows.len();
        }
    }
    best
}

/// Whether some routing serves every row through exactly one column at full
/// `min_rate`, by brute force over all `n^m` per-row column choices.
pub fn single_assignment_exists(
    caps: &Array2<f64>,
    backhaul: &[f64],
    min_rate: f64,
) -> bool {
    let (m, n) = caps.dim();
    if m == 0 {
        return true;
    }
    assert!(
        (n as f64).powi(m as i32) <= 1e6,
        "assignment enumeration limited to 1e6 choices"
    );
    (0..n.pow(m as u32)).any(|code| {
        let mut c = code;
        let mut load = vec![0.0; n];
        for row in 0..m {
            let station = c % n;
            c /= n;
            if caps[[row, station]] < min_rate {
                return false;
            }
            load[station] += min_rate;
        }
        load.iter().zip(backhaul.iter()).all(|(l, b)| l <= b)
    })
}
