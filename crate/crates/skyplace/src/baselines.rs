//! Reference points for the placement solver: a backhaul-driven lower bound
//! on the station count, an exact brute-force oracle for tiny instances, and
//! a K-means clustering baseline.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{dist, Point3};
use crate::lp::{build_relaxed_lp, solve_lp, LpStatus};
use crate::solver_core::{PlacementProblem, PlacementSolution};

/// Subset-enumeration budget of the brute-force oracle: the search is
/// exponential in the number of columns, so larger instances are refused
/// rather than silently hanging.
pub const MAX_ORACLE_COLUMNS: usize = 20;

/// Result of the brute-force minimum-station search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    /// Size of the smallest feasible subset of columns.
    pub min_count: usize,
    /// The lexicographically first feasible subset of that size.
    pub witness_columns: Vec<usize>,
    /// Number of subsets whose feasibility program was solved, including
    /// the initial full-set screen.
    pub explored: usize,
}

/// Backhaul-driven floor on the number of stations: serving `num_gts`
/// terminals at `min_rate` moves `num_gts·min_rate` bits/s in aggregate, and
/// no station can carry more than the best backhaul, so at least
/// `⌈num_gts·min_rate / max_g backhaul_g⌉` stations are needed.
///
/// A zero demand needs zero stations. A positive demand with an all-zero
/// backhaul vector cannot be met by any number of stations, reported as
/// [`Error::InfiniteLowerBound`].
pub fn lower_bound(num_gts: usize, min_rate: f64, backhaul: &[f64]) -> Result<usize> {
    if !(min_rate.is_finite() && min_rate >= 0.0) {
        return Err(Error::Invalid(format!(
            "minimum rate must be finite and non-negative, got {min_rate}"
        )));
    }
    if backhaul.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::Invalid(
            "backhaul entries must be finite and non-negative".into(),
        ));
    }
    if min_rate == 0.0 || num_gts == 0 {
        return Ok(0);
    }
    let best = backhaul.iter().cloned().fold(0.0f64, f64::max);
    if best <= 0.0 {
        return Err(Error::InfiniteLowerBound);
    }
    let quotient = num_gts as f64 * min_rate / best;
    // Nudge below the exact quotient before taking the ceiling so that an
    // exact integer ratio computed with rounding noise (e.g. 14.000000000002)
    // cannot overcount; undercounting by one keeps the bound valid.
    Ok((quotient - 1e-9).ceil().max(1.0) as usize)
}

/// Exact minimum-station search by subset enumeration. Subsets are tried in
/// increasing cardinality starting at [`lower_bound`], lexicographically
/// within each cardinality; feasibility of a subset is decided by the
/// zero-weight relaxed placement program restricted to its columns. Returns
/// the first feasible subset found, which is therefore a true minimum.
///
/// The instance's weights are ignored — only feasibility matters here.
pub fn brute_force_min_abs(problem: &PlacementProblem) -> Result<OracleResult> {
    problem.validate()?;
    let (_, g) = problem.capacity.dim();
    if g > MAX_ORACLE_COLUMNS {
        return Err(Error::OracleBudget {
            columns: g,
            max: MAX_ORACLE_COLUMNS,
        });
    }
    if problem.min_rate == 0.0 {
        return Ok(OracleResult {
            min_count: 0,
            witness_columns: Vec::new(),
            explored: 0,
        });
    }

    let mut explored = 0usize;
    // Feasibility is monotone in the column set, so one full-set screen
    // settles whether any subset can work.
    let all: Vec<usize> = (0..g).collect();
    explored += 1;
    if !subset_feasible(problem, &all)? {
        return Err(Error::NoFeasibleSubset { columns: g });
    }

    let start = lower_bound(problem.num_gts(), problem.min_rate, &problem.backhaul)?.max(1);
    for k in start..=g {
        let mut subset: Vec<usize> = (0..k).collect();
        loop {
            explored += 1;
            if subset_feasible(problem, &subset)? {
                return Ok(OracleResult {
                    min_count: k,
                    witness_columns: subset,
                    explored,
                });
            }
            if !next_combination(&mut subset, g) {
                break;
            }
        }
    }
    // The full set was feasible, so the k = g level cannot be exhausted
    // without a hit.
    unreachable!("full column set passed the feasibility screen");
}

/// Whether the relaxed placement program restricted to `columns` (weights
/// zeroed) admits a feasible point.
fn subset_feasible(problem: &PlacementProblem, columns: &[usize]) -> Result<bool> {
    let m = problem.num_gts();
    let n = columns.len();
    let mut capacity = Array2::<f64>::zeros((m, n));
    for (j, &col) in columns.iter().enumerate() {
        for row in 0..m {
            capacity[[row, j]] = problem.capacity[[row, col]];
        }
    }
    let sub = PlacementProblem {
        capacity,
        backhaul: columns.iter().map(|&c| problem.backhaul[c]).collect(),
        min_rate: problem.min_rate,
        weights: vec![0.0; n],
    };
    let sol = solve_lp(&build_relaxed_lp(&sub))?;
    Ok(sol.status == LpStatus::Optimal)
}

/// Advances `subset` to the next k-combination of `{0, …, n−1}` in
/// lexicographic order; returns false when `subset` was the last one.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] != i + n - k {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// K-means placement baseline: clusters the terminals, parks one station
/// over each cluster (at the flight-grid point nearest the centroid), and
/// serves every terminal from its own cluster's station at exactly
/// `min_rate` — no rate splitting across stations. The station count is the
/// smallest k in `[lower_bound, max_k]` whose assignment respects both the
/// per-link capacities and each station's backhaul.
///
/// `capacity_fn(m, g)` must return the link capacity in bits/s between
/// terminal `m` and a station at flight-grid point `g`. Two clusters may
/// project onto the same grid point; they remain distinct stations with
/// separate backhaul budgets. The result is deterministic for a fixed seed.
pub fn kmeans_placement(
    gts: &[Point3],
    flight_grid: &[Point3],
    capacity_fn: impl Fn(usize, usize) -> f64,
    backhaul: &[f64],
    min_rate: f64,
    max_k: usize,
    seed: u64,
) -> Result<PlacementSolution> {
    let m = gts.len();
    if m == 0 {
        return Err(Error::Invalid("no ground terminals to place for".into()));
    }
    if flight_grid.is_empty() {
        return Err(Error::EmptyFlightGrid);
    }
    if backhaul.len() != flight_grid.len() {
        return Err(Error::Invalid(format!(
            "backhaul has {} entries for {} flight-grid points",
            backhaul.len(),
            flight_grid.len()
        )));
    }
    if max_k == 0 {
        return Err(Error::Invalid("max_k must be at least 1".into()));
    }
    if !(min_rate.is_finite() && min_rate >= 0.0) {
        return Err(Error::Invalid(format!(
            "minimum rate must be finite and non-negative, got {min_rate}"
        )));
    }
    if min_rate == 0.0 {
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

    let start = lower_bound(m, min_rate, backhaul)?.max(1);
    for k in start..=max_k.min(m) {
        // Decorrelate the per-k streams so adding a cluster redraws the
        // initialization rather than extending the previous one.
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (assign, iterations) = lloyd_cluster(gts, k, &mut rng);

        // Station positions: flight-grid points nearest each centroid.
        let centroids = centroids_of(gts, &assign, k);
        let stations: Vec<usize> = centroids
            .iter()
            .map(|c| nearest_index(flight_grid, c))
            .collect();

        // Single-station-per-terminal feasibility at rate min_rate.
        let sizes = cluster_sizes(&assign, k);
        let capacity_ok = (0..m).all(|gt| capacity_fn(gt, stations[assign[gt]]) >= min_rate);
        let backhaul_ok = (0..k).all(|j| sizes[j] as f64 * min_rate <= backhaul[stations[j]]);
        if !(capacity_ok && backhaul_ok) {
            continue;
        }

        // Report stations sorted by grid index (duplicates kept — they are
        // distinct stations that happen to share a grid point).
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&j| (stations[j], j));
        let mut rates = Array2::<f64>::zeros((m, k));
        for gt in 0..m {
            let station_pos = order.iter().position(|&j| j == assign[gt]).unwrap();
            rates[[gt, station_pos]] = min_rate;
        }
        return Ok(PlacementSolution {
            active_columns: order.iter().map(|&j| stations[j]).collect(),
            rates,
            iterations,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            feasible: true,
        });
    }
    Err(Error::NoFeasibleClustering { max_k })
}

/// Lloyd iterations over the terminal positions: seeded choice of k distinct
/// terminals as initial centroids, then alternating stable assignment
/// (a terminal moves only to a strictly closer centroid) and centroid
/// recomputation, for at most 100 sweeps. Empty clusters are refilled with
/// the terminal farthest from its current centroid. Returns the final
/// assignment and the number of sweeps performed.
fn lloyd_cluster(gts: &[Point3], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let m = gts.len();
    debug_assert!(k >= 1 && k <= m);
    let chosen = rand::seq::index::sample(rng, m, k).into_vec();
    let mut centroids: Vec<Point3> = chosen.iter().map(|&i| gts[i]).collect();

    // Initial assignment: nearest centroid, lowest index on ties.
    let mut assign: Vec<usize> = gts.iter().map(|p| nearest_index(&centroids, p)).collect();

    let mut sweeps = 0;
    for _ in 0..100 {
        sweeps += 1;

        // Refill empty clusters before averaging so every centroid is a
        // mean of at least one member.
        let mut sizes = cluster_sizes(&assign, k);
        for j in 0..k {
            if sizes[j] == 0 {
                let victim = (0..m)
                    .max_by(|&a, &b| {
                        let da = dist(gts[a], centroids[assign[a]]);
                        let db = dist(gts[b], centroids[assign[b]]);
                        da.partial_cmp(&db)
                            .unwrap()
                            .then(b.cmp(&a)) // ties → lowest terminal index
                    })
                    .unwrap();
                sizes[assign[victim]] -= 1;
                assign[victim] = j;
                sizes[j] = 1;
            }
        }
        centroids = centroids_of(gts, &assign, k);

        // Stable reassignment: only strictly closer centroids attract.
        let mut changed = false;
        for (gt, a) in assign.iter_mut().enumerate() {
            let here = dist(gts[gt], centroids[*a]);
            let best = nearest_index(&centroids, &gts[gt]);
            if dist(gts[gt], centroids[best]) < here {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (assign, sweeps)
}

fn cluster_sizes(assign: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    for &a in assign {
        sizes[a] += 1;
    }
    sizes
}

fn centroids_of(gts: &[Point3], assign: &[usize], k: usize) -> Vec<Point3> {
    let mut sums = vec![[0.0f64; 3]; k];
    let sizes = cluster_sizes(assign, k);
    for (gt, &a) in assign.iter().enumerate() {
        for d in 0..3 {
            sums[a][d] += gts[gt][d];
        }
    }
    for (j, sum) in sums.iter_mut().enumerate() {
        let n = sizes[j].max(1) as f64;
        for v in sum.iter_mut() {
            *v /= n;
        }
    }
    sums
}

/// Index of the point in `candidates` nearest to `p` (lowest index on ties).
fn nearest_index(candidates: &[Point3], p: &Point3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = dist(*c, *p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
