//! Integration tests of the linear-program layer: the dense solver against a
//! vertex-enumeration oracle on random bounded programs, the relaxed
//! placement program, and the two rate-allocation programs built on top.

mod common;

use approx::assert_relative_eq;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use skyplace::lp::{
    build_relaxed_lp, max_served_users, min_connections, solve_lp, LinearProgram, LpStatus,
};
use skyplace::solver_core::PlacementProblem;

/// Solves an `n×n` linear system by Gaussian elimination with partial
/// pivoting; `None` when numerically singular.
fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Brute-force optimum of a bounded LP by enumerating every choice of `n`
/// active constraints (inequalities, equalities, and bounds), solving the
/// resulting square system, and keeping the best feasible candidate.
/// Requires finite bounds on every variable so the feasible set is a
/// polytope and the optimum (if any) sits at an enumerated vertex.
fn vertex_enumeration_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    assert!(lp.upper.iter().all(|u| u.is_finite()), "oracle needs a bounded box");
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..lp.a_eq.nrows() {
        rows.push((lp.a_eq.row(i).to_vec(), lp.b_eq[i]));
    }
    let forced = rows.len();
    for i in 0..lp.a_ub.nrows() {
        rows.push((lp.a_ub.row(i).to_vec(), lp.b_ub[i]));
    }
    for j in 0..n {
        let mut lo = vec![0.0; n];
        lo[j] = 1.0;
        rows.push((lo.clone(), lp.lower[j]));
        rows.push((lo, lp.upper[j]));
    }

    let feasible = |x: &[f64]| -> bool {
        let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..lp.a_eq.nrows() {
            let lhs: f64 = lp.a_eq.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
            if (lhs - lp.b_eq[i]).abs() > 1e-7 * scale {
                return false;
            }
        }
        for i in 0..lp.a_ub.nrows() {
            let lhs: f64 = lp.a_ub.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
            if lhs > lp.b_ub[i] + 1e-7 * scale {
                return false;
            }
        }
        x.iter()
            .enumerate()
            .all(|(j, &v)| v >= lp.lower[j] - 1e-7 * scale && v <= lp.upper[j] + 1e-7 * scale)
    };

    let total = rows.len();
    let mut best: Option<f64> = None;
    let mut chosen: Vec<usize> = (forced..forced + n.saturating_sub(forced)).collect();
    // iterate over all (n − forced)-combinations of the non-forced rows
    loop {
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..forced {
            a.push(rows[i].0.clone());
            b.push(rows[i].1);
        }
        for &i in &chosen {
            a.push(rows[i].0.clone());
            b.push(rows[i].1);
        }
        if a.len() == n {
            if let Some(x) = solve_square(&a, &b) {
                if feasible(&x) {
                    let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(best.map_or(obj, |cur: f64| cur.min(obj)));
                }
            }
        }
        // advance the combination
        let k = chosen.len();
        if k == 0 {
            break;
        }
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if chosen[i] + (k - i) < total {
                chosen[i] += 1;
                for j in i + 1..k {
                    chosen[j] = chosen[j - 1] + 1;
                }
                break;
            }
        }
    }
    best
}

fn random_bounded_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(2..=4);
    let n_ub = rng.gen_range(0..=4);
    let n_eq = rng.gen_range(0..=1);
    let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
    let interior: Vec<f64> = upper.iter().map(|u| rng.gen_range(0.0..*u)).collect();
    let coeff = |rng: &mut ChaCha8Rng| rng.gen_range(-2.0..2.0);
    let a_ub = Array2::from_shape_fn((n_ub, n), |_| coeff(rng));
    let b_ub = Array1::from_shape_fn(n_ub, |i| {
        let at_interior: f64 = a_ub.row(i).iter().zip(&interior).map(|(a, v)| a * v).sum();
        at_interior + rng.gen_range(-0.5..1.5)
    });
    let a_eq = Array2::from_shape_fn((n_eq, n), |_| coeff(rng));
    let b_eq = Array1::from_shape_fn(n_eq, |i| {
        let at_interior: f64 = a_eq.row(i).iter().zip(&interior).map(|(a, v)| a * v).sum();
        at_interior + rng.gen_range(-0.3..0.3)
    });
    LinearProgram {
        objective: Array1::from_shape_fn(n, |_| coeff(rng)),
        a_eq,
        b_eq,
        a_ub,
        b_ub,
        lower: vec![0.0; n],
        upper,
    }
}

#[test]
fn solver_matches_vertex_enumeration_on_random_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(314_159);
    let mut optima = 0usize;
    let mut infeasible = 0usize;
    for trial in 0..400 {
        let lp = random_bounded_lp(&mut rng);
        let expected = vertex_enumeration_optimum(&lp);
        let got = solve_lp(&lp).unwrap();
        match expected {
            Some(obj) => {
                assert_eq!(got.status, LpStatus::Optimal, "trial {trial}");
                assert!(
                    (got.objective - obj).abs() <= 1e-8 * (1.0 + obj.abs()),
                    "trial {trial}: solver {} vs enumeration {obj}",
                    got.objective
                );
                optima += 1;
            }
            None => {
                assert_eq!(got.status, LpStatus::Infeasible, "trial {trial}");
                infeasible += 1;
            }
        }
    }
    // the generator must exercise both outcomes for the comparison to mean
    // anything.
    assert!(optima >= 100, "only {optima} feasible programs generated");
    assert!(infeasible >= 10, "only {infeasible} infeasible programs generated");
}

#[test]
fn unbounded_programs_are_classified() {
    let lp = LinearProgram {
        objective: Array1::from_vec(vec![-1.0, 0.0]),
        a_eq: Array2::zeros((0, 2)),
        b_eq: Array1::zeros(0),
        a_ub: Array2::zeros((0, 2)),
        b_ub: Array1::zeros(0),
        lower: vec![0.0, 0.0],
        upper: vec![f64::INFINITY, 1.0],
    };
    assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn relaxed_program_prefers_cheap_columns() {
    // One terminal, two stations; the second column's weight makes it half
    // as expensive, so the optimum shifts all backhaul-fitting mass there.
    let problem = PlacementProblem::new(
        Array2::from_shape_vec((1, 2), vec![5e7, 4e7]).unwrap(),
        vec![3e7, 3e7],
        4e7,
    )
    .unwrap();
    let mut lp = build_relaxed_lp(&problem);
    // variables: r00, r01, s0, s1 — reweight column 1 to half price.
    lp.objective[3] = 0.5;
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert_relative_eq!(sol.objective, 2.5e7, max_relative = 1e-9);
    assert_relative_eq!(sol.x[0], 1e7, max_relative = 1e-9);
    assert_relative_eq!(sol.x[1], 3e7, max_relative = 1e-9);
}

#[test]
fn relaxed_program_matches_shortfall_oracle_on_random_instances() {
    for seed in 0..30 {
        let inst = common::random_feasible_instance(seed, 2..=5, 2..=6, );
        let lp = build_relaxed_lp(&inst.problem);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(
            sol.status,
            LpStatus::Optimal,
            "seed {seed}: planted-feasible instance must stay feasible"
        );
        // independent check of the same feasibility question
        let all: Vec<usize> = (0..inst.problem.num_columns()).collect();
        assert!(common::subset_shortfall(&inst.problem, &all) <= 1e-3);
    }
}

#[test]
fn connection_minimiser_settles_on_one_station_per_terminal() {
    // 3 terminals, 2 stations, everyone reaches everyone with margin.
    let caps = Array2::from_elem((3, 2), 5e7);
    let (rates, connections) = min_connections(&caps, &[2e8, 2e8], 2e7, 2).unwrap();
    assert_eq!(connections, 3, "one connection per terminal");
    for m in 0..3 {
        assert!(rates.row(m).sum() >= 2e7 * (1.0 - 1e-9));
    }
}

#[test]
fn connection_minimiser_splits_when_capacity_forces_it() {
    // single terminal, two stations, each link carries only half the demand.
    let caps = Array2::from_elem((1, 2), 1e7);
    let (rates, connections) = min_connections(&caps, &[1e8, 1e8], 2e7, 2).unwrap();
    assert_eq!(connections, 2);
    assert_relative_eq!(rates.row(0).sum(), 2e7, max_relative = 1e-9);
}

#[test]
fn connection_minimiser_rejects_unservable_terminals() {
    let caps = Array2::from_elem((1, 2), 5e6);
    assert!(min_connections(&caps, &[1e8, 1e8], 2e7, 2).is_err());
}

#[test]
fn served_user_allocator_matches_hand_vertex() {
    // 2 terminals, 1 station, backhaul 30, demand 20, links capped at 20:
    // one terminal fully served, the other 10 short.
    let caps = Array2::from_elem((2, 1), 20.0);
    let (rates, served) = max_served_users(&caps, &[30.0], 20.0).unwrap();
    assert_eq!(served, 1);
    let total: f64 = rates.iter().sum();
    assert_relative_eq!(total, 30.0, max_relative = 1e-9);
}

#[test]
fn served_user_allocator_serves_everyone_when_it_can() {
    let caps = Array2::from_elem((4, 2), 5e7);
    let (rates, served) = max_served_users(&caps, &[1e8, 1e8], 2e7).unwrap();
    assert_eq!(served, 4);
    for m in 0..4 {
        assert!(rates.row(m).sum() >= 2e7 * (1.0 - 1e-9));
    }
}

#[test]
fn served_count_is_monotone_in_backhaul() {
    let caps = Array2::from_elem((5, 1), 2e7);
    let mut prev = 0usize;
    for budget in [0.0, 2e7, 4e7, 6e7, 8e7, 1e8] {
        let (_, served) = max_served_users(&caps, &[budget], 2e7).unwrap();
        assert!(served >= prev, "served users dropped when backhaul grew");
        prev = served;
    }
    assert_eq!(prev, 5);
}
