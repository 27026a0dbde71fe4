mod common;

use common::{random_matrix, random_spd, random_vector, rng};
use iscd_mpc::qp::{
    condense, kkt_residual, solve_qp, ConstraintSet, HorizonWeights, QpProblem, QpStatus,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_box_qp(
    r: &mut rand_chacha::ChaCha8Rng,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let d = r.random_range(1..=5);
    let h = random_spd(r, d, 0.1);
    let g = random_vector(r, d, 5.0);
    let lo = DVector::from_fn(d, |_, _| -r.random_range(0.0..1.5));
    let hi = DVector::from_fn(d, |_, _| r.random_range(0.0..1.5));
    (h, g, lo, hi)
}

#[test]
fn box_qps_match_enumeration() {
    let mut r = rng(21);
    for case in 0..100 {
        let (h, g, lo, hi) = random_box_qp(&mut r);
        let p = QpProblem::unconstrained(h.clone(), g.clone()).with_bounds(lo.clone(), hi.clone());
        let sol = solve_qp(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let reference = common::brute_force_box_qp(&h, &g, &lo, &hi);
        let err = (&sol.z - &reference).amax();
        assert!(err <= 1e-8, "case {case}: |z - z_ref| = {err:e}");
        assert!(kkt_residual(&p, &sol.z, &sol.multipliers) <= 1e-8);
    }
}

#[test]
fn box_as_general_inequalities_gives_same_minimizer() {
    let mut r = rng(22);
    for _ in 0..30 {
        let (h, g, lo, hi) = random_box_qp(&mut r);
        let d = g.len();
        let mut rows = DMatrix::zeros(2 * d, d);
        let mut rhs = DVector::zeros(2 * d);
        for i in 0..d {
            rows[(i, i)] = 1.0;
            rhs[i] = hi[i];
            rows[(d + i, i)] = -1.0;
            rhs[d + i] = -lo[i];
        }
        let p = QpProblem::unconstrained(h.clone(), g.clone()).with_inequality(rows, rhs);
        let sol = solve_qp(&p).unwrap();
        let reference = common::brute_force_box_qp(&h, &g, &lo, &hi);
        assert!((&sol.z - &reference).amax() <= 1e-8);
    }
}

#[test]
fn condensed_matches_sparse_kkt_on_random_ltv() {
    let mut r = rng(23);
    for case in 0..50 {
        let n = r.random_range(1..=4);
        let m = r.random_range(1..=3);
        let horizon = r.random_range(2..=10);
        let a: Vec<_> = (1..horizon)
            .map(|_| random_matrix(&mut r, n, n, 1.0))
            .collect();
        let b: Vec<_> = (1..horizon)
            .map(|_| random_matrix(&mut r, n, m, 1.0))
            .collect();
        let xi1 = random_vector(&mut r, n, 3.0);
        let q = random_spd(&mut r, n, 0.0);
        let qf = random_spd(&mut r, n, 0.5);
        let rw = random_spd(&mut r, m, 0.5);
        let w = HorizonWeights::new(q.clone(), qf.clone(), rw.clone()).unwrap();

        let qp = condense(&a, &b, &xi1, &w, &ConstraintSet::unconstrained()).unwrap();
        let dense = solve_qp(&qp).unwrap();
        let (z_ref, cost_ref) = common::sparse_kkt_ltv(&a, &b, &xi1, &q, &qf, &rw);
        let err = (&dense.z - &z_ref).amax() / (1.0 + z_ref.amax());
        assert!(err <= 1e-8, "case {case}: relative mismatch {err:e}");
        let obj = qp.objective(&dense.z);
        assert!(
            (obj - cost_ref).abs() <= 1e-8 * (1.0 + cost_ref.abs()),
            "case {case}: {obj} vs {cost_ref}"
        );
    }
}

#[test]
fn condensed_box_qp_matches_enumeration() {
    let mut r = rng(24);
    for _ in 0..20 {
        let n = 2;
        let horizon = r.random_range(2..=5);
        let a: Vec<_> = (1..horizon)
            .map(|_| random_matrix(&mut r, n, n, 1.0))
            .collect();
        let b: Vec<_> = (1..horizon)
            .map(|_| random_matrix(&mut r, n, 1, 1.0))
            .collect();
        let xi1 = random_vector(&mut r, n, 5.0);
        let w = HorizonWeights::diagonal(&[10.0, 1.0], &[0.1]).unwrap();
        let cons = ConstraintSet::control_box(horizon, n, &[-0.5], &[0.5]);
        let qp = condense(&a, &b, &xi1, &w, &cons).unwrap();
        let sol = solve_qp(&qp).unwrap();
        let d = horizon - 1;
        let reference = common::brute_force_box_qp(
            &qp.hessian,
            &qp.gradient,
            &DVector::from_element(d, -0.5),
            &DVector::from_element(d, 0.5),
        );
        assert!((&sol.z - &reference).amax() <= 1e-8);
    }
}

#[test]
fn infeasible_bounds_are_reported() {
    let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequality(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
        DVector::from_column_slice(&[-1.0, -1.0]),
    );
    let sol = solve_qp(&p).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

proptest! {
    #[test]
    fn solution_is_feasible_and_no_worse_than_the_clipped_unconstrained_minimizer(
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let (h, g, lo, hi) = random_box_qp(&mut r);
        let p = QpProblem::unconstrained(h.clone(), g.clone()).with_bounds(lo.clone(), hi.clone());
        let sol = solve_qp(&p).unwrap();
        for i in 0..g.len() {
            prop_assert!(sol.z[i] >= lo[i] - 1e-9 && sol.z[i] <= hi[i] + 1e-9);
        }
        let free = h.clone().lu().solve(&(-&g)).unwrap();
        let clipped = DVector::from_fn(g.len(), |i, _| common::clip(free[i], lo[i], hi[i]));
        prop_assert!(p.objective(&sol.z) <= p.objective(&clipped) + 1e-9);
    }
}
