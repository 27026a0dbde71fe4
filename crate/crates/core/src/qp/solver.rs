//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani.
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time while keeping dual feasibility, so it needs no
//! feasible starting point and reports infeasibility when a violated
//! constraint cannot be satisfied. The Cholesky factor of `H` is computed once;
//! each pivot only refactors the small Gram matrix of the active normals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{ConstraintRef, Multipliers, QpError, QpProblem, QpSolution, QpStatus};

/// KKT tolerance (infinity norm) for well-scaled problems.
pub const SOLVER_TOLERANCE: f64 = 1e-8;

/// Relative threshold below which a new normal counts as linearly dependent
/// on the active ones.
const DEPENDENCE_TOL: f64 = 1e-12;

/// A constraint in the solver's canonical form `normal' z >= rhs`.
struct Row {
    origin: ConstraintRef,
    normal: DVector<f64>,
    rhs: f64,
    /// -1 when an equality was flipped to point at the current iterate.
    sign: f64,
}

impl Row {
    fn slack(&self, z: &DVector<f64>) -> f64 {
        self.normal.dot(z) - self.rhs
    }

    fn is_equality(&self) -> bool {
        matches!(self.origin, ConstraintRef::Equality(_))
    }
}

fn canonical_rows(p: &QpProblem) -> Vec<Row> {
    let d = p.dim();
    let mut rows = Vec::new();
    for i in 0..p.eq_matrix.nrows() {
        rows.push(Row {
            origin: ConstraintRef::Equality(i),
            normal: p.eq_matrix.row(i).transpose(),
            rhs: p.eq_rhs[i],
            sign: 1.0,
        });
    }
    for i in 0..p.ineq_matrix.nrows() {
        rows.push(Row {
            origin: ConstraintRef::Inequality(i),
            normal: -p.ineq_matrix.row(i).transpose(),
            rhs: -p.ineq_rhs[i],
            sign: 1.0,
        });
    }
    let unit = |i: usize, s: f64| {
        let mut e = DVector::zeros(d);
        e[i] = s;
        e
    };
    for i in 0..d {
        if p.lower[i].is_finite() {
            rows.push(Row {
                origin: ConstraintRef::Lower(i),
                normal: unit(i, 1.0),
                rhs: p.lower[i],
                sign: 1.0,
            });
        }
    }
    for i in 0..d {
        if p.upper[i].is_finite() {
            rows.push(Row {
                origin: ConstraintRef::Upper(i),
                normal: unit(i, -1.0),
                rhs: -p.upper[i],
                sign: 1.0,
            });
        }
    }
    rows
}

struct ActiveSet {
    rows: Vec<usize>,
    /// `L^{-1} n_i` for each active row.
    transformed: Vec<DVector<f64>>,
    duals: Vec<f64>,
    gram: Option<Cholesky<f64, Dyn>>,
}

impl ActiveSet {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            transformed: Vec::new(),
            duals: Vec::new(),
            gram: None,
        }
    }

    fn refactor(&mut self) {
        let q = self.rows.len();
        if q == 0 {
            self.gram = None;
            return;
        }
        let gram = DMatrix::from_fn(q, q, |i, j| self.transformed[i].dot(&self.transformed[j]));
        self.gram = gram.cholesky();
    }

    fn push(&mut self, row: usize, w: DVector<f64>, dual: f64) {
        self.rows.push(row);
        self.transformed.push(w);
        self.duals.push(dual);
        self.refactor();
    }

    fn remove(&mut self, k: usize) {
        self.rows.remove(k);
        self.transformed.remove(k);
        self.duals.remove(k);
        self.refactor();
    }

    /// For a transformed normal `w`, returns `(r, y)` with `r = S^{-1} W'w` and
    /// `y = w - W r`, the component of `w` orthogonal to the active normals.
    fn project(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = self.rows.len();
        if q == 0 {
            return (DVector::zeros(0), w.clone());
        }
        let wtw = DVector::from_iterator(q, self.transformed.iter().map(|c| c.dot(w)));
        let r = self
            .gram
            .as_ref()
            .expect("active normals are independent")
            .solve(&wtw);
        let mut y = w.clone();
        for (c, rk) in self.transformed.iter().zip(r.iter()) {
            y.axpy(-rk, c, 1.0);
        }
        (r, y)
    }
}

enum Outcome {
    Added,
    Redundant,
    Infeasible,
}

/// Solves the QP. A Hessian without a Cholesky factor is a precondition
/// violation and is returned as an error; infeasibility and the iteration cap
/// are reported through [`QpSolution::status`].
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate()?;
    let d = p.dim();
    let chol = p
        .hessian
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite("H"))?;
    let l = chol.l();
    let mut z = -chol.solve(&p.gradient);

    if !p.has_constraints() {
        let multipliers = Multipliers::zeros(p);
        let kkt = kkt_residual(p, &z, &multipliers);
        return Ok(QpSolution {
            z,
            status: QpStatus::Optimal,
            kkt_residual: kkt,
            active_set: Vec::new(),
            multipliers,
            iterations: 0,
        });
    }

    let mut rows = canonical_rows(p);
    let max_iter = 10 * (d + rows.len());
    let lower_tri = |v: &DVector<f64>| {
        l.solve_lower_triangular(v)
            .expect("Cholesky factor has a nonzero diagonal")
    };
    let upper_back = |v: &DVector<f64>| {
        l.tr_solve_lower_triangular(v)
            .expect("Cholesky factor has a nonzero diagonal")
    };

    let mut active = ActiveSet::new();
    let mut iterations = 0usize;
    let mut status = QpStatus::Optimal;
    let n_eq = p.eq_matrix.nrows();

    // Equalities first, in index order; they are never dropped.
    let mut pending: Vec<usize> = (0..n_eq).collect();
    pending.reverse();
    loop {
        let candidate = if let Some(i) = pending.pop() {
            if rows[i].slack(&z) > 0.0 {
                rows[i].normal.neg_mut();
                rows[i].rhs = -rows[i].rhs;
                rows[i].sign = -1.0;
            }
            Some(i)
        } else {
            most_violated(&rows, &active, &z)
        };
        let Some(pidx) = candidate else { break };

        match add_constraint(
            &rows,
            pidx,
            &mut active,
            &mut z,
            &lower_tri,
            &upper_back,
            &mut iterations,
            max_iter,
        ) {
            Some(Outcome::Added) | Some(Outcome::Redundant) => {}
            Some(Outcome::Infeasible) => {
                status = QpStatus::Infeasible;
                break;
            }
            None => {
                status = QpStatus::MaxIterations;
                break;
            }
        }
    }

    let mut multipliers = Multipliers::zeros(p);
    let mut active_set = Vec::with_capacity(active.rows.len());
    for (&ri, &u) in active.rows.iter().zip(active.duals.iter()) {
        let row = &rows[ri];
        active_set.push(row.origin);
        match row.origin {
            ConstraintRef::Equality(i) => multipliers.eq[i] = -u * row.sign,
            ConstraintRef::Inequality(i) => multipliers.ineq[i] = u,
            ConstraintRef::Lower(i) => multipliers.lower[i] = u,
            ConstraintRef::Upper(i) => multipliers.upper[i] = u,
        }
    }
    active_set.sort();
    let kkt = kkt_residual(p, &z, &multipliers);
    Ok(QpSolution {
        z,
        status,
        kkt_residual: kkt,
        active_set,
        multipliers,
        iterations,
    })
}

/// Most violated inactive inequality; ties go to the smallest index.
fn most_violated(rows: &[Row], active: &ActiveSet, z: &DVector<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if row.is_equality() || active.rows.contains(&i) {
            continue;
        }
        let scale = 1.0 + row.rhs.abs() + row.normal.amax() * z.amax();
        let violation = -row.slack(z) / scale;
        if violation > 1e-13 && best.is_none_or(|(_, v)| violation > v) {
            best = Some((i, violation));
        }
    }
    best.map(|(i, _)| i)
}

/// Adds row `pidx` to the active set, dropping blocking constraints on the
/// way. Returns `None` when the iteration cap is hit.
#[allow(clippy::too_many_arguments)]
fn add_constraint(
    rows: &[Row],
    pidx: usize,
    active: &mut ActiveSet,
    z: &mut DVector<f64>,
    lower_tri: &impl Fn(&DVector<f64>) -> DVector<f64>,
    upper_back: &impl Fn(&DVector<f64>) -> DVector<f64>,
    iterations: &mut usize,
    max_iter: usize,
) -> Option<Outcome> {
    let row = &rows[pidx];
    let w = lower_tri(&row.normal);
    let mut dual_new = 0.0;
    loop {
        *iterations += 1;
        if *iterations > max_iter {
            return None;
        }
        let (r, y) = active.project(&w);
        let y2 = y.norm_squared();
        let dependent = y2 <= DEPENDENCE_TOL * w.norm_squared().max(f64::MIN_POSITIVE);

        // Largest dual step keeping active inequality multipliers nonnegative.
        let mut partial: Option<(usize, f64)> = None;
        for (k, (&ri, &rk)) in active.rows.iter().zip(r.iter()).enumerate() {
            if rows[ri].is_equality() || rk <= 0.0 {
                continue;
            }
            let t = active.duals[k] / rk;
            if partial.is_none_or(|(_, best)| t < best) {
                partial = Some((k, t));
            }
        }
        let slack = row.slack(z);
        let full = if dependent { None } else { Some(-slack / y2) };

        match (full, partial) {
            (None, None) => {
                let tol = 1e-9 * (1.0 + row.rhs.abs());
                return Some(if row.is_equality() && slack.abs() <= tol {
                    Outcome::Redundant
                } else {
                    Outcome::Infeasible
                });
            }
            (None, Some((k, t1))) => {
                // Pure dual step: the new normal is spanned by the active ones.
                for (u, rk) in active.duals.iter_mut().zip(r.iter()) {
                    *u -= t1 * rk;
                }
                dual_new += t1;
                active.remove(k);
            }
            (Some(t2), partial) => {
                let t = partial.map_or(t2, |(_, t1)| t1.min(t2));
                let step = upper_back(&y);
                z.axpy(t, &step, 1.0);
                for (u, rk) in active.duals.iter_mut().zip(r.iter()) {
                    *u -= t * rk;
                }
                dual_new += t;
                match partial {
                    Some((k, t1)) if t1 < t2 => active.remove(k),
                    _ => {
                        active.push(pidx, w, dual_new);
                        return Some(Outcome::Added);
                    }
                }
            }
        }
    }
}

/// Infinity norm of the stacked KKT residual: stationarity, primal
/// feasibility, dual feasibility and complementary slackness.
pub fn kkt_residual(p: &QpProblem, z: &DVector<f64>, mult: &Multipliers) -> f64 {
    let mut stationarity = &p.hessian * z + &p.gradient;
    if p.eq_matrix.nrows() > 0 {
        stationarity += p.eq_matrix.transpose() * &mult.eq;
    }
    if p.ineq_matrix.nrows() > 0 {
        stationarity += p.ineq_matrix.transpose() * &mult.ineq;
    }
    stationarity -= &mult.lower;
    stationarity += &mult.upper;
    let mut worst = stationarity.amax();

    if p.eq_matrix.nrows() > 0 {
        worst = worst.max((&p.eq_matrix * z - &p.eq_rhs).amax());
    }
    if p.ineq_matrix.nrows() > 0 {
        let slack = &p.ineq_rhs - &p.ineq_matrix * z;
        for (s, mu) in slack.iter().zip(mult.ineq.iter()) {
            worst = worst
                .max((-s).max(0.0))
                .max((-mu).max(0.0))
                .max((mu * s).abs());
        }
    }
    for i in 0..p.dim() {
        for (bound, mu, gap) in [
            (p.lower[i], mult.lower[i], z[i] - p.lower[i]),
            (p.upper[i], mult.upper[i], p.upper[i] - z[i]),
        ] {
            if bound.is_finite() {
                worst = worst
                    .max((-gap).max(0.0))
                    .max((-mu).max(0.0))
                    .max((mu * gap).abs());
            } else {
                worst = worst.max(mu.abs());
            }
        }
    }
    worst
}
