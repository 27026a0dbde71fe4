//! Horizon quadratic programs.
//!
//! One ISCD iteration freezes the coefficient sequence and minimizes
//!
//! ```text
//! 1/2 xi_l' Q_l xi_l + 1/2 sum_{j=1}^{l-1} (xi_j' Q xi_j + mu_j' R mu_j)
//! s.t. xi_1 fixed,  xi_{j+1} = A_j xi_j + B_j mu_j,  + optional constraints
//! ```
//!
//! [`condense`] eliminates the states and produces a dense [`QpProblem`] over
//! `z = (mu_1, ..., mu_{l-1})`, solved by the dual active-set method in
//! [`solve_qp`]. Without constraints the same minimizer comes out of the
//! backward Riccati sweep in [`solve_unconstrained_ltv`], which is linear in
//! the horizon length.

mod condense;
mod riccati;
mod solver;

pub use condense::{condense, prediction_matrices, PredictionMatrices};
pub use riccati::{solve_unconstrained_ltv, LtvSolution};
pub use solver::{kkt_residual, solve_qp, SOLVER_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} is not positive semidefinite")]
    NotSemidefinite(&'static str),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("invalid bounds at component {index}: lower {lower} >= upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
}

/// Stage, terminal and control weights, constant over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonWeights {
    q: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl HorizonWeights {
    pub fn new(
        q: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, QpError> {
        let n = q.nrows();
        if !q.is_square() || q_terminal.shape() != (n, n) || !r.is_square() {
            return Err(QpError::Dimension(format!(
                "weights Q {:?}, Q_l {:?}, R {:?}",
                q.shape(),
                q_terminal.shape(),
                r.shape()
            )));
        }
        check_semidefinite(&q, "Q")?;
        check_semidefinite(&q_terminal, "Q_l")?;
        check_symmetric(&r, "R")?;
        if r.clone().cholesky().is_none() {
            return Err(QpError::NotPositiveDefinite("R"));
        }
        Ok(Self { q, q_terminal, r })
    }

    /// Diagonal weights with `Q_l = Q`.
    pub fn diagonal(q: &[f64], r: &[f64]) -> Result<Self, QpError> {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(q));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(r));
        Self::new(q.clone(), q, r)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_terminal(&self) -> &DMatrix<f64> {
        &self.q_terminal
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Weight applied to predicted state `j` of a horizon of length `horizon`.
    pub(crate) fn state_weight(&self, j: usize, horizon: usize) -> &DMatrix<f64> {
        if j == horizon {
            &self.q_terminal
        } else {
            &self.q
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &'static str) -> Result<(), QpError> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(QpError::NotSymmetric(name));
    }
    Ok(())
}

fn check_semidefinite(m: &DMatrix<f64>, name: &'static str) -> Result<(), QpError> {
    check_symmetric(m, name)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let scale = m.amax().max(1.0);
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 * scale {
        return Err(QpError::NotSemidefinite(name));
    }
    Ok(())
}

/// Constraints over the stacked vector `v = (x_1..x_l, u_1..u_{l-1})` of
/// length `l (n + m) - m`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    inequality: Option<(DMatrix<f64>, DVector<f64>)>,
    equality: Option<(DMatrix<f64>, DVector<f64>)>,
    bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl ConstraintSet {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    /// Adds rows `A v <= b`.
    pub fn with_inequality(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.inequality = Some((a, b));
        self
    }

    /// Adds rows `A v = b`.
    pub fn with_equality(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.equality = Some((a, b));
        self
    }

    /// Per-component bounds on `v`; use infinities for free components.
    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.bounds = Some((lower, upper));
        self
    }

    /// Box `[lower, upper]` on every predicted control, states left free.
    pub fn control_box(horizon: usize, n: usize, lower: &[f64], upper: &[f64]) -> Self {
        let m = lower.len();
        let dim = stacked_dim(horizon, n, m);
        let mut lo = DVector::from_element(dim, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(dim, f64::INFINITY);
        for j in 0..horizon - 1 {
            for c in 0..m {
                lo[horizon * n + j * m + c] = lower[c];
                hi[horizon * n + j * m + c] = upper[c];
            }
        }
        Self::default().with_bounds(lo, hi)
    }

    pub fn inequality(&self) -> Option<&(DMatrix<f64>, DVector<f64>)> {
        self.inequality.as_ref()
    }

    pub fn equality(&self) -> Option<&(DMatrix<f64>, DVector<f64>)> {
        self.equality.as_ref()
    }

    pub fn bounds(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.bounds.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        let rows = |c: &Option<(DMatrix<f64>, DVector<f64>)>| {
            c.as_ref().is_some_and(|(a, _)| a.nrows() > 0)
        };
        let bounded = self.bounds.as_ref().is_some_and(|(lo, hi)| {
            lo.iter().any(|v| v.is_finite()) || hi.iter().any(|v| v.is_finite())
        });
        !rows(&self.inequality) && !rows(&self.equality) && !bounded
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<(), QpError> {
        for (name, rows) in [
            ("inequality", &self.inequality),
            ("equality", &self.equality),
        ] {
            if let Some((a, b)) = rows {
                if a.ncols() != dim || a.nrows() != b.len() {
                    return Err(QpError::Dimension(format!(
                        "{name} rows {:?} with rhs {} over stacked dimension {dim}",
                        a.shape(),
                        b.len()
                    )));
                }
            }
        }
        if let Some((lo, hi)) = &self.bounds {
            if lo.len() != dim || hi.len() != dim {
                return Err(QpError::Dimension(format!(
                    "bounds of length {}/{} over stacked dimension {dim}",
                    lo.len(),
                    hi.len()
                )));
            }
            for (index, (&lower, &upper)) in lo.iter().zip(hi.iter()).enumerate() {
                let bounded = lower.is_finite() || upper.is_finite();
                if bounded && lower >= upper {
                    return Err(QpError::InvalidBounds {
                        index,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Length of the stacked state-and-control vector.
pub fn stacked_dim(horizon: usize, n: usize, m: usize) -> usize {
    horizon * (n + m) - m
}

/// Dense QP `min 1/2 z'Hz + g'z + offset` subject to
/// `G_ineq z <= h_ineq`, `G_eq z = h_eq`, `lower <= z <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub offset: f64,
}

impl QpProblem {
    /// Problem without any constraints.
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            ineq_matrix: DMatrix::zeros(0, d),
            ineq_rhs: DVector::zeros(0),
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            lower: DVector::from_element(d, f64::NEG_INFINITY),
            upper: DVector::from_element(d, f64::INFINITY),
            offset: 0.0,
        }
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_inequality(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        self
    }

    pub fn with_equality(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.eq_matrix = g;
        self.eq_rhs = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z) + self.offset
    }

    pub fn has_constraints(&self) -> bool {
        self.ineq_matrix.nrows() > 0
            || self.eq_matrix.nrows() > 0
            || self.lower.iter().any(|v| v.is_finite())
            || self.upper.iter().any(|v| v.is_finite())
    }

    pub(crate) fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        let ok = self.hessian.shape() == (d, d)
            && self.ineq_matrix.ncols() == d
            && self.ineq_matrix.nrows() == self.ineq_rhs.len()
            && self.eq_matrix.ncols() == d
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.lower.len() == d
            && self.upper.len() == d;
        if ok {
            Ok(())
        } else {
            Err(QpError::Dimension(format!(
                "inconsistent QP of dimension {d}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iter",
        }
    }
}

/// A constraint of a [`QpProblem`] by kind and row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
    Lower(usize),
    Upper(usize),
}

/// Lagrange multipliers with stationarity
/// `H z + g + G_eq' eq + G_ineq' ineq - lower + upper = 0`;
/// all but `eq` are nonnegative at a KKT point.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(p: &QpProblem) -> Self {
        Self {
            eq: DVector::zeros(p.eq_rhs.len()),
            ineq: DVector::zeros(p.ineq_rhs.len()),
            lower: DVector::zeros(p.dim()),
            upper: DVector::zeros(p.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub active_set: Vec<ConstraintRef>,
    pub multipliers: Multipliers,
    pub iterations: usize,
}
