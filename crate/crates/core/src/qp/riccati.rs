use nalgebra::{DMatrix, DVector};

use super::{HorizonWeights, QpError};

/// Minimizer of an unconstrained frozen-coefficient horizon problem.
#[derive(Debug, Clone)]
pub struct LtvSolution {
    /// `mu_1..mu_{l-1}`.
    pub controls: Vec<DVector<f64>>,
    /// `xi_1..xi_l` along the minimizer.
    pub states: Vec<DVector<f64>>,
    /// Infinity norm of the condensed gradient `H z + g` at the minimizer,
    /// evaluated by a backward costate sweep.
    pub gradient_norm: f64,
}

impl LtvSolution {
    pub fn stacked_controls(&self) -> DVector<f64> {
        let m = self.controls.first().map_or(0, |u| u.len());
        DVector::from_iterator(
            m * self.controls.len(),
            self.controls.iter().flat_map(|u| u.iter().copied()),
        )
    }
}

/// Backward Riccati sweep over `xi_{j+1} = A_j xi_j + B_j mu_j`, `j = 1..l-1`.
///
/// Produces the same minimizer as condensing and solving the dense QP, at a
/// cost linear in the horizon length.
pub fn solve_unconstrained_ltv(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
    xi1: &DVector<f64>,
    weights: &HorizonWeights,
) -> Result<LtvSolution, QpError> {
    let stages = a_seq.len();
    if stages == 0 || b_seq.len() != stages {
        return Err(QpError::Dimension(format!(
            "{} A and {} B matrices; need equal nonzero counts",
            a_seq.len(),
            b_seq.len()
        )));
    }
    let n = weights.state_dim();
    let m = weights.input_dim();
    if xi1.len() != n
        || a_seq.iter().any(|a| a.shape() != (n, n))
        || b_seq.iter().any(|b| b.shape() != (n, m))
    {
        return Err(QpError::Dimension(format!(
            "LTV sequence does not match weights for n = {n}, m = {m}"
        )));
    }

    let mut gains = vec![DMatrix::zeros(m, n); stages];
    let mut p = weights.q_terminal().clone();
    for j in (0..stages).rev() {
        let (a, b) = (&a_seq[j], &b_seq[j]);
        let btp = b.transpose() * &p;
        let s = weights.r() + &btp * b;
        let chol = s
            .cholesky()
            .ok_or(QpError::NotPositiveDefinite("R + B'PB"))?;
        let k = chol.solve(&(&btp * a));
        let closed = a - b * &k;
        let next = weights.q() + a.transpose() * &p * closed;
        p = (&next + next.transpose()) * 0.5;
        gains[j] = k;
    }

    let mut states = Vec::with_capacity(stages + 1);
    let mut controls = Vec::with_capacity(stages);
    states.push(xi1.clone());
    for j in 0..stages {
        let xi = &states[j];
        let mu = -(&gains[j] * xi);
        let next = &a_seq[j] * xi + &b_seq[j] * &mu;
        controls.push(mu);
        states.push(next);
    }

    let mut costate = weights.q_terminal() * &states[stages];
    let mut gradient_norm: f64 = 0.0;
    for j in (0..stages).rev() {
        let grad = weights.r() * &controls[j] + b_seq[j].transpose() * &costate;
        gradient_norm = gradient_norm.max(grad.amax());
        costate = weights.q() * &states[j] + a_seq[j].transpose() * &costate;
    }

    Ok(LtvSolution {
        controls,
        states,
        gradient_norm,
    })
}
