use nalgebra::{DMatrix, DVector};

use super::{stacked_dim, ConstraintSet, HorizonWeights, QpError, QpProblem};

/// `xi_j = phi[j-1] xi_1 + gamma[j-1] z` for `j = 1..=l`.
#[derive(Debug, Clone)]
pub struct PredictionMatrices {
    pub phi: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
}

fn check_sequences(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
) -> Result<(usize, usize), QpError> {
    if a_seq.is_empty() || a_seq.len() != b_seq.len() {
        return Err(QpError::Dimension(format!(
            "{} A and {} B matrices; need equal nonzero counts",
            a_seq.len(),
            b_seq.len()
        )));
    }
    let n = a_seq[0].nrows();
    let m = b_seq[0].ncols();
    for (j, (a, b)) in a_seq.iter().zip(b_seq).enumerate() {
        if a.shape() != (n, n) || b.shape() != (n, m) {
            return Err(QpError::Dimension(format!(
                "stage {}: A {:?}, B {:?}, expected ({n}, {n}) and ({n}, {m})",
                j + 1,
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok((n, m))
}

pub fn prediction_matrices(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
) -> Result<PredictionMatrices, QpError> {
    let (n, m) = check_sequences(a_seq, b_seq)?;
    let d = m * a_seq.len();
    let mut phi = vec![DMatrix::identity(n, n)];
    let mut gamma = vec![DMatrix::zeros(n, d)];
    for (j, (a, b)) in a_seq.iter().zip(b_seq).enumerate() {
        let next_phi = a * phi.last().unwrap();
        let mut next_gamma = a * gamma.last().unwrap();
        next_gamma.view_mut((0, j * m), (n, m)).copy_from(b);
        phi.push(next_phi);
        gamma.push(next_gamma);
    }
    Ok(PredictionMatrices { phi, gamma })
}

/// Eliminates the predicted states and returns the dense QP over the stacked
/// controls. `offset` holds the whole control-independent part of the cost, so
/// `objective(z)` equals the horizon cost of the corresponding trajectory.
pub fn condense(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
    xi1: &DVector<f64>,
    weights: &HorizonWeights,
    constraints: &ConstraintSet,
) -> Result<QpProblem, QpError> {
    let (n, m) = check_sequences(a_seq, b_seq)?;
    if xi1.len() != n || weights.state_dim() != n || weights.input_dim() != m {
        return Err(QpError::Dimension(format!(
            "xi_1 of length {}, weights for n = {}, m = {}; model has n = {n}, m = {m}",
            xi1.len(),
            weights.state_dim(),
            weights.input_dim()
        )));
    }
    let horizon = a_seq.len() + 1;
    let d = m * (horizon - 1);
    let pred = prediction_matrices(a_seq, b_seq)?;

    let mut hessian = DMatrix::zeros(d, d);
    for j in 0..horizon - 1 {
        hessian
            .view_mut((j * m, j * m), (m, m))
            .copy_from(weights.r());
    }
    let mut gradient = DVector::zeros(d);
    let mut offset = 0.0;
    let free: Vec<DVector<f64>> = pred.phi.iter().map(|p| p * xi1).collect();
    for j in 1..=horizon {
        let w = weights.state_weight(j, horizon);
        let wp = w * &free[j - 1];
        offset += 0.5 * free[j - 1].dot(&wp);
        // Only the first (j-1) control blocks reach xi_j.
        let k = (j - 1) * m;
        if k == 0 {
            continue;
        }
        let g = pred.gamma[j - 1].columns(0, k);
        let wg = w * g;
        let mut h = hessian.view_mut((0, 0), (k, k));
        h += g.transpose() * wg;
        let mut gr = gradient.rows_mut(0, k);
        gr += g.transpose() * wp;
    }
    // Restore exact symmetry lost to rounding.
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let mut qp = QpProblem::unconstrained(hessian, gradient);
    qp.offset = offset;
    if !constraints.is_empty() {
        map_constraints(&mut qp, &pred, &free, constraints, horizon, n, m)?;
    }
    Ok(qp)
}

/// Maps rows and bounds over `v = M z + c` onto rows over `z`.
fn map_constraints(
    qp: &mut QpProblem,
    pred: &PredictionMatrices,
    free: &[DVector<f64>],
    constraints: &ConstraintSet,
    horizon: usize,
    n: usize,
    m: usize,
) -> Result<(), QpError> {
    let dim_v = stacked_dim(horizon, n, m);
    constraints.validate(dim_v)?;
    let d = qp.dim();
    let mut map = DMatrix::zeros(dim_v, d);
    let mut constant = DVector::zeros(dim_v);
    for (j, (gamma, f)) in pred.gamma.iter().zip(free.iter()).enumerate().take(horizon) {
        map.view_mut((j * n, 0), (n, d)).copy_from(gamma);
        constant.rows_mut(j * n, n).copy_from(f);
    }
    for s in 0..d {
        map[(horizon * n + s, s)] = 1.0;
    }

    let mut ineq_rows: Vec<DVector<f64>> = Vec::new();
    let mut ineq_rhs: Vec<f64> = Vec::new();
    if let Some((a, b)) = constraints.inequality() {
        let g = a * &map;
        let h = b - a * &constant;
        for i in 0..g.nrows() {
            ineq_rows.push(g.row(i).transpose());
            ineq_rhs.push(h[i]);
        }
    }
    if let Some((a, b)) = constraints.equality() {
        qp.eq_matrix = a * &map;
        qp.eq_rhs = b - a * &constant;
    }
    if let Some((lo, hi)) = constraints.bounds() {
        for s in 0..dim_v {
            if s >= horizon * n {
                let k = s - horizon * n;
                qp.lower[k] = qp.lower[k].max(lo[s]);
                qp.upper[k] = qp.upper[k].min(hi[s]);
                continue;
            }
            let row = map.row(s).transpose();
            if hi[s].is_finite() {
                ineq_rows.push(row.clone());
                ineq_rhs.push(hi[s] - constant[s]);
            }
            if lo[s].is_finite() {
                ineq_rows.push(-row);
                ineq_rhs.push(constant[s] - lo[s]);
            }
        }
    }
    if !ineq_rows.is_empty() {
        qp.ineq_matrix = DMatrix::from_fn(ineq_rows.len(), d, |i, c| ineq_rows[i][c]);
        qp.ineq_rhs = DVector::from_vec(ineq_rhs);
    }
    Ok(())
}
