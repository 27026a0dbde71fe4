//! The ISCD-MPC loop.
//!
//! At step `k` the controller holds a candidate sequence `U_{k|i-1}`. It
//! propagates the pseudo-linear model along that sequence, freezes the
//! coefficients met on the way, solves the resulting LTV quadratic program for
//! `U_{k|i}`, and repeats until two successive sequences differ by less than
//! the tolerance or the iteration cap is reached. The head of the final
//! sequence is the control applied at step `k + 1`; the shifted sequence warm
//! starts step `k + 1`.

use nalgebra::{DMatrix, DVector, DVectorView};
use thiserror::Error;

use crate::qp::{
    condense, solve_qp, solve_unconstrained_ltv, ConstraintSet, HorizonWeights, Multipliers,
    QpError, QpProblem, QpSolution, QpStatus,
};
use crate::scdc::{check_coefficients, ModelError, ScdcModel, StagePath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("control sequence has {got} entries, expected {expected}")]
    SequenceLength { got: usize, expected: usize },
    #[error("prediction diverged at stage {stage}: {source}")]
    Divergence { stage: usize, source: ModelError },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("QP finished with status {}", .status.as_str())]
    QpFailed {
        status: QpStatus,
        solution: Box<QpSolution>,
    },
}

/// Horizon, iteration cap, stopping tolerance, weights and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Horizon length `l >= 2`.
    pub horizon: usize,
    /// Iteration cap `rho >= 1`.
    pub max_iterations: usize,
    /// Stopping tolerance on successive control sequences.
    pub tolerance: f64,
    pub weights: HorizonWeights,
    pub constraints: ConstraintSet,
}

impl MpcConfig {
    pub fn new(
        horizon: usize,
        max_iterations: usize,
        tolerance: f64,
        weights: HorizonWeights,
    ) -> Result<Self, ControllerError> {
        let cfg = Self {
            horizon,
            max_iterations,
            tolerance,
            weights,
            constraints: ConstraintSet::unconstrained(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.horizon < 2 {
            return Err(ControllerError::Config(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if self.max_iterations < 1 {
            return Err(ControllerError::Config(
                "iteration cap must be at least 1".into(),
            ));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.tolerance > 0.0) {
            return Err(ControllerError::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    fn check_model<M: ScdcModel + ?Sized>(&self, model: &M) -> Result<(), ControllerError> {
        self.validate()?;
        if self.weights.state_dim() != model.state_dim()
            || self.weights.input_dim() != model.input_dim()
        {
            return Err(ControllerError::Config(format!(
                "weights are sized for n = {}, m = {} but model `{}` has n = {}, m = {}",
                self.weights.state_dim(),
                self.weights.input_dim(),
                model.label(),
                model.state_dim(),
                model.input_dim()
            )));
        }
        Ok(())
    }
}

/// Stacked controls `(u_{k,1}, ..., u_{k,l-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    values: DVector<f64>,
    input_dim: usize,
}

impl ControlSequence {
    pub fn new(values: DVector<f64>, input_dim: usize) -> Self {
        assert!(input_dim > 0 && values.len().is_multiple_of(input_dim));
        Self { values, input_dim }
    }

    /// `stages` copies of `u`.
    pub fn replicate(u: &DVector<f64>, stages: usize) -> Self {
        let m = u.len();
        Self::new(DVector::from_fn(m * stages, |i, _| u[i % m]), m)
    }

    pub fn stages(&self) -> usize {
        self.values.len() / self.input_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Control `u_{k,j}` for `j = 1..=stages`.
    pub fn stage(&self, j: usize) -> DVectorView<'_, f64> {
        assert!((1..=self.stages()).contains(&j));
        self.values.rows((j - 1) * self.input_dim, self.input_dim)
    }

    pub fn head(&self) -> DVector<f64> {
        self.stage(1).into_owned()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn distance(&self, other: &ControlSequence) -> f64 {
        (&self.values - &other.values).norm()
    }
}

/// Warm start for the next step: drop the first control, repeat the last.
pub fn warm_start_shift(previous: &ControlSequence) -> ControlSequence {
    let m = previous.input_dim;
    let len = previous.values.len();
    let mut values = DVector::zeros(len);
    values
        .rows_mut(0, len - m)
        .copy_from(&previous.values.rows(m, len - m));
    values
        .rows_mut(len - m, m)
        .copy_from(&previous.values.rows(len - m, m));
    ControlSequence::new(values, m)
}

/// Predicted trajectory with the coefficients evaluated along it.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `x_{k,0} = x_k, x_{k,1}, ..., x_{k,l}`.
    pub states: Vec<DVector<f64>>,
    /// `A_{k,j}` for `j = 0..l-1`.
    pub a: Vec<DMatrix<f64>>,
    /// `B_{k,j}` for `j = 0..l-1`.
    pub b: Vec<DMatrix<f64>>,
}

impl Propagation {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// Predicted states `x_{k,1..=l}`.
    pub fn predicted(&self) -> &[DVector<f64>] {
        &self.states[1..]
    }
}

/// Simulates the pseudo-linear model from `(x_k, u_k)` through `sequence`.
///
/// The first predicted state is `f(x_k, u_k)` and does not depend on the
/// sequence.
pub fn propagate<M: ScdcModel + ?Sized>(
    model: &M,
    x_k: &DVector<f64>,
    u_k: &DVector<f64>,
    sequence: &ControlSequence,
) -> Result<Propagation, ControllerError> {
    let horizon = sequence.stages() + 1;
    if x_k.len() != model.state_dim() || u_k.len() != model.input_dim() {
        return Err(ControllerError::Config(format!(
            "state/control of length {}/{} for model `{}` with n = {}, m = {}",
            x_k.len(),
            u_k.len(),
            model.label(),
            model.state_dim(),
            model.input_dim()
        )));
    }
    if sequence.input_dim() != model.input_dim() {
        return Err(ControllerError::SequenceLength {
            got: sequence.as_vector().len(),
            expected: model.input_dim() * sequence.stages(),
        });
    }
    let mut controls = Vec::with_capacity(horizon);
    controls.push(u_k.clone());
    for j in 1..horizon {
        controls.push(sequence.stage(j).into_owned());
    }

    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x_k.clone());
    let mut a = Vec::with_capacity(horizon);
    let mut b = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let diverged = |source| ControllerError::Divergence { stage: j, source };
        let path = StagePath::new(&states[..=j], &controls[..=j]);
        let c = model.stage_coefficients(path).map_err(diverged)?;
        check_coefficients(model, &c).map_err(diverged)?;
        let next = c.apply(&states[j], &controls[j]);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(ControllerError::Divergence {
                stage: j + 1,
                source: ModelError::NonFinite {
                    model: model.label().to_string(),
                    what: "state",
                },
            });
        }
        states.push(next);
        a.push(c.a);
        b.push(c.b);
    }
    Ok(Propagation { states, a, b })
}

/// Horizon cost `1/2 x_l'Q_l x_l + 1/2 sum_{j<l} (x_j'Q x_j + u_j'R u_j)` for
/// predicted states `x_1..x_l`.
pub fn evaluate_cost(
    states: &[DVector<f64>],
    sequence: &ControlSequence,
    weights: &HorizonWeights,
) -> f64 {
    let horizon = states.len();
    assert_eq!(
        sequence.stages() + 1,
        horizon,
        "need l states and l-1 controls"
    );
    let mut cost = 0.0;
    for (j, x) in states.iter().enumerate() {
        cost += 0.5 * x.dot(&(weights.state_weight(j + 1, horizon) * x));
    }
    for j in 1..horizon {
        let u = sequence.stage(j);
        cost += 0.5 * u.dot(&(weights.r() * u));
    }
    cost
}

/// Builds the condensed QP of one iteration from a propagation.
pub fn frozen_qp(prop: &Propagation, cfg: &MpcConfig) -> Result<QpProblem, ControllerError> {
    Ok(condense(
        &prop.a[1..],
        &prop.b[1..],
        &prop.states[1],
        &cfg.weights,
        &cfg.constraints,
    )?)
}

fn solve_frozen(
    prop: &Propagation,
    cfg: &MpcConfig,
    input_dim: usize,
) -> Result<(ControlSequence, QpSolution), ControllerError> {
    if cfg.constraints.is_empty() {
        let ltv =
            solve_unconstrained_ltv(&prop.a[1..], &prop.b[1..], &prop.states[1], &cfg.weights)?;
        let z = ltv.stacked_controls();
        let d = z.len();
        let solution = QpSolution {
            z: z.clone(),
            status: QpStatus::Optimal,
            kkt_residual: ltv.gradient_norm,
            active_set: Vec::new(),
            multipliers: Multipliers {
                eq: DVector::zeros(0),
                ineq: DVector::zeros(0),
                lower: DVector::zeros(d),
                upper: DVector::zeros(d),
            },
            iterations: 0,
        };
        return Ok((ControlSequence::new(z, input_dim), solution));
    }
    let qp = frozen_qp(prop, cfg)?;
    let solution = solve_qp(&qp)?;
    if solution.status != QpStatus::Optimal {
        return Err(ControllerError::QpFailed {
            status: solution.status,
            solution: Box::new(solution),
        });
    }
    Ok((
        ControlSequence::new(solution.z.clone(), input_dim),
        solution,
    ))
}

/// One ISCD iteration: freeze the coefficients along `previous`, solve the
/// QP, return its minimizer.
pub fn iterate_once<M: ScdcModel + ?Sized>(
    model: &M,
    x_k: &DVector<f64>,
    u_k: &DVector<f64>,
    previous: &ControlSequence,
    cfg: &MpcConfig,
) -> Result<(ControlSequence, QpSolution), ControllerError> {
    cfg.check_model(model)?;
    check_length(previous, cfg, model.input_dim())?;
    let prop = propagate(model, x_k, u_k, previous)?;
    solve_frozen(&prop, cfg, model.input_dim())
}

fn check_length(seq: &ControlSequence, cfg: &MpcConfig, m: usize) -> Result<(), ControllerError> {
    let expected = m * (cfg.horizon - 1);
    if seq.as_vector().len() != expected || seq.input_dim() != m {
        return Err(ControllerError::SequenceLength {
            got: seq.as_vector().len(),
            expected,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Index of the last iteration.
    pub rho_k: usize,
    /// `|U_{k|i} - U_{k|i-1}|_2` for `i = 2..=rho_k`.
    pub iterate_gaps: Vec<f64>,
    /// Status of every QP attempted, including a failed last one.
    pub qp_statuses: Vec<QpStatus>,
    /// Horizon cost of the final sequence along the re-propagated trajectory.
    pub predicted_cost: f64,
    /// True when a QP failure ended the iterations early.
    pub fallback: bool,
}

impl StepDiagnostics {
    pub fn last_status(&self) -> Option<QpStatus> {
        self.qp_statuses.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// `u_{k+1}`, the head of the final sequence.
    pub control: DVector<f64>,
    /// `U_{k|rho_k}`.
    pub sequence: ControlSequence,
    pub diagnostics: StepDiagnostics,
}

/// Runs the iterations of step `k` starting from the warm start `U_{k|1}`.
///
/// Iterations stop at the first `i >= 2` with `|U_{k|i} - U_{k|i-1}|_2 < eps`,
/// or at `i = rho`. With `rho = 1` no QP is solved and the warm start's head
/// is applied. A QP that does not finish optimally ends the iterations and
/// keeps the previous sequence.
pub fn step<M: ScdcModel + ?Sized>(
    model: &M,
    x_k: &DVector<f64>,
    u_k: &DVector<f64>,
    warm: &ControlSequence,
    cfg: &MpcConfig,
) -> Result<StepOutcome, ControllerError> {
    cfg.check_model(model)?;
    check_length(warm, cfg, model.input_dim())?;
    let m = model.input_dim();

    let mut current = warm.clone();
    let mut gaps = Vec::new();
    let mut statuses = Vec::new();
    let mut rho_k = 1;
    let mut fallback = false;
    for i in 2..=cfg.max_iterations {
        let prop = propagate(model, x_k, u_k, &current)?;
        match solve_frozen(&prop, cfg, m) {
            Ok((next, solution)) => {
                statuses.push(solution.status);
                let gap = next.distance(&current);
                gaps.push(gap);
                current = next;
                rho_k = i;
                if gap < cfg.tolerance {
                    break;
                }
            }
            Err(ControllerError::QpFailed { status, .. }) => {
                statuses.push(status);
                fallback = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let prop = propagate(model, x_k, u_k, &current)?;
    let predicted_cost = evaluate_cost(prop.predicted(), &current, &cfg.weights);
    Ok(StepOutcome {
        control: current.head(),
        sequence: current,
        diagnostics: StepDiagnostics {
            rho_k,
            iterate_gaps: gaps,
            qp_statuses: statuses,
            predicted_cost,
            fallback,
        },
    })
}

/// Receding-horizon controller carrying its warm start between steps.
#[derive(Debug, Clone)]
pub struct IscdController {
    config: MpcConfig,
    warm: Option<ControlSequence>,
}

impl IscdController {
    pub fn new(config: MpcConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Computes `u_{k+1}` from `(x_k, u_k)`. The first call warm starts with
    /// `u_k` replicated over the horizon.
    pub fn next_control<M: ScdcModel + ?Sized>(
        &mut self,
        model: &M,
        x_k: &DVector<f64>,
        u_k: &DVector<f64>,
    ) -> Result<StepOutcome, ControllerError> {
        let warm = match &self.warm {
            Some(prev) => warm_start_shift(prev),
            None => ControlSequence::replicate(u_k, self.config.horizon - 1),
        };
        let outcome = step(model, x_k, u_k, &warm, &self.config)?;
        self.warm = Some(outcome.sequence.clone());
        Ok(outcome)
    }
}
