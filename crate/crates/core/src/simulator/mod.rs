//! Sampled-data closed loop and domain-of-attraction sweeps.
//!
//! The truth plant is integrated with [`rk45`] while the control is held
//! constant over each sample interval. The controller only ever sees the
//! sampled state (or the sampled output, for input-output benchmarks).

mod rk45;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::bocf::{bocf_scdc_model, reconstruct_state, IoHistory};
use crate::controller::{IscdController, MpcConfig, StepOutcome};
use crate::plants::{Benchmark, InternalModel};
use crate::qp::QpStatus;

pub use rk45::{rk45, IntegrationError, Tolerances};

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub step: usize,
    pub reason: String,
}

/// Sampled closed-loop trajectory. Row `k` holds `t_k`, `x_k`, the control
/// `u_k` held over `[t_k, t_{k+1})`, the input it produced at the plant, and
/// the iteration count and final QP status of the step that computed
/// `u_{k+1}` from `x_k`. The last row has no such step (`rho = 0`, no status).
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub saturated: Vec<DVector<f64>>,
    pub rho: Vec<usize>,
    pub statuses: Vec<Option<QpStatus>>,
    pub aborted: Option<Abort>,
}

impl ClosedLoopRecord {
    fn with_capacity(rows: usize) -> Self {
        Self {
            times: Vec::with_capacity(rows),
            states: Vec::with_capacity(rows),
            controls: Vec::with_capacity(rows),
            saturated: Vec::with_capacity(rows),
            rho: Vec::with_capacity(rows),
            statuses: Vec::with_capacity(rows),
            aborted: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }
}

/// Controller side of the loop: either the plant state itself or the
/// reconstructed state of the input-output model.
enum Feedback {
    State(IscdController, std::sync::Arc<dyn crate::scdc::ScdcModel>),
    Output {
        controller: IscdController,
        coefficients: crate::bocf::IoCoefficients,
        history: IoHistory,
    },
}

impl Feedback {
    fn new(b: &Benchmark, cfg: &MpcConfig) -> Result<Self, String> {
        let controller = IscdController::new(cfg.clone()).map_err(|e| e.to_string())?;
        Ok(match b.internal_model() {
            InternalModel::FullState(model) => Feedback::State(controller, model),
            InternalModel::OutputFeedback(coefficients) => Feedback::Output {
                controller,
                history: IoHistory::for_system(&coefficients),
                coefficients,
            },
        })
    }

    fn next(
        &mut self,
        b: &Benchmark,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<StepOutcome, String> {
        match self {
            Feedback::State(controller, model) => controller
                .next_control(model.as_ref(), x, u)
                .map_err(|e| e.to_string()),
            Feedback::Output {
                controller,
                coefficients,
                history,
            } => {
                let y = b.output(x);
                let xhat =
                    reconstruct_state(coefficients, history, &y).map_err(|e| e.to_string())?;
                let model = bocf_scdc_model(coefficients, history);
                let outcome = controller
                    .next_control(&model, &xhat, u)
                    .map_err(|e| e.to_string())?;
                history.push(y, u.clone());
                Ok(outcome)
            }
        }
    }
}

/// Runs `steps` sample intervals from `x0` with the benchmark's initial
/// control.
pub fn run_closed_loop(
    b: &Benchmark,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    steps: usize,
) -> ClosedLoopRecord {
    run_closed_loop_perturbed(b, cfg, x0, steps, |_, _| {})
}

/// As [`run_closed_loop`], with `perturb(k, x)` applied to each sampled state
/// before the controller reads it and integration continues from it.
pub fn run_closed_loop_perturbed<P>(
    b: &Benchmark,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    steps: usize,
    mut perturb: P,
) -> ClosedLoopRecord
where
    P: FnMut(usize, &mut DVector<f64>),
{
    let ts = b.sample_time();
    let tol = Tolerances::default();
    let mut rec = ClosedLoopRecord::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut u = b.u0().clone();

    let push =
        |rec: &mut ClosedLoopRecord, k: usize, x: &DVector<f64>, u: &DVector<f64>, rho, status| {
            rec.times.push(k as f64 * ts);
            rec.states.push(x.clone());
            rec.controls.push(u.clone());
            rec.saturated.push(b.applied_input(u));
            rec.rho.push(rho);
            rec.statuses.push(status);
        };

    let mut feedback = match Feedback::new(b, cfg) {
        Ok(f) => f,
        Err(reason) => {
            push(&mut rec, 0, &x, &u, 0, None);
            rec.aborted = Some(Abort { step: 0, reason });
            return rec;
        }
    };

    for k in 0..steps {
        perturb(k, &mut x);
        let outcome = match feedback.next(b, &x, &u) {
            Ok(o) => o,
            Err(reason) => {
                push(&mut rec, k, &x, &u, 0, None);
                rec.aborted = Some(Abort { step: k, reason });
                return rec;
            }
        };
        push(
            &mut rec,
            k,
            &x,
            &u,
            outcome.diagnostics.rho_k,
            outcome.diagnostics.last_status(),
        );
        let held = u.clone();
        let t0 = k as f64 * ts;
        match rk45(|_, s| b.truth_field(s, &held), &x, t0, t0 + ts, tol) {
            Ok(next) => x = next,
            Err(e) => {
                rec.aborted = Some(Abort {
                    step: k,
                    reason: e.to_string(),
                });
                return rec;
            }
        }
        u = outcome.control;
    }
    perturb(steps, &mut x);
    push(&mut rec, steps, &x, &u, 0, None);
    rec
}

/// First sample of the convergence window `sum_{k=580}^{600} |x_k|`.
pub const DOA_WINDOW_START: usize = 580;
pub const DOA_STEPS: usize = 600;
pub const DOA_THRESHOLD: f64 = 0.01;

/// `sum_{k=start}^{end} |x_k|_2`, inclusive at both ends. Infinite if the
/// record does not reach `end`.
pub fn convergence_criterion(states: &[DVector<f64>], start: usize, end: usize) -> f64 {
    if states.len() <= end {
        return f64::INFINITY;
    }
    states[start..=end].iter().map(|x| x.norm()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaPoint {
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub converged: bool,
    /// Criterion value; infinite for aborted runs.
    pub criterion: f64,
}

/// Outcome of a sweep, ordered horizon-major and then by grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaResult {
    pub grid: Vec<DVector<f64>>,
    pub horizons: Vec<usize>,
    pub points: Vec<DoaPoint>,
}

impl DoaResult {
    pub fn for_horizon(&self, horizon: usize) -> impl Iterator<Item = &DoaPoint> {
        self.points.iter().filter(move |p| p.horizon == horizon)
    }

    pub fn converged_count(&self, horizon: usize) -> usize {
        self.for_horizon(horizon).filter(|p| p.converged).count()
    }
}

/// Closed-loop runs from every grid point for every horizon, run in parallel.
///
/// Each run lasts `steps` samples and counts as converged when
/// `sum_{k=steps-20}^{steps} |x_k| < 0.01`. Runs that abort count as not
/// converged.
pub fn doa_sweep(
    b: &Benchmark,
    grid: &[DVector<f64>],
    horizons: &[usize],
    steps: usize,
) -> DoaResult {
    assert!(
        steps >= 20,
        "the convergence window needs at least 20 steps"
    );
    let start = steps - (DOA_STEPS - DOA_WINDOW_START);
    let jobs: Vec<(usize, &DVector<f64>)> = horizons
        .iter()
        .flat_map(|&l| grid.iter().map(move |x| (l, x)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(horizon, x0)| {
            let cfg = MpcConfig {
                horizon,
                ..b.config().clone()
            };
            let rec = run_closed_loop(b, &cfg, x0, steps);
            let criterion = if rec.aborted.is_some() {
                f64::INFINITY
            } else {
                convergence_criterion(&rec.states, start, steps)
            };
            DoaPoint {
                x0: x0.clone(),
                horizon,
                converged: criterion < DOA_THRESHOLD,
                criterion,
            }
        })
        .collect();
    DoaResult {
        grid: grid.to_vec(),
        horizons: horizons.to_vec(),
        points,
    }
}

/// Initial conditions `(a, b, 0...)` for `a, b` over `values`, first
/// coordinate varying slowest.
pub fn planar_grid(values: &[f64], state_dim: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(values.len() * values.len());
    for &a in values {
        for &bv in values {
            let mut x = DVector::zeros(state_dim);
            x[0] = a;
            x[1] = bv;
            out.push(x);
        }
    }
    out
}
