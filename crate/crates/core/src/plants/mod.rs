//! Benchmark plants: continuous-time truth dynamics, the discrete pseudo-linear
//! models handed to the controller, and the reference parameter sets.

mod emag;
mod kapitza;
mod nonholonomic;
mod triple_integrator;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use crate::bocf::IoCoefficients;
use crate::controller::MpcConfig;
use crate::qp::HorizonWeights;
use crate::scdc::{ModelError, ScdcModel};

pub use emag::{EmagModel, EmagModelForm, EmagParams};
pub use kapitza::{KapitzaModel, KapitzaParams};
pub use nonholonomic::{NonholonomicModel, NonholonomicParams};
pub use triple_integrator::{GainTiming, TripleIntegratorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    Kapitza,
    Nonholonomic,
    Emag,
    TripleIntegrator,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::Kapitza,
        BenchmarkKind::Nonholonomic,
        BenchmarkKind::Emag,
        BenchmarkKind::TripleIntegrator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkKind::Kapitza => "kapitza",
            BenchmarkKind::Nonholonomic => "nonholonomic",
            BenchmarkKind::Emag => "emag",
            BenchmarkKind::TripleIntegrator => "triple_integrator",
        }
    }

    pub fn benchmark(&self) -> Benchmark {
        match self {
            BenchmarkKind::Kapitza => kapitza(),
            BenchmarkKind::Nonholonomic => nonholonomic(),
            BenchmarkKind::Emag => emag(),
            BenchmarkKind::TripleIntegrator => triple_integrator(),
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownBenchmark(pub String);

impl fmt::Display for UnknownBenchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown benchmark `{}` (expected one of kapitza, nonholonomic, emag, triple_integrator)",
            self.0
        )
    }
}

impl std::error::Error for UnknownBenchmark {}

impl FromStr for BenchmarkKind {
    type Err = UnknownBenchmark;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownBenchmark(s.to_string()))
    }
}

/// Physical parameters of one benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plant {
    Kapitza(KapitzaParams),
    Nonholonomic(NonholonomicParams),
    Emag(EmagParams),
    TripleIntegrator(TripleIntegratorParams),
}

impl Plant {
    pub fn kind(&self) -> BenchmarkKind {
        match self {
            Plant::Kapitza(_) => BenchmarkKind::Kapitza,
            Plant::Nonholonomic(_) => BenchmarkKind::Nonholonomic,
            Plant::Emag(_) => BenchmarkKind::Emag,
            Plant::TripleIntegrator(_) => BenchmarkKind::TripleIntegrator,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Emag(_) => 2,
            _ => 3,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::Nonholonomic(_) => 2,
            _ => 1,
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        match self {
            Plant::Kapitza(p) => p.entries(),
            Plant::Nonholonomic(p) => p.entries(),
            Plant::Emag(p) => p.entries(),
            Plant::TripleIntegrator(p) => p.entries(),
        }
    }
}

/// Model the controller predicts with.
#[derive(Clone)]
pub enum InternalModel {
    /// Memoryless model over the measured plant state.
    FullState(Arc<dyn ScdcModel>),
    /// Input-output model; the controller state is reconstructed from the
    /// measured output history.
    OutputFeedback(IoCoefficients),
}

impl fmt::Debug for InternalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InternalModel::FullState(m) => write!(f, "FullState({})", m.label()),
            InternalModel::OutputFeedback(c) => write!(f, "OutputFeedback({c:?})"),
        }
    }
}

/// A plant with its sample time, initial condition, run length and default
/// controller configuration.
#[derive(Debug, Clone)]
pub struct Benchmark {
    plant: Plant,
    sample_time: f64,
    x0: DVector<f64>,
    u0: DVector<f64>,
    sim_horizon: f64,
    config: MpcConfig,
}

impl Benchmark {
    pub fn new(
        plant: Plant,
        sample_time: f64,
        x0: DVector<f64>,
        u0: DVector<f64>,
        sim_horizon: f64,
        config: MpcConfig,
    ) -> Result<Self, ModelError> {
        let b = Self {
            plant,
            sample_time,
            x0,
            u0,
            sim_horizon,
            config,
        };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), ModelError> {
        let fail = |reason: String| {
            Err(ModelError::Domain {
                model: self.name().into(),
                reason,
            })
        };
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return fail(format!("sample time {} must be positive", self.sample_time));
        }
        if !(self.sim_horizon >= 0.0 && self.sim_horizon.is_finite()) {
            return fail(format!(
                "run length {} must be nonnegative",
                self.sim_horizon
            ));
        }
        if self.x0.len() != self.plant.state_dim() || self.u0.len() != self.plant.input_dim() {
            return fail(format!(
                "initial condition has {} states and {} inputs, expected {} and {}",
                self.x0.len(),
                self.u0.len(),
                self.plant.state_dim(),
                self.plant.input_dim()
            ));
        }
        let w = &self.config.weights;
        if w.state_dim() != self.model_state_dim() || w.input_dim() != self.plant.input_dim() {
            return fail(format!(
                "weights are sized for n = {}, m = {}, expected n = {}, m = {}",
                w.state_dim(),
                w.input_dim(),
                self.model_state_dim(),
                self.plant.input_dim()
            ));
        }
        Ok(())
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.plant.kind()
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn sim_horizon(&self) -> f64 {
        self.sim_horizon
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Number of sampling steps in the default run.
    pub fn steps(&self) -> usize {
        (self.sim_horizon / self.sample_time).round() as usize
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    /// Dimension of the state the controller works with.
    pub fn model_state_dim(&self) -> usize {
        match &self.plant {
            Plant::TripleIntegrator(_) => 3,
            p => p.state_dim(),
        }
    }

    pub fn with_plant(mut self, plant: Plant) -> Result<Self, ModelError> {
        assert_eq!(plant.kind(), self.kind(), "cannot swap the plant family");
        self.plant = plant;
        self.check()?;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Result<Self, ModelError> {
        self.x0 = x0;
        self.check()?;
        Ok(self)
    }

    pub fn with_config(mut self, config: MpcConfig) -> Result<Self, ModelError> {
        self.config = config;
        self.check()?;
        Ok(self)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.sim_horizon = steps as f64 * self.sample_time;
        self
    }

    pub fn is_output_feedback(&self) -> bool {
        matches!(self.plant, Plant::TripleIntegrator(_))
    }

    pub fn internal_model(&self) -> InternalModel {
        let ts = self.sample_time;
        match self.plant {
            Plant::Kapitza(params) => InternalModel::FullState(Arc::new(KapitzaModel {
                params,
                sample_time: ts,
            })),
            Plant::Nonholonomic(params) => InternalModel::FullState(Arc::new(NonholonomicModel {
                params,
                sample_time: ts,
            })),
            Plant::Emag(params) => InternalModel::FullState(Arc::new(EmagModel {
                params,
                sample_time: ts,
            })),
            Plant::TripleIntegrator(p) => InternalModel::OutputFeedback(p.io_coefficients(ts)),
        }
    }

    /// Continuous-time truth field for controller output `u`; saturation is
    /// applied inside.
    pub fn truth_field(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, ModelError> {
        match &self.plant {
            Plant::Kapitza(p) => Ok(p.field(x, u)),
            Plant::Nonholonomic(p) => Ok(p.field(x, u)),
            Plant::Emag(p) => p.field(x, u),
            Plant::TripleIntegrator(p) => Ok(p.field(x, u)),
        }
    }

    /// Physical input reaching the plant: `sigma(u)`, or the coil current for
    /// the electromagnet.
    pub fn applied_input(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.plant {
            Plant::Kapitza(p) => dvector![p.sat.apply(u[0])],
            Plant::Nonholonomic(p) => p.saturate(u),
            Plant::Emag(p) => dvector![p.current(u[0])],
            Plant::TripleIntegrator(p) => dvector![p.sat.apply(u[0])],
        }
    }

    /// Measured output.
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.plant {
            Plant::TripleIntegrator(_) => dvector![x[0]],
            _ => x.clone(),
        }
    }

    /// Resolved parameters as `(key, value)` pairs.
    pub fn entries(&self) -> Vec<(String, String)> {
        let list = |v: &DVector<f64>| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let diag = |m: &DMatrix<f64>| list(&m.diagonal());
        let w = &self.config.weights;
        let mut out = vec![
            ("benchmark".to_string(), self.name().to_string()),
            ("sample_time".into(), self.sample_time.to_string()),
            ("x0".into(), list(&self.x0)),
            ("u0".into(), list(&self.u0)),
            ("steps".into(), self.steps().to_string()),
            ("horizon".into(), self.config.horizon.to_string()),
            (
                "max_iterations".into(),
                self.config.max_iterations.to_string(),
            ),
            ("tolerance".into(), self.config.tolerance.to_string()),
            ("q".into(), diag(w.q())),
            ("q_terminal".into(), diag(w.q_terminal())),
            ("r".into(), diag(w.r())),
        ];
        out.extend(
            self.plant
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v)),
        );
        out
    }
}

fn config(horizon: usize, rho: usize, q: &[f64], r: &[f64]) -> MpcConfig {
    let weights = HorizonWeights::diagonal(q, r).expect("reference weights are valid");
    MpcConfig::new(horizon, rho, 1e-3, weights).expect("reference configuration is valid")
}

pub fn kapitza() -> Benchmark {
    let pi = std::f64::consts::PI;
    Benchmark::new(
        Plant::Kapitza(KapitzaParams::reference()),
        0.1,
        dvector![pi, pi, pi],
        dvector![0.0],
        60.0,
        config(50, 30, &[1e4, 1e3, 1e6], &[1.0]),
    )
    .unwrap()
}

pub fn nonholonomic() -> Benchmark {
    Benchmark::new(
        Plant::Nonholonomic(NonholonomicParams::reference()),
        0.01,
        dvector![10.0, 10.0, 10.0],
        dvector![0.0, 0.0],
        20.0,
        config(500, 50, &[1e3, 1e3, 1e4], &[1.0, 1.0]),
    )
    .unwrap()
}

/// Starts with the mass at rest at the relaxed spring position `q = 0`.
pub fn emag() -> Benchmark {
    let params = EmagParams::reference();
    Benchmark::new(
        Plant::Emag(params),
        0.01,
        dvector![-params.setpoint, 0.0],
        dvector![1e-2],
        10.0,
        config(300, 50, &[1e3, 1e2], &[1.0]),
    )
    .unwrap()
}

pub fn triple_integrator() -> Benchmark {
    Benchmark::new(
        Plant::TripleIntegrator(TripleIntegratorParams::reference()),
        0.1,
        dvector![300.0, 0.0, 0.0],
        dvector![0.0],
        60.0,
        config(200, 30, &[1e10, 1e10, 1e10], &[1.0]),
    )
    .unwrap()
}
