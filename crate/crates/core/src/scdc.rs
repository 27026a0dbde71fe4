//! Pseudo-linear plant models `f(x, u) = A(x, u) x + B(x, u) u`.
//!
//! Every model in this crate hands back the *full* one-step matrices: the
//! identity and the sample-time scaling are already folded into `A` and `B`,
//! so `x_next = A x + B u` with nothing added on top.
//!
//! Magnitude saturation is carried inside the input coefficient as the gain
//! `sigma(u) / u`, whose removable singularity at `u = 0` is filled by its
//! limit.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Below this magnitude a linear saturation gain returns its limit value.
pub const GAIN_SINGULARITY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model `{model}`: non-finite {what}")]
    NonFinite { model: String, what: &'static str },
    #[error("model `{model}`: coefficient {what} is {got:?}, expected {expected:?}")]
    Shape {
        model: String,
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("saturation gain at u = 0 has no limit for levels [{lower}, {upper}]")]
    Singularity { lower: f64, upper: f64 },
    #[error("invalid saturation levels: lower {lower} must be below upper {upper}")]
    InvalidLevels { lower: f64, upper: f64 },
    #[error("model `{model}`: {reason}")]
    Domain { model: String, reason: String },
}

/// One-step coefficient pair of a pseudo-linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Coefficients {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        Self { a, b }
    }

    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Trajectory prefix `(x_0..=x_j, u_0..=u_j)`; a model evaluates its
/// coefficients at the last stage `j`.
///
/// Memoryless models only look at the last pair. Input-output models use the
/// earlier entries to assemble their data window.
#[derive(Debug, Clone, Copy)]
pub struct StagePath<'a> {
    pub states: &'a [DVector<f64>],
    pub controls: &'a [DVector<f64>],
}

impl<'a> StagePath<'a> {
    pub fn new(states: &'a [DVector<f64>], controls: &'a [DVector<f64>]) -> Self {
        debug_assert!(!states.is_empty() && states.len() == controls.len());
        Self { states, controls }
    }

    pub fn stage(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self) -> &'a DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    pub fn control(&self) -> &'a DVector<f64> {
        &self.controls[self.controls.len() - 1]
    }

    /// State `back` stages before the last one, if it lies inside the path.
    pub fn state_back(&self, back: usize) -> Option<&'a DVector<f64>> {
        self.stage().checked_sub(back).map(|j| &self.states[j])
    }

    pub fn control_back(&self, back: usize) -> Option<&'a DVector<f64>> {
        self.stage().checked_sub(back).map(|j| &self.controls[j])
    }
}

/// A discrete-time plant in state- and control-dependent coefficient form.
///
/// Implementations must return finite `n x n` and `n x m` matrices for every
/// finite argument, with removable singularities resolved internally.
pub trait ScdcModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn label(&self) -> &str;

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError>;

    /// Coefficients at the last stage of a predicted trajectory.
    fn stage_coefficients(&self, path: StagePath<'_>) -> Result<Coefficients, ModelError> {
        self.coefficients(path.state(), path.control())
    }
}

/// Validates shape and finiteness of a coefficient pair.
pub fn check_coefficients<M: ScdcModel + ?Sized>(
    model: &M,
    c: &Coefficients,
) -> Result<(), ModelError> {
    let (n, m) = (model.state_dim(), model.input_dim());
    for (what, mat, expected) in [("A", &c.a, (n, n)), ("B", &c.b, (n, m))] {
        if mat.shape() != expected {
            return Err(ModelError::Shape {
                model: model.label().to_string(),
                what,
                got: mat.shape(),
                expected,
            });
        }
        if !mat.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite {
                model: model.label().to_string(),
                what,
            });
        }
    }
    Ok(())
}

/// One pseudo-linear step `A(x, u) x + B(x, u) u`.
pub fn step_pseudolinear<M: ScdcModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let c = model.coefficients(x, u)?;
    check_coefficients(model, &c)?;
    let next = c.apply(x, u);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(ModelError::NonFinite {
            model: model.label().to_string(),
            what: "state",
        })
    }
}

/// Model backed by a closure returning `(A, B)`.
pub struct PseudoLinearModel<F> {
    label: String,
    n: usize,
    m: usize,
    coeff: F,
}

impl<F> PseudoLinearModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync,
{
    pub fn new(label: impl Into<String>, n: usize, m: usize, coeff: F) -> Self {
        Self {
            label: label.into(),
            n,
            m,
            coeff,
        }
    }
}

impl<F> ScdcModel for PseudoLinearModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError> {
        let (a, b) = (self.coeff)(x, u);
        Ok(Coefficients::new(a, b))
    }
}

/// Constant-coefficient model `x_next = A x + B u`.
#[derive(Debug, Clone)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert!(
            a.is_square() && a.nrows() == b.nrows(),
            "inconsistent LTI dimensions"
        );
        Self { a, b }
    }
}

impl ScdcModel for LtiModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn label(&self) -> &str {
        "lti"
    }

    fn coefficients(&self, _: &DVector<f64>, _: &DVector<f64>) -> Result<Coefficients, ModelError> {
        Ok(Coefficients::new(self.a.clone(), self.b.clone()))
    }
}

/// Lower and upper magnitude saturation levels of one scalar channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationSpec {
    lower: f64,
    upper: f64,
}

impl SaturationSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ModelError> {
        if lower < upper {
            Ok(Self { lower, upper })
        } else {
            Err(ModelError::InvalidLevels { lower, upper })
        }
    }

    /// Levels `[-level, level]`.
    pub fn symmetric(level: f64) -> Result<Self, ModelError> {
        Self::new(-level, level)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Same saturation seen from coordinates shifted by `offset` (`u = v - offset`).
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            lower: self.lower - offset,
            upper: self.upper - offset,
        }
    }

    pub fn apply(&self, u: f64) -> f64 {
        u.clamp(self.lower, self.upper)
    }

    fn zero_is_interior(&self) -> bool {
        self.lower < 0.0 && 0.0 < self.upper
    }
}

pub fn saturate(u: f64, spec: &SaturationSpec) -> f64 {
    spec.apply(u)
}

/// Which saturation gain to form: `sigma(u)/u` or `sigma(u)^2/u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainPower {
    Linear,
    Quadratic,
}

/// `sigma(u)/u` or `sigma(u)^2/u` with the value at `u = 0` set to its limit.
pub fn saturation_gain_scalar(
    u: f64,
    spec: &SaturationSpec,
    power: GainPower,
) -> Result<f64, ModelError> {
    let singular = match power {
        GainPower::Linear => u.abs() < GAIN_SINGULARITY_GUARD,
        GainPower::Quadratic => u == 0.0,
    };
    if singular {
        if !spec.zero_is_interior() {
            return Err(ModelError::Singularity {
                lower: spec.lower,
                upper: spec.upper,
            });
        }
        return Ok(match power {
            GainPower::Linear => 1.0,
            GainPower::Quadratic => 0.0,
        });
    }
    let s = spec.apply(u);
    Ok(match power {
        GainPower::Linear => s / u,
        GainPower::Quadratic => s * s / u,
    })
}

/// Matrix `M` with `M u = sigma(u)` for a channel-wise saturated vector input.
///
/// Returns the identity when no channel saturates, otherwise the rank-one
/// factor `sigma(u) u^T / |u|^2`.
pub fn saturation_gain_vector(
    u: &DVector<f64>,
    specs: &[SaturationSpec],
) -> Result<DMatrix<f64>, ModelError> {
    assert_eq!(u.len(), specs.len(), "one saturation spec per channel");
    let sat = DVector::from_iterator(u.len(), u.iter().zip(specs).map(|(&v, s)| s.apply(v)));
    if sat == *u {
        return Ok(DMatrix::identity(u.len(), u.len()));
    }
    let norm2 = u.norm_squared();
    if norm2 == 0.0 {
        // u = 0 but sigma(0) != 0: zero would have to map to a nonzero vector.
        let bad = specs
            .iter()
            .find(|s| !(s.lower <= 0.0 && 0.0 <= s.upper))
            .unwrap();
        return Err(ModelError::Singularity {
            lower: bad.lower,
            upper: bad.upper,
        });
    }
    Ok(&sat * u.transpose() / norm2)
}

/// `sin(x)/x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}
