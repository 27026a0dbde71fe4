//! Inverted pendulum on a slider-crank driven base.
//!
//! State `(theta, theta_dot, phi)`: pendulum angle from upright, its rate, and
//! the wheel angle. The control is the wheel speed, saturated.

use nalgebra::{dvector, DMatrix, DVector};

use crate::scdc::{
    saturation_gain_scalar, sinc, Coefficients, GainPower, ModelError, SaturationSpec, ScdcModel,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KapitzaParams {
    /// Pendulum length (m).
    pub l: f64,
    /// Wheel radius (m).
    pub r: f64,
    /// Arm length (m).
    pub a: f64,
    pub g: f64,
    pub sat: SaturationSpec,
}

impl KapitzaParams {
    pub fn reference() -> Self {
        Self {
            l: 0.25,
            r: 1.0,
            a: 2.0,
            g: 9.81,
            sat: SaturationSpec::symmetric(3.0).unwrap(),
        }
    }

    /// Base-acceleration coupling `-(r/l)(cos phi + r cos 2phi / a)`.
    fn coupling(&self, phi: f64) -> f64 {
        -(self.r / self.l) * (phi.cos() + self.r * (2.0 * phi).cos() / self.a)
    }

    /// Continuous-time field with the saturation applied to `u`.
    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = self.sat.apply(u[0]);
        let sin1 = x[0].sin();
        dvector![
            x[1],
            self.g / self.l * sin1 + self.coupling(x[2]) * sin1 * s * s,
            s
        ]
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        [
            ("l", self.l),
            ("r", self.r),
            ("a", self.a),
            ("g", self.g),
            ("u_min", self.sat.lower()),
            ("u_max", self.sat.upper()),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect()
    }
}

/// Euler-discretized pseudo-linear model; `sin(theta)` is factored as
/// `sinc(theta) theta`.
#[derive(Debug, Clone)]
pub struct KapitzaModel {
    pub params: KapitzaParams,
    pub sample_time: f64,
}

impl ScdcModel for KapitzaModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn label(&self) -> &str {
        "kapitza"
    }

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError> {
        let p = &self.params;
        let ts = self.sample_time;
        let mut a = DMatrix::identity(3, 3);
        a[(0, 1)] = ts;
        a[(1, 0)] = ts * p.g / p.l * sinc(x[0]);
        let quad = saturation_gain_scalar(u[0], &p.sat, GainPower::Quadratic)?;
        let lin = saturation_gain_scalar(u[0], &p.sat, GainPower::Linear)?;
        let b = DMatrix::from_column_slice(
            3,
            1,
            &[0.0, ts * p.coupling(x[2]) * x[0].sin() * quad, ts * lin],
        );
        Ok(Coefficients::new(a, b))
    }
}
