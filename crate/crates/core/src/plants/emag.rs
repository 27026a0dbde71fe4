//! Mass on a spring pulled by an electromagnet.
//!
//! State `x = (q - r, q_dot)`, the position error from the setpoint `r` and the
//! velocity. The control is the current offset `u = i - i_eq` from the
//! equilibrium current.

use nalgebra::{dvector, DMatrix, DVector};

use crate::scdc::{
    saturation_gain_scalar, Coefficients, GainPower, ModelError, SaturationSpec, ScdcModel,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmagParams {
    /// Mass (kg).
    pub mass: f64,
    /// Spring stiffness (N/m).
    pub stiffness: f64,
    /// Damping (N s/m).
    pub damping: f64,
    /// Distance to the magnet with the spring relaxed (m).
    pub gap: f64,
    /// Magnet force constant (N m^2 / A^2).
    pub force_constant: f64,
    /// Position setpoint (m).
    pub setpoint: f64,
    /// Limits on the coil current (A).
    pub current_sat: SaturationSpec,
    pub form: EmagModelForm,
}

/// Which pseudo-linear factorization the controller predicts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmagModelForm {
    /// Exact factorization of the Euler map: the magnet stiffness around the
    /// setpoint goes into `A` and the force change
    /// `eps (sigma(i_eq + u)^2 - i_eq^2) / (m d^2)` into `B`.
    #[default]
    Exact,
    /// Spring and damper in `A`, force `eps sigma_a(u)^2 / (m d^2)` in `B`.
    /// Agrees with the Euler map only at the equilibrium, and has no
    /// first-order control authority there.
    Approximate,
}

impl EmagModelForm {
    pub fn name(&self) -> &'static str {
        match self {
            EmagModelForm::Approximate => "approximate",
            EmagModelForm::Exact => "exact",
        }
    }
}

impl EmagParams {
    pub fn reference() -> Self {
        Self {
            mass: 1.0,
            stiffness: 5.0,
            damping: 5.0,
            gap: 3.0,
            force_constant: 1.0,
            setpoint: 2.0,
            current_sat: SaturationSpec::symmetric(10.0).unwrap(),
            form: EmagModelForm::Exact,
        }
    }

    /// Current holding the mass at the setpoint.
    pub fn equilibrium_current(&self) -> f64 {
        let d = self.gap - self.setpoint;
        (d * d * self.stiffness * self.setpoint / self.force_constant).sqrt()
    }

    /// Saturation of the shifted control `u`: the current limits moved by
    /// the equilibrium current.
    pub fn control_sat(&self) -> SaturationSpec {
        self.current_sat.shifted(self.equilibrium_current())
    }

    /// Coil current actually applied for control `u`.
    pub fn current(&self, u: f64) -> f64 {
        self.current_sat.apply(u + self.equilibrium_current())
    }

    fn distance(&self, x1: f64) -> Result<f64, ModelError> {
        let d = self.gap - x1 - self.setpoint;
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(ModelError::Domain {
                model: "emag".into(),
                reason: format!("mass reached the magnet (position error {x1})"),
            })
        }
    }

    /// Continuous-time field in error coordinates.
    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let d = self.distance(x[0])?;
        let i = self.current(u[0]);
        let accel = -self.damping / self.mass * x[1]
            - self.stiffness / self.mass * (x[0] + self.setpoint)
            + self.force_constant * i * i / (self.mass * d * d);
        Ok(dvector![x[1], accel])
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out: Vec<(&'static str, String)> = [
            ("mass", self.mass),
            ("stiffness", self.stiffness),
            ("damping", self.damping),
            ("gap", self.gap),
            ("force_constant", self.force_constant),
            ("setpoint", self.setpoint),
            ("current_min", self.current_sat.lower()),
            ("current_max", self.current_sat.upper()),
            ("equilibrium_current", self.equilibrium_current()),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
        out.push(("model_form", self.form.name().to_string()));
        out
    }

    /// `(sigma(i_eq + u)^2 - i_eq^2) / u`, equal to `2 i_eq + u` while the
    /// current is unsaturated.
    fn force_change_gain(&self, u: f64) -> f64 {
        let ieq = self.equilibrium_current();
        let i = ieq + u;
        if self.current_sat.apply(i) == i {
            2.0 * ieq + u
        } else {
            let s = self.current_sat.apply(i);
            (s * s - ieq * ieq) / u
        }
    }
}

/// Euler-discretized pseudo-linear controller model; see [`EmagModelForm`].
///
/// The approximate form omits the constant spring preload and the cross term
/// `2 i_eq u` of the magnet force.
#[derive(Debug, Clone)]
pub struct EmagModel {
    pub params: EmagParams,
    pub sample_time: f64,
}

impl ScdcModel for EmagModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn label(&self) -> &str {
        "emag"
    }

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError> {
        let p = &self.params;
        let ts = self.sample_time;
        // Predictions may pass the magnet; only the exact contact point is
        // singular, and the caller rejects the non-finite coefficients there.
        let d = p.gap - p.setpoint - x[0];
        let (stiffness, gain) = match p.form {
            EmagModelForm::Approximate => (
                -p.stiffness / p.mass,
                saturation_gain_scalar(u[0], &p.control_sat(), GainPower::Quadratic)?,
            ),
            EmagModelForm::Exact => {
                // eps i_eq^2 (1/d^2 - 1/d0^2) / m = x1 eps i_eq^2 (d0 + d) / (m d^2 d0^2)
                let d0 = p.gap - p.setpoint;
                let ieq = p.equilibrium_current();
                let magnet = p.force_constant * ieq * ieq * (d0 + d) / (p.mass * d * d * d0 * d0);
                (-p.stiffness / p.mass + magnet, p.force_change_gain(u[0]))
            }
        };
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, ts, ts * stiffness, 1.0 - ts * p.damping / p.mass],
        );
        let b = DMatrix::from_column_slice(
            2,
            1,
            &[0.0, ts * p.force_constant * gain / (p.mass * d * d)],
        );
        Ok(Coefficients::new(a, b))
    }
}
