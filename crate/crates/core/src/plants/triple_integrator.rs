//! Triple integrator with asymmetric input saturation, measured through its
//! first state only.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bocf::{CoefficientMap, IoCoefficients, IoWindow};
use crate::scdc::{saturation_gain_scalar, GainPower, SaturationSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleIntegratorParams {
    pub sat: SaturationSpec,
    pub gain_timing: GainTiming,
}

/// Which past input sets the saturation gain inside `G_tau`.
///
/// In the canonical-form realization every block of `B` multiplies the
/// current input, so with [`GainTiming::Lagged`] the realization reproduces
/// the plant only while the saturation state is constant, whereas
/// [`GainTiming::Newest`] reproduces it always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainTiming {
    /// `G_{tau,t}` uses `sigma(u_{t-tau}) / u_{t-tau}`, which makes the
    /// difference equation exact.
    #[default]
    Lagged,
    /// `G_{tau,t}` uses `sigma(u_{t-1}) / u_{t-1}` for every `tau`.
    Newest,
}

impl GainTiming {
    pub fn name(&self) -> &'static str {
        match self {
            GainTiming::Newest => "newest",
            GainTiming::Lagged => "lagged",
        }
    }
}

impl TripleIntegratorParams {
    pub fn reference() -> Self {
        Self {
            sat: SaturationSpec::new(-1.0, 2.0).unwrap(),
            gain_timing: GainTiming::Lagged,
        }
    }

    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[1], x[2], self.sat.apply(u[0])])
    }

    /// Exact zero-order-hold discretization `(A_d, B_d)` for sample time `ts`.
    pub fn zoh(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let a =
            DMatrix::from_row_slice(3, 3, &[1.0, ts, ts * ts / 2.0, 0.0, 1.0, ts, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_column_slice(3, 1, &[ts.powi(3) / 6.0, ts * ts / 2.0, ts]);
        (a, b)
    }

    /// Numerator coefficients of the sampled transfer function
    /// `c (q^2 + 4 q + 1) / (q - 1)^3` with `c = ts^3 / 6`.
    pub fn input_coefficients(ts: f64) -> [f64; 3] {
        let c = ts.powi(3) / 6.0;
        [c, 4.0 * c, c]
    }

    /// Denominator coefficients `F_1..F_3` of `(q - 1)^3` under the convention
    /// `y_k = -sum F_tau y_{k-tau} + ...`.
    pub const OUTPUT_COEFFICIENTS: [f64; 3] = [-3.0, 3.0, -1.0];

    /// Input-output coefficient maps with the saturation carried as a gain
    /// `sigma(u) / u` in each `G_tau`; see [`GainTiming`].
    pub fn io_coefficients(&self, ts: f64) -> IoCoefficients {
        let f: Vec<CoefficientMap> = Self::OUTPUT_COEFFICIENTS
            .iter()
            .map(|&v| {
                Arc::new(move |_: &IoWindow| DMatrix::from_element(1, 1, v)) as CoefficientMap
            })
            .collect();
        let sat = self.sat;
        let g: Vec<CoefficientMap> = Self::input_coefficients(ts)
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let lag = match self.gain_timing {
                    GainTiming::Newest => 1,
                    GainTiming::Lagged => i + 1,
                };
                Arc::new(move |w: &IoWindow| {
                    let gain = saturation_gain_scalar(w.input(lag)[0], &sat, GainPower::Linear)
                        .unwrap_or(f64::NAN);
                    DMatrix::from_element(1, 1, c * gain)
                }) as CoefficientMap
            })
            .collect();
        IoCoefficients::new(1, 1, f, g)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("u_min", self.sat.lower().to_string()),
            ("u_max", self.sat.upper().to_string()),
            ("gain_timing", self.gain_timing.name().to_string()),
        ]
    }
}
