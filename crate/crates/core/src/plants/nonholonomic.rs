//! Nonholonomic (Brockett) integrator with a saturated two-channel input.

use nalgebra::{DMatrix, DVector};

use crate::scdc::{saturation_gain_vector, Coefficients, ModelError, SaturationSpec, ScdcModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonholonomicParams {
    pub sat: [SaturationSpec; 2],
}

impl NonholonomicParams {
    pub fn reference() -> Self {
        let s = SaturationSpec::symmetric(1.0).unwrap();
        Self { sat: [s, s] }
    }

    /// Input matrix `[[1, 0], [0, 1], [-x2, x1]]`.
    pub fn input_matrix(x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -x[1], x[0]])
    }

    pub fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(2, u.iter().zip(&self.sat).map(|(&v, s)| s.apply(v)))
    }

    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        Self::input_matrix(x) * self.saturate(u)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        [
            ("u1_min", self.sat[0].lower()),
            ("u1_max", self.sat[0].upper()),
            ("u2_min", self.sat[1].lower()),
            ("u2_max", self.sat[1].upper()),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct NonholonomicModel {
    pub params: NonholonomicParams,
    pub sample_time: f64,
}

impl ScdcModel for NonholonomicModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn label(&self) -> &str {
        "nonholonomic"
    }

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError> {
        let gain = saturation_gain_vector(u, &self.params.sat)?;
        let b = NonholonomicParams::input_matrix(x) * gain * self.sample_time;
        Ok(Coefficients::new(DMatrix::identity(3, 3), b))
    }
}
