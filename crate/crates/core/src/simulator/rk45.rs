//! Adaptive Dormand-Prince 5(4) integrator.

use nalgebra::DVector;
use thiserror::Error;

use crate::scdc::ModelError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("step size {h:e} underflowed at t = {t}; problem looks stiff")]
    Stiffness { t: f64, h: f64 },
    #[error("non-finite state or derivative at t = {t}")]
    Divergence { t: f64 },
    #[error("more than {0} steps requested")]
    TooManySteps(usize),
    #[error("invalid interval [{t0}, {t1}]")]
    Interval { t0: f64, t1: f64 },
    #[error(transparent)]
    Field(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-5,
        }
    }
}

const MAX_STEPS: usize = 1_000_000;
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights equal the last row of A (first-same-as-last).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn check(v: DVector<f64>, t: f64) -> Result<DVector<f64>, IntegrationError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(IntegrationError::Divergence { t })
    }
}

/// Scaled RMS norm with per-component scale `atol + rtol * |x|`.
fn scaled_norm(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter()
        .zip(scale.iter())
        .map(|(a, s)| (a / s).powi(2))
        .sum::<f64>()
        / v.len() as f64)
        .sqrt()
}

/// Starting step from the local scale of the solution and its derivatives.
fn initial_step<F>(
    field: &mut F,
    t0: f64,
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    span: f64,
    tol: Tolerances,
) -> Result<f64, IntegrationError>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, ModelError>,
{
    let scale = x0.map(|v| tol.atol + tol.rtol * v.abs());
    let d0 = scaled_norm(x0, &scale);
    let d1 = scaled_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let x1 = x0 + f0 * h0;
    let f1 = check(field(t0 + h0, &x1)?, t0 + h0)?;
    let d2 = scaled_norm(&(f1 - f0), &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrates `x' = field(t, x)` from `t0` to `t1` and returns `x(t1)`.
///
/// Steps are accepted when the embedded error estimate, scaled by
/// `atol + rtol max(|x|, |x_new|)`, has RMS norm at most one. Step changes are
/// limited to the factor range `[0.2, 10]`.
pub fn rk45<F>(
    mut field: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    tol: Tolerances,
) -> Result<DVector<f64>, IntegrationError>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, ModelError>,
{
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(IntegrationError::Interval { t0, t1 });
    }
    let mut t = t0;
    let mut x = check(x0.clone(), t)?;
    let mut f = check(field(t, &x)?, t)?;
    let mut h = initial_step(&mut field, t, &x, &f, t1 - t0, tol)?;
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); 7];

    for _ in 0..MAX_STEPS {
        let remaining = t1 - t;
        if remaining <= 0.0 {
            return Ok(x);
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let min_step = 16.0 * f64::EPSILON * t.abs().max(t1.abs());
        if h < min_step {
            return Err(IntegrationError::Stiffness { t, h });
        }

        k[0].copy_from(&f);
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    xs.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k[s] = check(field(t + C[s] * h, &xs)?, t + C[s] * h)?;
        }
        let mut x_new = x.clone();
        let mut err = DVector::zeros(x.len());
        for s in 0..7 {
            if B5[s] != 0.0 {
                x_new.axpy(h * B5[s], &k[s], 1.0);
            }
            err.axpy(h * (B5[s] - B4[s]), &k[s], 1.0);
        }
        let scale = x.zip_map(&x_new, |a, b| tol.atol + tol.rtol * a.abs().max(b.abs()));
        let e = scaled_norm(&err, &scale);
        if !e.is_finite() {
            return Err(IntegrationError::Divergence { t });
        }

        if e <= 1.0 {
            t = if last { t1 } else { t + h };
            x = check(x_new, t)?;
            f = k[6].clone();
            let factor = if e == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * e.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if last {
                return Ok(x);
            }
            h *= factor;
        } else {
            h *= (SAFETY * e.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
        }
    }
    Err(IntegrationError::TooManySteps(MAX_STEPS))
}
