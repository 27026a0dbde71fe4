//! Block observable canonical form of input-output systems
//!
//! ```text
//! y_k = -sum_{tau=1}^n F_{tau,k} y_{k-tau} + sum_{tau=1}^n G_{tau,k} u_{k-tau}
//! ```
//!
//! where `F_{tau,k}`, `G_{tau,k}` are functions of the data window
//! `(y_{k-1..k-n}, u_{k-1..k-n})`. The realization has state dimension `n p`,
//! and its state is an explicit function of past inputs and outputs, so the
//! reconstruction below acts as a deadbeat observer.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::scdc::{Coefficients, ModelError, ScdcModel, StagePath};

/// Data window `(y_{t-1}, ..., y_{t-n}, u_{t-1}, ..., u_{t-n})` defining the
/// coefficients at time `t`. Index 0 holds the most recent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct IoWindow {
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl IoWindow {
    /// `y_{t-s}` for `s = 1..=n`.
    pub fn output(&self, s: usize) -> &DVector<f64> {
        &self.outputs[s - 1]
    }

    /// `u_{t-s}` for `s = 1..=n`.
    pub fn input(&self, s: usize) -> &DVector<f64> {
        &self.inputs[s - 1]
    }
}

pub type CoefficientMap = Arc<dyn Fn(&IoWindow) -> DMatrix<f64> + Send + Sync>;

/// Output and input coefficient matrices `(F_1..F_n, G_1..G_n)`.
pub type CoefficientSet = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// Realization matrices `(A, B, C)`.
pub type BocfMatrices = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Coefficient maps `f_tau`, `g_tau` for `tau = 1..=n`.
#[derive(Clone)]
pub struct IoCoefficients {
    order: usize,
    outputs: usize,
    inputs: usize,
    f: Vec<CoefficientMap>,
    g: Vec<CoefficientMap>,
}

impl std::fmt::Debug for IoCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IoCoefficients")
            .field("order", &self.order)
            .field("outputs", &self.outputs)
            .field("inputs", &self.inputs)
            .finish_non_exhaustive()
    }
}

impl IoCoefficients {
    pub fn new(
        outputs: usize,
        inputs: usize,
        f: Vec<CoefficientMap>,
        g: Vec<CoefficientMap>,
    ) -> Self {
        assert!(
            !f.is_empty() && f.len() == g.len(),
            "need n maps for both F and G"
        );
        Self {
            order: f.len(),
            outputs,
            inputs,
            f,
            g,
        }
    }

    /// Constant coefficients (the LTI case).
    pub fn constant(f: Vec<DMatrix<f64>>, g: Vec<DMatrix<f64>>) -> Self {
        let p = f[0].nrows();
        let m = g[0].ncols();
        let wrap = |mats: Vec<DMatrix<f64>>| -> Vec<CoefficientMap> {
            mats.into_iter()
                .map(|c| Arc::new(move |_: &IoWindow| c.clone()) as CoefficientMap)
                .collect()
        };
        Self::new(p, m, wrap(f), wrap(g))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn state_dim(&self) -> usize {
        self.order * self.outputs
    }

    /// `(F_1..F_n, G_1..G_n)` on a window, checked for shape and finiteness.
    pub fn evaluate(&self, window: &IoWindow) -> Result<CoefficientSet, ModelError> {
        let (p, m) = (self.outputs, self.inputs);
        let mut fs = Vec::with_capacity(self.order);
        let mut gs = Vec::with_capacity(self.order);
        for tau in 0..self.order {
            let f = (self.f[tau])(window);
            let g = (self.g[tau])(window);
            for (name, mat, shape) in [("F", &f, (p, p)), ("G", &g, (p, m))] {
                if mat.shape() != shape {
                    return Err(ModelError::Domain {
                        model: "bocf".into(),
                        reason: format!(
                            "{name}_{} is {:?}, expected {:?}",
                            tau + 1,
                            mat.shape(),
                            shape
                        ),
                    });
                }
                if !mat.iter().all(|v| v.is_finite()) {
                    return Err(ModelError::Domain {
                        model: "bocf".into(),
                        reason: format!("{name}_{} is not finite", tau + 1),
                    });
                }
            }
            fs.push(f);
            gs.push(g);
        }
        Ok((fs, gs))
    }
}

/// Past outputs and inputs, newest first, zero before time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct IoHistory {
    outputs: VecDeque<DVector<f64>>,
    inputs: VecDeque<DVector<f64>>,
    capacity: usize,
    p: usize,
    m: usize,
}

impl IoHistory {
    /// Zero-initialized history for an order-`n` system. Keeps `2n` samples,
    /// enough to rebuild every window the reconstruction needs.
    pub fn new(order: usize, p: usize, m: usize) -> Self {
        let capacity = 2 * order;
        Self {
            outputs: VecDeque::from(vec![DVector::zeros(p); capacity]),
            inputs: VecDeque::from(vec![DVector::zeros(m); capacity]),
            capacity,
            p,
            m,
        }
    }

    pub fn for_system(co: &IoCoefficients) -> Self {
        Self::new(co.order(), co.outputs(), co.inputs())
    }

    /// Records `(y_k, u_k)`; afterwards `output(1)` is `y_k`.
    pub fn push(&mut self, y: DVector<f64>, u: DVector<f64>) {
        assert_eq!((y.len(), u.len()), (self.p, self.m));
        self.outputs.pop_back();
        self.inputs.pop_back();
        self.outputs.push_front(y);
        self.inputs.push_front(u);
    }

    /// `y_{k-s}` for `s >= 1`, where `k` is the next time to be pushed.
    pub fn output(&self, s: usize) -> &DVector<f64> {
        &self.outputs[s - 1]
    }

    pub fn input(&self, s: usize) -> &DVector<f64> {
        &self.inputs[s - 1]
    }

    /// Window defining the coefficients at time `k - back + 1`, i.e. the data
    /// `(y_{k-back}, ..., y_{k-back-n+1})` and matching inputs.
    pub fn window(&self, order: usize, back: usize) -> IoWindow {
        assert!(back >= 1 && back + order - 1 <= self.capacity);
        IoWindow {
            outputs: (back..back + order)
                .map(|s| self.output(s).clone())
                .collect(),
            inputs: (back..back + order)
                .map(|s| self.input(s).clone())
                .collect(),
        }
    }
}

/// Assembles `(A, B, C)` from coefficient values:
/// first block column of `A` is `(-F_1, ..., -F_n)`, identity blocks sit on
/// the block superdiagonal, `B` stacks `G_1..G_n`, and `C = [I_p 0 ... 0]`.
pub fn bocf_matrices(f: &[DMatrix<f64>], g: &[DMatrix<f64>]) -> BocfMatrices {
    let n = f.len();
    let p = f[0].nrows();
    let m = g[0].ncols();
    let mut a = DMatrix::zeros(n * p, n * p);
    let mut b = DMatrix::zeros(n * p, m);
    for tau in 0..n {
        a.view_mut((tau * p, 0), (p, p)).copy_from(&(-&f[tau]));
        if tau + 1 < n {
            a.view_mut((tau * p, (tau + 1) * p), (p, p))
                .copy_from(&DMatrix::identity(p, p));
        }
        b.view_mut((tau * p, 0), (p, m)).copy_from(&g[tau]);
    }
    let mut c = DMatrix::zeros(p, n * p);
    c.view_mut((0, 0), (p, p))
        .copy_from(&DMatrix::identity(p, p));
    (a, b, c)
}

/// BOCF matrices for the step `k -> k+1`; `window` holds the data through
/// time `k` (it defines `F_{tau,k+1}`, `G_{tau,k+1}`).
pub fn build_bocf(co: &IoCoefficients, window: &IoWindow) -> Result<BocfMatrices, ModelError> {
    let (f, g) = co.evaluate(window)?;
    Ok(bocf_matrices(&f, &g))
}

/// BOCF state at time `k` from the measured output `y_k` and the history.
///
/// The first block is `y_k`. Block `tau >= 2` is
/// `sum_{s=1}^{n-tau+1} (-F_{tau+s-1} y_{k-s} + G_{tau+s-1} u_{k-s})`, with the
/// coefficients multiplying lag `s` evaluated on the window of time
/// `k - s + 1`, which is where the realization picked them up. For constant
/// coefficients this is the plain window formula.
pub fn reconstruct_state(
    co: &IoCoefficients,
    history: &IoHistory,
    y_k: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let (n, p) = (co.order(), co.outputs());
    let mut x = DVector::zeros(n * p);
    x.rows_mut(0, p).copy_from(y_k);
    for s in 1..n {
        let (f, g) = co.evaluate(&history.window(n, s))?;
        let y = history.output(s);
        let u = history.input(s);
        // Lag s contributes to blocks tau = 2..=n-s+1 through index tau+s-1.
        for tau in 2..=n - s + 1 {
            let idx = tau + s - 2;
            let term = -(&f[idx] * y) + &g[idx] * u;
            let mut block = x.rows_mut((tau - 1) * p, p);
            block += term;
        }
    }
    Ok(x)
}

/// The BOCF realization as a pseudo-linear model for the controller.
///
/// At prediction stage `j` the coefficients come from the window of predicted
/// outputs `C x_{k+j-s}` and controls `u_{k+j-s}` of the trajectory being
/// propagated, falling back to the measured history for times before `k`.
pub struct BocfModel<'a> {
    co: &'a IoCoefficients,
    history: &'a IoHistory,
}

pub fn bocf_scdc_model<'a>(co: &'a IoCoefficients, history: &'a IoHistory) -> BocfModel<'a> {
    BocfModel { co, history }
}

impl BocfModel<'_> {
    fn window_at(&self, path: StagePath<'_>) -> IoWindow {
        let (n, p) = (self.co.order(), self.co.outputs());
        let j = path.stage();
        let mut outputs = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for back in 0..n {
            match (path.state_back(back), path.control_back(back)) {
                (Some(x), Some(u)) => {
                    outputs.push(x.rows(0, p).into_owned());
                    inputs.push(u.clone());
                }
                _ => {
                    let s = back - j;
                    outputs.push(self.history.output(s).clone());
                    inputs.push(self.history.input(s).clone());
                }
            }
        }
        IoWindow { outputs, inputs }
    }
}

impl ScdcModel for BocfModel<'_> {
    fn state_dim(&self) -> usize {
        self.co.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.co.inputs()
    }

    fn label(&self) -> &str {
        "bocf"
    }

    fn coefficients(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Coefficients, ModelError> {
        let xs = std::slice::from_ref(x);
        let us = std::slice::from_ref(u);
        self.stage_coefficients(StagePath::new(xs, us))
    }

    fn stage_coefficients(&self, path: StagePath<'_>) -> Result<Coefficients, ModelError> {
        let (a, b, _) = build_bocf(self.co, &self.window_at(path))?;
        Ok(Coefficients::new(a, b))
    }
}
