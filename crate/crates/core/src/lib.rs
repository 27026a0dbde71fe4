//! Iterative state- and control-dependent model predictive control.
//!
//! Nonlinear plants are written in pseudo-linear form
//! `x_{k+1} = A(x_k, u_k) x_k + B(x_k, u_k) u_k` (see [`scdc`]). At every
//! sampling instant the controller freezes the coefficients along the previous
//! control sequence, solves the resulting time-varying QP, and repeats until
//! the sequence stops moving (see [`controller`]).

pub mod bocf;
pub mod controller;
pub mod plants;
pub mod qp;
pub mod scdc;
pub mod simulator;

pub use controller::{IscdController, MpcConfig, StepDiagnostics, StepOutcome};
pub use scdc::{Coefficients, ModelError, SaturationSpec, ScdcModel};
