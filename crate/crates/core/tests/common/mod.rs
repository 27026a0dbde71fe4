//! Reference computations and fixtures shared by the integration tests. The
//! reference maps are written out from first principles and do not call the
//! code they check.
#![allow(dead_code)]

use std::sync::Arc;

use iscd_mpc::bocf::{reconstruct_state, CoefficientMap, IoCoefficients, IoHistory, IoWindow};
use iscd_mpc::plants::{
    EmagModel, EmagParams, KapitzaModel, KapitzaParams, NonholonomicModel, NonholonomicParams,
};
use iscd_mpc::scdc::step_pseudolinear;
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Symmetric positive definite matrix with smallest eigenvalue at least `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

pub fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Max-norm mismatch relative to `1 + |reference|_inf`.
pub fn rel_err(got: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (got - reference).amax() / (1.0 + reference.amax())
}

// ---------------------------------------------------------------------------
// Plants: one explicit Euler step of the nonlinear vector fields, written out
// from the equations of motion.

pub struct KapitzaConsts {
    pub l: f64,
    pub r: f64,
    pub a: f64,
    pub g: f64,
    pub umax: f64,
}

pub const KAPITZA: KapitzaConsts = KapitzaConsts {
    l: 0.25,
    r: 1.0,
    a: 2.0,
    g: 9.81,
    umax: 3.0,
};

pub fn kapitza_euler(ts: f64, x: &DVector<f64>, u: f64) -> DVector<f64> {
    let c = &KAPITZA;
    let s = clip(u, -c.umax, c.umax);
    let base = (c.r / c.l) * (x[2].cos() + c.r / c.a * (2.0 * x[2]).cos());
    let theta_dd = c.g / c.l * x[0].sin() - base * x[0].sin() * s * s;
    DVector::from_column_slice(&[x[0] + ts * x[1], x[1] + ts * theta_dd, x[2] + ts * s])
}

pub fn nonholonomic_euler(ts: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let s1 = clip(u[0], -1.0, 1.0);
    let s2 = clip(u[1], -1.0, 1.0);
    DVector::from_column_slice(&[
        x[0] + ts * s1,
        x[1] + ts * s2,
        x[2] + ts * (x[0] * s2 - x[1] * s1),
    ])
}

pub struct EmagConsts {
    pub m: f64,
    pub k: f64,
    pub b: f64,
    pub gap: f64,
    pub eps: f64,
    pub r: f64,
    pub imax: f64,
}

pub const EMAG: EmagConsts = EmagConsts {
    m: 1.0,
    k: 5.0,
    b: 5.0,
    gap: 3.0,
    eps: 1.0,
    r: 2.0,
    imax: 10.0,
};

/// Euler step in error coordinates `(q - r, q_dot)` with control
/// `u = i - sqrt(10)`.
pub fn emag_euler(ts: f64, x: &DVector<f64>, u: f64) -> DVector<f64> {
    let c = &EMAG;
    let i = clip(u + 10f64.sqrt(), -c.imax, c.imax);
    let q = x[0] + c.r;
    let d = c.gap - q;
    let acc = (-c.k * q - c.b * x[1] + c.eps * i * i / (d * d)) / c.m;
    DVector::from_column_slice(&[x[0] + ts * x[1], x[1] + ts * acc])
}

/// `exp([[A, B], [0, 0]] t)` for the chain of three integrators, summed as a
/// (terminating) power series.
pub fn triple_integrator_zoh(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 1)] = 1.0;
    m[(1, 2)] = 1.0;
    m[(2, 3)] = 1.0;
    let mut term = DMatrix::identity(4, 4);
    let mut sum = DMatrix::identity(4, 4);
    for k in 1..=6 {
        term = &term * &m * (ts / k as f64);
        sum += &term;
    }
    (
        sum.view((0, 0), (3, 3)).into_owned(),
        sum.view((0, 3), (3, 1)).into_owned(),
    )
}

// ---------------------------------------------------------------------------
// Quadratic programs.

/// Minimizer of `1/2 z'Hz + g'z` over `lo <= z <= hi` by enumerating every
/// assignment of each coordinate to free, lower or upper.
pub fn brute_force_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> DVector<f64> {
    let d = g.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(d as u32) {
        let mut c = code;
        let mut z = DVector::zeros(d);
        let mut free = Vec::new();
        let mut possible = true;
        for i in 0..d {
            match c % 3 {
                0 => free.push(i),
                1 => z[i] = lo[i],
                _ => z[i] = hi[i],
            }
            if !z[i].is_finite() {
                possible = false;
            }
            c /= 3;
        }
        if !possible {
            continue;
        }
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let mut rhs = DVector::zeros(free.len());
            for (a, &i) in free.iter().enumerate() {
                let mut v = -g[i];
                for j in 0..d {
                    if !free.contains(&j) {
                        v -= h[(i, j)] * z[j];
                    }
                }
                rhs[a] = v;
            }
            let Some(sol) = hff.lu().solve(&rhs) else {
                continue;
            };
            for (a, &i) in free.iter().enumerate() {
                z[i] = sol[a];
            }
        }
        let feasible = (0..d).all(|i| z[i] >= lo[i] - 1e-12 && z[i] <= hi[i] + 1e-12);
        if !feasible {
            continue;
        }
        let obj = 0.5 * z.dot(&(h * &z)) + g.dot(&z);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, z));
        }
    }
    best.expect("a box with finite bounds has a minimizer").1
}

/// Minimizes the horizon cost over states and controls jointly by solving
/// the equality-constrained KKT system of the uncondensed problem.
///
/// Returns the stacked controls and the optimal cost.
pub fn sparse_kkt_ltv(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
    xi1: &DVector<f64>,
    q: &DMatrix<f64>,
    q_terminal: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> (DVector<f64>, f64) {
    let stages = a_seq.len();
    let horizon = stages + 1;
    let n = xi1.len();
    let m = r.nrows();
    let nx = n * horizon;
    let nu = m * stages;
    let nw = nx + nu;
    let ne = n * horizon;

    let mut hess = DMatrix::zeros(nw, nw);
    for j in 0..horizon {
        let w = if j + 1 == horizon { q_terminal } else { q };
        hess.view_mut((j * n, j * n), (n, n)).copy_from(w);
    }
    for j in 0..stages {
        hess.view_mut((nx + j * m, nx + j * m), (m, m)).copy_from(r);
    }
    let mut eq = DMatrix::zeros(ne, nw);
    let mut rhs = DVector::zeros(ne);
    eq.view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    rhs.rows_mut(0, n).copy_from(xi1);
    for j in 0..stages {
        let row = (j + 1) * n;
        eq.view_mut((row, (j + 1) * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        eq.view_mut((row, j * n), (n, n)).copy_from(&(-&a_seq[j]));
        eq.view_mut((row, nx + j * m), (n, m))
            .copy_from(&(-&b_seq[j]));
    }

    let mut kkt = DMatrix::zeros(nw + ne, nw + ne);
    kkt.view_mut((0, 0), (nw, nw)).copy_from(&hess);
    kkt.view_mut((0, nw), (nw, ne)).copy_from(&eq.transpose());
    kkt.view_mut((nw, 0), (ne, nw)).copy_from(&eq);
    let mut full_rhs = DVector::zeros(nw + ne);
    full_rhs.rows_mut(nw, ne).copy_from(&rhs);
    let sol = kkt
        .lu()
        .solve(&full_rhs)
        .expect("KKT matrix is nonsingular");
    let w = sol.rows(0, nw).into_owned();
    let cost = 0.5 * w.dot(&(&hess * &w));
    (w.rows(nx, nu).into_owned(), cost)
}

/// Feedback gain of the first stage of a finite-horizon LQR problem with
/// `stages` control moves, from the textbook backward Riccati recursion.
pub fn lqr_first_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    q_terminal: &DMatrix<f64>,
    r: &DMatrix<f64>,
    stages: usize,
) -> DMatrix<f64> {
    let mut p = q_terminal.clone();
    let mut gain = DMatrix::zeros(b.ncols(), a.nrows());
    for _ in 0..stages {
        let s = r + b.transpose() * &p * b;
        let s_inv = s.try_inverse().expect("R + B'PB is invertible");
        gain = &s_inv * b.transpose() * &p * a;
        p = q + a.transpose() * &p * a - a.transpose() * &p * b * &s_inv * b.transpose() * &p * a;
    }
    gain
}

// ---------------------------------------------------------------------------
// Block observable canonical form, built from its definition.

/// State-space matrices of the realization for coefficient values
/// `F_1..F_n`, `G_1..G_n`.
pub fn canonical_form(f: &[DMatrix<f64>], g: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = f.len();
    let p = f[0].nrows();
    let m = g[0].ncols();
    let mut a = DMatrix::zeros(n * p, n * p);
    let mut b = DMatrix::zeros(n * p, m);
    for tau in 0..n {
        for i in 0..p {
            for j in 0..p {
                a[(tau * p + i, j)] = -f[tau][(i, j)];
            }
            if tau + 1 < n {
                a[(tau * p + i, (tau + 1) * p + i)] = 1.0;
            }
            for j in 0..m {
                b[(tau * p + i, j)] = g[tau][(i, j)];
            }
        }
    }
    (a, b)
}

/// Coefficient maps `M + tanh(w . y_{t-1}) N + cos(u_{t-lag}) P` with random
/// fixed matrices, so every coefficient depends on the data window.
pub fn random_ltv(r: &mut rand_chacha::ChaCha8Rng, n: usize, p: usize, m: usize) -> IoCoefficients {
    let mut make = |rows: usize, cols: usize, lag: usize| -> CoefficientMap {
        let base = random_matrix(r, rows, cols, 0.3);
        let by_output = random_matrix(r, rows, cols, 0.2);
        let by_input = random_matrix(r, rows, cols, 0.2);
        let w = random_matrix(r, 1, p, 1.0);
        Arc::new(move |win: &IoWindow| {
            let s = (&w * win.output(1))[(0, 0)].tanh();
            let c = win.input(lag)[0].cos();
            &base + &by_output * s + &by_input * c
        })
    };
    let f: Vec<_> = (1..=n).map(|tau| make(p, p, tau)).collect();
    let g: Vec<_> = (1..=n).map(|tau| make(p, m, tau)).collect();
    IoCoefficients::new(p, m, f, g)
}

/// Runs the state recursion `x_{k+1} = A_{k+1} x_k + B_{k+1} u_k` from `x0`,
/// with coefficients evaluated on the data through time `k`, and returns the
/// states, outputs and inputs.
pub fn simulate_bocf(
    co: &IoCoefficients,
    x0: DVector<f64>,
    inputs: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (n, p, m) = (co.order(), co.outputs(), co.inputs());
    let mut states = vec![x0];
    let mut ys: Vec<DVector<f64>> = Vec::new();
    for (k, u) in inputs.iter().enumerate() {
        let x = states.last().unwrap();
        ys.push(x.rows(0, p).into_owned());
        let window = IoWindow {
            outputs: (0..n)
                .map(|s| {
                    if s <= k {
                        ys[k - s].clone()
                    } else {
                        DVector::zeros(p)
                    }
                })
                .collect(),
            inputs: (0..n)
                .map(|s| {
                    if s <= k {
                        inputs[k - s].clone()
                    } else {
                        DVector::zeros(m)
                    }
                })
                .collect(),
        };
        let (f, g) = co.evaluate(&window).unwrap();
        let (a, b) = canonical_form(&f, &g);
        states.push(a * x + b * u);
    }
    (states, ys)
}

/// Worst relative mismatch between the reconstruction and the realization
/// state for `k >= n` on one random coefficient sequence.
pub fn deadbeat_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let p = r.random_range(1..=2);
    let m = r.random_range(1..=2);
    let co = random_ltv(&mut r, n, p, m);
    let steps = 40;
    let inputs: Vec<_> = (0..steps).map(|_| random_vector(&mut r, m, 1.0)).collect();
    let x0 = random_vector(&mut r, n * p, 2.0);
    let (states, ys) = simulate_bocf(&co, x0, &inputs);

    let mut hist = IoHistory::for_system(&co);
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        if k >= n {
            let xhat = reconstruct_state(&co, &hist, &ys[k]).unwrap();
            worst = worst.max(rel_err(&xhat, &states[k]));
        }
        hist.push(ys[k].clone(), inputs[k].clone());
    }
    worst
}

// ---------------------------------------------------------------------------
// Factorization sweeps: worst relative mismatch between one pseudo-linear step
// of a controller model and the Euler step above, over random samples.

pub fn kapitza_factorization_error(samples: usize, seed: u64) -> f64 {
    let model = KapitzaModel {
        params: KapitzaParams::reference(),
        sample_time: 0.1,
    };
    let mut r = rng(seed);
    let tau = std::f64::consts::TAU;
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let x = dvector![
            r.random_range(-tau..tau),
            r.random_range(-20.0..20.0),
            r.random_range(-tau..tau)
        ];
        // Every tenth sample sits on the removable singularity u = 0.
        let u = if i % 10 == 0 {
            0.0
        } else {
            r.random_range(-6.0..6.0)
        };
        let got = step_pseudolinear(&model, &x, &dvector![u]).unwrap();
        worst = worst.max(rel_err(&got, &kapitza_euler(0.1, &x, u)));
    }
    worst
}

pub fn nonholonomic_factorization_error(samples: usize, seed: u64) -> f64 {
    let model = NonholonomicModel {
        params: NonholonomicParams::reference(),
        sample_time: 0.01,
    };
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let x = DVector::from_fn(3, |_, _| r.random_range(-15.0..15.0));
        let mut u = DVector::from_fn(2, |_, _| r.random_range(-3.0..3.0));
        if i % 10 == 0 {
            u[i / 10 % 2] = 0.0;
        }
        let got = step_pseudolinear(&model, &x, &u).unwrap();
        worst = worst.max(rel_err(&got, &nonholonomic_euler(0.01, &x, &u)));
    }
    worst
}

/// Uses the given model form; gaps from 0.2 m to 4.5 m and currents on both
/// sides of the limits.
pub fn emag_factorization_error(params: EmagParams, samples: usize, seed: u64) -> f64 {
    let model = EmagModel {
        params,
        sample_time: 0.01,
    };
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let x = dvector![r.random_range(-3.5..0.8), r.random_range(-5.0..5.0)];
        let u = if i % 10 == 0 {
            0.0
        } else {
            r.random_range(-20.0..20.0)
        };
        let got = step_pseudolinear(&model, &x, &dvector![u]).unwrap();
        worst = worst.max(rel_err(&got, &emag_euler(0.01, &x, u)));
    }
    worst
}

/// Outputs `y_0..y_N` of the sampled triple integrator under saturation to
/// `[-1, 2]`.
pub fn triple_integrator_outputs(ts: f64, x0: DVector<f64>, inputs: &[f64]) -> Vec<f64> {
    let (a, b) = triple_integrator_zoh(ts);
    let mut x = x0;
    let mut y = Vec::with_capacity(inputs.len() + 1);
    for &u in inputs {
        y.push(x[0]);
        x = &a * &x + &b * clip(u, -1.0, 2.0);
    }
    y.push(x[0]);
    y
}

/// Worst relative residual of the input-output equation, with coefficients
/// evaluated on the window of time `k`, along a sampled trajectory driven by
/// random saturating inputs.
pub fn io_equation_error(co: &IoCoefficients, ts: f64, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs: Vec<f64> = (0..samples)
        .map(|i| {
            if i % 7 == 0 {
                0.0
            } else {
                r.random_range(-4.0..5.0)
            }
        })
        .collect();
    let x0 = dvector![
        r.random_range(-5.0..5.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0)
    ];
    let y = triple_integrator_outputs(ts, x0, &inputs);
    let mut hist = IoHistory::for_system(co);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        if k >= 3 {
            let window = hist.window(3, 1);
            let (f, g) = co.evaluate(&window).unwrap();
            let mut pred = 0.0;
            for tau in 1..=3 {
                pred += -f[tau - 1][(0, 0)] * window.output(tau)[0]
                    + g[tau - 1][(0, 0)] * window.input(tau)[0];
            }
            worst = worst.max((pred - y[k]).abs() / (1.0 + y[k].abs()));
        }
        hist.push(dvector![y[k]], dvector![inputs[k]]);
    }
    worst
}
