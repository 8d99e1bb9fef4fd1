//! Adaptive Dormand–Prince 5(4) integration with continuous (dense) output.
//!
//! Three entry points share one stepper:
//! - [`integrate_adaptive`] stores every accepted step and returns a [`DenseOutput`];
//! - [`integrate_with_matrix`] co-integrates a fundamental matrix of the
//!   variational (`M' = J M`) or adjoint (`M' = -J^T M`) equation in one
//!   augmented state, so base and matrix share the step sequence;
//! - [`integrate_sampled`] streams states at a fixed output stride without
//!   storing steps, for long forced runs.
//!
//! Integration in either time direction is supported.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A (possibly non-autonomous) vector field `y' = rhs(t, y)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Jacobian `d rhs / d y`, when the field provides one.
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (**self).rhs(t, y, dy)
    }
    fn jacobian(&self, t: f64, y: &[f64]) -> Option<DMatrix<f64>> {
        (**self).jacobian(t, y)
    }
}

type JacobianFn = Box<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Vector field assembled from closures.
pub struct FnField<F> {
    dim: usize,
    rhs: F,
    jacobian: Option<JacobianFn>,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, rhs: F) -> Self {
        Self {
            dim,
            rhs,
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.rhs)(t, y, dy)
    }
    fn jacobian(&self, t: f64, y: &[f64]) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(t, y))
    }
}

/// Central finite-difference Jacobian, used to check analytic Jacobians.
pub fn finite_difference_jacobian<F: VectorField + ?Sized>(
    field: &F,
    t: f64,
    y: &[f64],
    step: f64,
) -> DMatrix<f64> {
    let n = field.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = step * y[j].abs().max(1.0);
        yp[j] = y[j] + h;
        field.rhs(t, &yp, &mut fp);
        yp[j] = y[j] - h;
        field.rhs(t, &yp, &mut fm);
        yp[j] = y[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    /// Orbit, Floquet and adjoint computations.
    pub const ANALYSIS: Tolerances = Tolerances {
        rtol: 1e-9,
        atol: 1e-11,
    };
    /// Long forced simulations.
    pub const SWEEP: Tolerances = Tolerances {
        rtol: 1e-7,
        atol: 1e-9,
    };

    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0 && atol > 0.0 && rtol.is_finite() && atol.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "tolerances must be positive and finite (rtol = {rtol}, atol = {atol})"
            )));
        }
        Ok(Self { rtol, atol })
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::ANALYSIS
    }
}

/// Tolerances plus step-size limits.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub tol: Tolerances,
    pub h_max: f64,
    pub max_steps: u64,
}

impl StepOptions {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            h_max: f64::INFINITY,
            max_steps: 200_000_000,
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

impl From<Tolerances> for StepOptions {
    fn from(tol: Tolerances) -> Self {
        Self::new(tol)
    }
}

// Dormand–Prince 5(4) tableau with Hairer's dense-output coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

/// Evaluates the quartic continuous extension of one step.
fn eval_cont(cont: &[f64], dim: usize, theta: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..dim {
        let c = |k: usize| cont[k * dim + i];
        out[i] = c(0) + theta * (c(1) + theta1 * (c(2) + theta * (c(3) + theta1 * c(4))));
    }
}

/// Time derivative of the continuous extension.
fn eval_cont_derivative(cont: &[f64], dim: usize, theta: f64, h: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..dim {
        let c = |k: usize| cont[k * dim + i];
        let s = c(3) + theta1 * c(4);
        let ds = -c(4);
        let r = c(2) + theta * s;
        let dr = s + theta * ds;
        let q = c(1) + theta1 * r;
        let dq = -r + theta1 * dr;
        out[i] = (q + theta * dq) / h;
    }
}

/// Single-trajectory Dormand–Prince stepper.
pub struct Stepper<'a, F: VectorField + ?Sized> {
    field: &'a F,
    opts: StepOptions,
    dim: usize,
    dir: f64,
    t: f64,
    t_end: f64,
    y: Vec<f64>,
    h: f64,
    fac_old: f64,
    last_rejected: bool,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err_vec: Vec<f64>,
    t_old: f64,
    h_last: f64,
    cont: Vec<f64>,
    steps: u64,
    rhs_evals: u64,
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    pub fn new(field: &'a F, t0: f64, y0: &[f64], t_end: f64, opts: StepOptions) -> Result<Self> {
        let dim = field.dim();
        if y0.len() != dim {
            return Err(Error::ContractViolation(format!(
                "initial state has length {}, field dimension is {dim}",
                y0.len()
            )));
        }
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::ContractViolation("non-finite time span".into()));
        }
        Tolerances::new(opts.tol.rtol, opts.tol.atol)?;
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite initial state".into()));
        }
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut k0 = vec![0.0; dim];
        field.rhs(t0, y0, &mut k0);
        if k0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField { t: t0 });
        }
        let mut stepper = Self {
            field,
            opts,
            dim,
            dir,
            t: t0,
            t_end,
            y: y0.to_vec(),
            h: 0.0,
            fac_old: 1e-4,
            last_rejected: false,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
            err_vec: vec![0.0; dim],
            t_old: t0,
            h_last: 0.0,
            cont: vec![0.0; 5 * dim],
            steps: 0,
            rhs_evals: 1,
        };
        stepper.k[0] = k0;
        stepper.h = stepper.initial_step();
        Ok(stepper)
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.opts.tol.atol + self.opts.tol.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> f64 {
        let span = (self.t_end - self.t).abs();
        if span == 0.0 {
            return 0.0;
        }
        let n = self.dim as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.dim {
            let sk = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sk).powi(2);
            d1 += (self.k[0][i] / sk).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(span).min(self.opts.h_max);
        for i in 0..self.dim {
            self.y_stage[i] = self.y[i] + self.dir * h0 * self.k[0][i];
        }
        let mut f1 = vec![0.0; self.dim];
        self.field.rhs(self.t + self.dir * h0, &self.y_stage, &mut f1);
        self.rhs_evals += 1;
        let mut d2 = 0.0;
        for i in 0..self.dim {
            let sk = self.scale(self.y[i], self.y[i]);
            d2 += ((f1[i] - self.k[0][i]) / sk).powi(2);
        }
        let d2 = if d2.is_finite() { (d2 / n).sqrt() / h0 } else { f64::INFINITY };
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(self.opts.h_max)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn is_done(&self) -> bool {
        (self.t_end - self.t) * self.dir <= 0.0
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn rhs_evals(&self) -> u64 {
        self.rhs_evals
    }

    /// Start time of the last accepted step.
    pub fn last_step_start(&self) -> f64 {
        self.t_old
    }

    /// Dense coefficients of the last accepted step (5 blocks of `dim`).
    pub fn last_step_coefficients(&self) -> &[f64] {
        &self.cont
    }

    /// Interpolates inside the last accepted step.
    pub fn eval_last_step(&self, t: f64, out: &mut [f64]) {
        if self.h_last == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let theta = (t - self.t_old) / self.h_last;
        eval_cont(&self.cont, self.dim, theta, out);
    }

    fn stages(&mut self, h: f64) -> bool {
        let (t, dim) = (self.t, self.dim);
        let field = self.field;
        let y = &self.y;
        let ys = &mut self.y_stage;
        let k = &mut self.k;
        macro_rules! stage {
            ($idx:expr, $c:expr, $($a:expr => $kk:expr),+) => {{
                for i in 0..dim {
                    ys[i] = y[i] + h * (0.0 $(+ $a * k[$kk][i])+);
                }
                let (_, rest) = k.split_at_mut($idx);
                field.rhs(t + $c * h, ys, &mut rest[0]);
            }};
        }
        stage!(1, C2, A21 => 0);
        stage!(2, C3, A31 => 0, A32 => 1);
        stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
        stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
        for i in 0..dim {
            self.y_new[i] = y[i]
                + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        field.rhs(t + h, &self.y_new, &mut k[6]);
        self.rhs_evals += 6;
        for i in 0..dim {
            self.err_vec[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        self.y_new.iter().all(|v| v.is_finite())
            && k.iter().skip(1).all(|kk| kk.iter().all(|v| v.is_finite()))
    }

    /// Advances by one accepted step (retrying rejected trial steps).
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        loop {
            if self.steps >= self.opts.max_steps {
                return Err(Error::IntegrationFailure {
                    t: self.t,
                    reason: format!("step budget of {} exhausted", self.opts.max_steps),
                });
            }
            let remaining = (self.t_end - self.t).abs();
            let mut h_abs = self.h.min(self.opts.h_max);
            let mut last = false;
            if h_abs >= remaining * (1.0 - 1e-12) {
                h_abs = remaining;
                last = true;
            }
            let eps_t = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
            if h_abs < eps_t && !last {
                return Err(Error::IntegrationFailure {
                    t: self.t,
                    reason: "step size underflow".into(),
                });
            }
            let h = self.dir * h_abs;
            let finite = self.stages(h);
            if !finite {
                self.h = h_abs * 0.1;
                self.last_rejected = true;
                if self.h < eps_t {
                    return Err(Error::IntegrationFailure {
                        t: self.t,
                        reason: "step size underflow (non-finite field values)".into(),
                    });
                }
                continue;
            }
            let mut err = 0.0;
            for i in 0..self.dim {
                let sk = self.scale(self.y[i], self.y_new[i]);
                err += (self.err_vec[i] / sk).powi(2);
            }
            err = (err / self.dim as f64).sqrt();

            let expo = 0.2 - PI_BETA * 0.75;
            let fac11 = err.powf(expo);
            if err <= 1.0 {
                let mut fac = fac11 / self.fac_old.powf(PI_BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h_abs / fac;
                if self.last_rejected {
                    h_new = h_new.min(h_abs);
                }
                self.fac_old = err.max(1e-4);
                self.last_rejected = false;
                self.accept(h, last);
                self.h = h_new;
                return Ok(());
            }
            self.last_rejected = true;
            self.h = h_abs / (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }

    fn accept(&mut self, h: f64, last: bool) {
        let dim = self.dim;
        let k = &self.k;
        for i in 0..dim {
            let y0 = self.y[i];
            let y1 = self.y_new[i];
            let dy = y1 - y0;
            let bspl = h * k[0][i] - dy;
            self.cont[i] = y0;
            self.cont[dim + i] = dy;
            self.cont[2 * dim + i] = bspl;
            self.cont[3 * dim + i] = dy - h * k[6][i] - bspl;
            self.cont[4 * dim + i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
        self.t_old = self.t;
        self.h_last = h;
        self.t = if last { self.t_end } else { self.t + h };
        std::mem::swap(&mut self.y, &mut self.y_new);
        self.k.swap(0, 6);
        self.steps += 1;
    }
}

/// Continuous solution of an integration run.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    dim: usize,
    knots: Vec<f64>,
    states: Vec<f64>,
    cont: Vec<f64>,
}

impl DenseOutput {
    /// Interpolant order of the continuous extension.
    pub const ORDER: usize = 4;

    fn single(t0: f64, y0: &[f64]) -> Self {
        Self {
            dim: y0.len(),
            knots: vec![t0],
            states: y0.to_vec(),
            cont: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.knots.last().expect("at least one knot")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn state(&self, knot: usize) -> &[f64] {
        &self.states[knot * self.dim..(knot + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.knots.len() - 1)
    }

    fn forward(&self) -> bool {
        self.t_end() >= self.t_start()
    }

    /// Index of the step containing `t`; times outside the span map to the
    /// first or last step (polynomial extrapolation).
    fn locate(&self, t: f64) -> usize {
        let n = self.n_steps();
        let idx = if self.forward() {
            self.knots.partition_point(|&k| k <= t)
        } else {
            self.knots.partition_point(|&k| k >= t)
        };
        idx.saturating_sub(1).min(n - 1)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.n_steps() == 0 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let i = self.locate(t);
        if t == self.knots[i] {
            out.copy_from_slice(self.state(i));
            return;
        }
        if t == self.knots[i + 1] {
            out.copy_from_slice(self.state(i + 1));
            return;
        }
        let h = self.knots[i + 1] - self.knots[i];
        let theta = (t - self.knots[i]) / h;
        eval_cont(&self.cont[i * 5 * self.dim..(i + 1) * 5 * self.dim], self.dim, theta, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    /// Time derivative of the interpolant (not of the field).
    pub fn eval_derivative_into(&self, t: f64, out: &mut [f64]) {
        if self.n_steps() == 0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let i = self.locate(t);
        let h = self.knots[i + 1] - self.knots[i];
        let theta = (t - self.knots[i]) / h;
        eval_cont_derivative(
            &self.cont[i * 5 * self.dim..(i + 1) * 5 * self.dim],
            self.dim,
            theta,
            h,
            out,
        );
    }
}

/// Integrates `field` from `y0` over `span` and keeps the dense output.
pub fn integrate_adaptive<F: VectorField + ?Sized>(
    field: &F,
    y0: &[f64],
    span: (f64, f64),
    opts: impl Into<StepOptions>,
) -> Result<DenseOutput> {
    let (t0, t1) = span;
    let mut stepper = Stepper::new(field, t0, y0, t1, opts.into())?;
    if t0 == t1 {
        return Ok(DenseOutput::single(t0, y0));
    }
    let dim = field.dim();
    let mut out = DenseOutput::single(t0, y0);
    while !stepper.is_done() {
        stepper.step()?;
        out.knots.push(stepper.t());
        out.states.extend_from_slice(stepper.y());
        out.cont.extend_from_slice(&stepper.cont);
    }
    debug_assert_eq!(out.cont.len(), out.n_steps() * 5 * dim);
    Ok(out)
}

/// Streams the solution at `t0 + j * stride` (j = 0, 1, ...) up to `t1`.
/// The sink may stop the run early by returning `Ok(false)`.
/// Returns the state at the last time reached.
pub fn integrate_sampled<F, S>(
    field: &F,
    y0: &[f64],
    span: (f64, f64),
    stride: f64,
    opts: impl Into<StepOptions>,
    mut sink: S,
) -> Result<(f64, Vec<f64>)>
where
    F: VectorField + ?Sized,
    S: FnMut(f64, &[f64]) -> Result<bool>,
{
    let (t0, t1) = span;
    if !(stride > 0.0) {
        return Err(Error::ContractViolation("output stride must be positive".into()));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut stepper = Stepper::new(field, t0, y0, t1, opts.into())?;
    let mut buf = vec![0.0; field.dim()];
    let mut j: u64 = 0;
    let sample_time = |j: u64| t0 + dir * (j as f64) * stride;
    if !sink(t0, y0)? {
        return Ok((t0, y0.to_vec()));
    }
    j += 1;
    while !stepper.is_done() {
        stepper.step()?;
        loop {
            let ts = sample_time(j);
            if (ts - stepper.t()) * dir > 0.0 || (ts - t1) * dir > 1e-12 * t1.abs().max(1.0) {
                break;
            }
            stepper.eval_last_step(ts, &mut buf);
            j += 1;
            if !sink(ts, &buf)? {
                return Ok((ts, buf));
            }
        }
    }
    Ok((stepper.t(), stepper.y().to_vec()))
}

/// Which matrix equation is co-integrated with the base trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMode {
    /// `M' = J(t, y) M`
    Variational,
    /// `M' = -J(t, y)^T M`
    Adjoint,
}

struct AugmentedField<'a, F: VectorField + ?Sized> {
    base: &'a F,
    n: usize,
    cols: usize,
    mode: MatrixMode,
}

impl<F: VectorField + ?Sized> VectorField for AugmentedField<'_, F> {
    fn dim(&self) -> usize {
        self.n * (1 + self.cols)
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        self.base.rhs(t, &y[..n], &mut dy[..n]);
        let jac = match self.base.jacobian(t, &y[..n]) {
            Some(j) => j,
            None => {
                dy[n..].iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        let m = &y[n..];
        let dm = &mut dy[n..];
        for c in 0..self.cols {
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    let a = match self.mode {
                        MatrixMode::Variational => jac[(i, k)],
                        MatrixMode::Adjoint => -jac[(k, i)],
                    };
                    acc += a * m[c * n + k];
                }
                dm[c * n + i] = acc;
            }
        }
    }
}

/// Dense output of a base trajectory together with a co-integrated matrix.
#[derive(Debug, Clone)]
pub struct MatrixDenseOutput {
    inner: DenseOutput,
    n: usize,
    cols: usize,
    mode: MatrixMode,
}

impl MatrixDenseOutput {
    pub fn mode(&self) -> MatrixMode {
        self.mode
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn augmented(&self) -> &DenseOutput {
        &self.inner
    }

    pub fn knots(&self) -> &[f64] {
        self.inner.knots()
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        self.inner.eval(t)[..self.n].to_vec()
    }

    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        let full = self.inner.eval(t);
        DMatrix::from_column_slice(self.n, self.cols, &full[self.n..])
    }

    pub fn final_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.cols, &self.inner.final_state()[self.n..])
    }

    pub fn final_state(&self) -> &[f64] {
        &self.inner.final_state()[..self.n]
    }
}

/// Co-integrates the base trajectory and `M' = ±J M` (see [`MatrixMode`]).
/// `m0` is usually square; any column count is accepted.
pub fn integrate_with_matrix<F: VectorField + ?Sized>(
    field: &F,
    y0: &[f64],
    m0: &DMatrix<f64>,
    span: (f64, f64),
    opts: impl Into<StepOptions>,
    mode: MatrixMode,
) -> Result<MatrixDenseOutput> {
    let n = field.dim();
    if m0.nrows() != n {
        return Err(Error::ContractViolation(format!(
            "matrix has {} rows, field dimension is {n}",
            m0.nrows()
        )));
    }
    if y0.len() != n {
        return Err(Error::ContractViolation("initial state length mismatch".into()));
    }
    if field.jacobian(span.0, y0).is_none() {
        return Err(Error::ContractViolation(
            "matrix propagation requires a field Jacobian".into(),
        ));
    }
    let aug = AugmentedField {
        base: field,
        n,
        cols: m0.ncols(),
        mode,
    };
    let mut y = y0.to_vec();
    y.extend_from_slice(m0.as_slice());
    let inner = integrate_adaptive(&aug, &y, span, opts)?;
    Ok(MatrixDenseOutput {
        inner,
        n,
        cols: m0.ncols(),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn decay() -> FnField<impl Fn(f64, &[f64], &mut [f64]) + Send + Sync> {
        FnField::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0])
    }

    fn harmonic() -> FnField<impl Fn(f64, &[f64], &mut [f64]) + Send + Sync> {
        FnField::new(2, |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        })
        .with_jacobian(|_, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
    }

    #[test]
    fn exponential_decay() {
        let tol = Tolerances::new(1e-8, 1e-12).unwrap();
        let sol = integrate_adaptive(&decay(), &[1.0], (0.0, 1.0), tol).unwrap();
        let y1 = sol.final_state()[0];
        assert!((y1 - (-1.0f64).exp()).abs() <= 10.0 * tol.rtol);
    }

    #[test]
    fn zero_field_is_constant_at_knots() {
        let field = FnField::new(3, |_t, _y: &[f64], dy: &mut [f64]| dy.fill(0.0));
        let c = [1.5, -2.0, 0.25];
        let sol = integrate_adaptive(&field, &c, (0.0, 7.0), Tolerances::ANALYSIS).unwrap();
        for i in 0..sol.knots().len() {
            assert_eq!(sol.state(i), &c);
        }
        assert_eq!(sol.eval(3.3), c.to_vec());
    }

    #[test]
    fn harmonic_oscillator_period_and_energy() {
        let tol = Tolerances::new(1e-9, 1e-12).unwrap();
        let sol = integrate_adaptive(&harmonic(), &[1.0, 0.0], (0.0, 2.0 * PI), tol).unwrap();
        let y = sol.final_state();
        assert!((y[0] - 1.0).abs() <= 10.0 * tol.rtol);
        assert!(y[1].abs() <= 10.0 * tol.rtol);
        for &t in sol.knots() {
            let s = sol.eval(t);
            assert!((s[0] * s[0] + s[1] * s[1] - 1.0).abs() <= 10.0 * tol.rtol);
        }
    }

    #[test]
    fn knots_reproduce_stored_states_exactly() {
        let sol = integrate_adaptive(&harmonic(), &[1.0, 0.0], (0.0, 5.0), Tolerances::SWEEP)
            .unwrap();
        for (i, &t) in sol.knots().iter().enumerate() {
            assert_eq!(sol.eval(t), sol.state(i).to_vec());
        }
    }

    #[test]
    fn dense_output_between_knots() {
        let tol = Tolerances::new(1e-9, 1e-12).unwrap();
        let sol = integrate_adaptive(&harmonic(), &[1.0, 0.0], (0.0, 10.0), tol).unwrap();
        for j in 0..=1000 {
            let t = 10.0 * j as f64 / 1000.0;
            let s = sol.eval(t);
            assert!((s[0] - t.cos()).abs() < 1e-7, "t = {t}");
            let mut d = [0.0; 2];
            sol.eval_derivative_into(t, &mut d);
            assert!((d[0] + t.sin()).abs() < 1e-5, "t = {t}");
        }
    }

    #[test]
    fn backward_integration() {
        let sol = integrate_adaptive(&decay(), &[1.0], (0.0, -1.0), Tolerances::ANALYSIS).unwrap();
        assert!((sol.final_state()[0] - 1f64.exp()).abs() < 1e-7);
        assert!((sol.eval(-0.5)[0] - 0.5f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn order_check_on_exponential() {
        let err = |rtol: f64| {
            let tol = Tolerances::new(rtol, rtol * 1e-3).unwrap();
            let sol = integrate_adaptive(&decay(), &[1.0], (0.0, 4.0), tol).unwrap();
            (sol.final_state()[0] - (-4.0f64).exp()).abs()
        };
        for rtol in [1e-5, 1e-6, 1e-7] {
            // Global error is tolerance-proportional: the observed ratio is ~1.98.
            assert!(err(rtol / 2.0) * 1.9 <= err(rtol), "rtol = {rtol}");
        }
    }

    #[test]
    fn blow_up_reports_integration_failure() {
        let field = FnField::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        match integrate_adaptive(&field, &[1.0], (0.0, 2.0), Tolerances::ANALYSIS) {
            Err(Error::IntegrationFailure { t, .. }) => assert!(t > 0.99 && t <= 1.0),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_field_is_rejected() {
        let field = FnField::new(1, |_t, _y: &[f64], dy: &mut [f64]| dy[0] = f64::NAN);
        assert!(matches!(
            integrate_adaptive(&field, &[1.0], (0.0, 1.0), Tolerances::ANALYSIS),
            Err(Error::InvalidField { .. })
        ));
    }

    #[test]
    fn constant_linear_system_matches_matrix_exponential() {
        let lambda = DMatrix::from_row_slice(2, 2, &[-0.3, 1.2, -0.7, 0.1]);
        let l2 = lambda.clone();
        let field = FnField::new(2, move |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = -0.3 * y[0] + 1.2 * y[1];
            dy[1] = -0.7 * y[0] + 0.1 * y[1];
        })
        .with_jacobian(move |_, _| l2.clone());
        let tol = Tolerances::new(1e-10, 1e-12).unwrap();
        let out = integrate_with_matrix(
            &field,
            &[0.0, 0.0],
            &DMatrix::identity(2, 2),
            (0.0, 1.0),
            tol,
            MatrixMode::Variational,
        )
        .unwrap();
        let expected = lambda.exp();
        assert!((out.final_matrix() - expected).amax() <= 10.0 * tol.rtol);
    }

    #[test]
    fn zero_length_span_keeps_identity() {
        let out = integrate_with_matrix(
            &harmonic(),
            &[0.3, 0.1],
            &DMatrix::identity(2, 2),
            (1.0, 1.0),
            Tolerances::ANALYSIS,
            MatrixMode::Variational,
        )
        .unwrap();
        assert_eq!(out.final_matrix(), DMatrix::identity(2, 2));
        assert_eq!(out.matrix(1.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn missing_jacobian_is_a_contract_violation() {
        let r = integrate_with_matrix(
            &decay(),
            &[1.0],
            &DMatrix::identity(1, 1),
            (0.0, 1.0),
            Tolerances::ANALYSIS,
            MatrixMode::Adjoint,
        );
        assert!(matches!(r, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn sampled_output_matches_dense_output() {
        let tol = Tolerances::new(1e-10, 1e-12).unwrap();
        let mut samples = Vec::new();
        integrate_sampled(&harmonic(), &[1.0, 0.0], (0.0, 10.0), 0.25, tol, |t, y| {
            samples.push((t, y[0]));
            Ok(true)
        })
        .unwrap();
        assert_eq!(samples.len(), 41);
        for (t, x) in samples {
            assert!((x - t.cos()).abs() < 1e-8);
        }
    }
}
