//! Periodic orbit of the unforced planar system `z' = F(z)`, `z = (x, r)`,
//! its Floquet multipliers, the normalized periodic adjoint solution and the
//! wave-frequency data `alpha0`, `phi(psi)`.
//!
//! Orbits are parametrized by `psi = beta0 t` with `beta0 = 2π/T`, so that
//! `dz0/dpsi = F(z0)/beta0`. The origin `psi = 0` is the point of maximal last
//! coordinate (`r0` for model orbits); ties go to the smallest first coordinate.

use std::f64::consts::TAU;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrate::{
    integrate_adaptive, integrate_with_matrix, DenseOutput, MatrixMode, Tolerances, VectorField,
};
use crate::interp::PeriodicHermite;
use crate::model::ModelDef;
use crate::quadrature::GaussLegendre;

/// Newton shooting and orbit sampling settings.
#[derive(Debug, Clone, Copy)]
pub struct ShootingOptions {
    /// Closure tolerance `|z(T) - z(0)|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Integration tolerances for shooting and sampling.
    pub tolerances: Tolerances,
    /// Uniform interpolation nodes per period.
    pub n_samples: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            tolerances: Tolerances {
                rtol: 1e-12,
                atol: 1e-14,
            },
            n_samples: 2048,
        }
    }
}

/// Starting point and period estimate for shooting.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitGuess {
    pub z: Vec<f64>,
    pub period: f64,
}

fn eval_field<F: VectorField + ?Sized>(field: &F, z: &[f64]) -> Vec<f64> {
    let mut dz = vec![0.0; field.dim()];
    field.rhs(0.0, z, &mut dz);
    dz
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Root of a scalar function of time on a dense output, bracketed in `[a, b]`.
fn bisect_dense(
    dense: &DenseOutput,
    mut a: f64,
    mut b: f64,
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    let mut buf = vec![0.0; dense.dim()];
    dense.eval_into(a, &mut buf);
    let fa = f(&buf);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        dense.eval_into(m, &mut buf);
        let fm = f(&buf);
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Integrates away the transient from `seed` and estimates the period from
/// returns to a section through the final state.
///
/// Fails with `NoConvergence` if the trajectory settles on an equilibrium or
/// no consistent return is found.
pub fn transient_guess<F: VectorField + ?Sized>(
    field: &F,
    seed: &[f64],
    tolerances: Tolerances,
) -> Result<OrbitGuess> {
    const CHUNK: f64 = 200.0;
    const MAX_CHUNKS: usize = 20;
    let mut z = seed.to_vec();
    let mut last_period: Option<f64> = None;
    for chunk in 0..MAX_CHUNKS {
        let dense = integrate_adaptive(field, &z, (0.0, CHUNK), tolerances)?;
        z = dense.final_state().to_vec();
        let fz = eval_field(field, &z);
        let speed = norm(&fz);
        if speed <= 1e-9 * (1.0 + norm(&z)) {
            return Err(Error::NoConvergence {
                iterations: chunk + 1,
                residual: speed,
            });
        }
        // Section through z with normal F(z); keep upward returns near z.
        let normal: Vec<f64> = fz.iter().map(|v| v / speed).collect();
        let probe = integrate_adaptive(field, &z, (0.0, CHUNK), tolerances)?;
        let extent = (0..=probe.n_steps())
            .map(|i| dist(probe.state(i), &z))
            .fold(0.0, f64::max);
        let s = |y: &[f64]| dot(&normal, &y.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut crossings = Vec::new();
        let knots = probe.knots();
        for i in 1..knots.len() {
            let (s0, s1) = (s(probe.state(i - 1)), s(probe.state(i)));
            if s0 < 0.0 && s1 >= 0.0 {
                let tc = bisect_dense(&probe, knots[i - 1], knots[i], s);
                if dist(&probe.eval(tc), &z) <= 0.25 * extent {
                    crossings.push(tc);
                }
            }
        }
        debug!("transient chunk {chunk}: {} section returns", crossings.len());
        if crossings.len() >= 3 {
            let k = crossings.len();
            let p1 = crossings[k - 2] - crossings[k - 3];
            let p2 = crossings[k - 1] - crossings[k - 2];
            if (p1 - p2).abs() <= 1e-6 * p2 {
                return Ok(OrbitGuess {
                    z: probe.eval(crossings[k - 1]),
                    period: p2,
                });
            }
            last_period = Some(p2);
        }
        z = probe.final_state().to_vec();
    }
    Err(Error::NoConvergence {
        iterations: MAX_CHUNKS,
        residual: last_period.unwrap_or(f64::NAN),
    })
}

/// A periodic orbit sampled on a uniform `psi` grid.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    period: f64,
    curve: PeriodicHermite,
    closure_residual: f64,
    iterations: usize,
}

impl PeriodicOrbit {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn beta0(&self) -> f64 {
        TAU / self.period
    }

    /// Dimension of `z`.
    pub fn dim(&self) -> usize {
        self.curve.dim()
    }

    /// `|z(T) - z(0)|` of the final shooting iterate.
    pub fn closure_residual(&self) -> f64 {
        self.closure_residual
    }

    pub fn shooting_iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_samples(&self) -> usize {
        self.curve.n_nodes()
    }

    /// `z0(psi)`, any real `psi` (periodic).
    pub fn z(&self, psi: f64) -> Vec<f64> {
        self.curve.eval(psi)
    }

    pub fn z_into(&self, psi: f64, out: &mut [f64]) {
        self.curve.eval_into(psi, out)
    }

    /// `dz0/dpsi`.
    pub fn z_prime(&self, psi: f64) -> Vec<f64> {
        self.curve.eval_derivative(psi)
    }

    pub fn z_prime_into(&self, psi: f64, out: &mut [f64]) {
        self.curve.eval_derivative_into(psi, out)
    }

    /// Sample node `i` at `psi = 2π i / n_samples`.
    pub fn node(&self, i: usize) -> &[f64] {
        self.curve.node(i)
    }

    pub fn node_tangent(&self, i: usize) -> &[f64] {
        self.curve.node_derivative(i)
    }

    /// Smallest value of the last coordinate over the nodes.
    pub fn min_last_component(&self) -> f64 {
        let d = self.dim();
        (0..self.n_samples())
            .map(|i| self.node(i)[d - 1])
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean `(1/2π) ∫ f(psi, z0(psi)) dpsi` by Gauss–Legendre on every node interval.
    pub fn mean(&self, mut f: impl FnMut(f64, &[f64]) -> f64) -> f64 {
        let gl = GaussLegendre::new(6);
        let n = self.n_samples();
        let h = TAU / n as f64;
        let mut z = vec![0.0; self.dim()];
        let mut acc = 0.0;
        for i in 0..n {
            let mid = (i as f64 + 0.5) * h;
            for (x, w) in gl.nodes().iter().zip(gl.weights()) {
                let psi = mid + 0.5 * h * x;
                self.z_into(psi, &mut z);
                acc += 0.5 * h * w * f(psi, &z);
            }
        }
        acc / TAU
    }

    /// Same orbit with the phase origin moved to `psi = c`.
    pub fn shifted(&self, c: f64) -> PeriodicOrbit {
        let curve = PeriodicHermite::sample(self.dim(), self.n_samples(), |psi, v, dv| {
            self.curve.eval_into(psi + c, v);
            self.curve.eval_derivative_into(psi + c, dv);
        });
        PeriodicOrbit {
            curve,
            ..self.clone()
        }
    }
}

/// Newton on `(z(0), T)`: `phi_T(z0) - z0 = 0` plus the phase condition
/// `<F(z_g), z0 - z_g> = 0`. Returns `(z0, T, closure, iterations)`.
fn shoot<F: VectorField + ?Sized>(
    field: &F,
    guess: &OrbitGuess,
    opts: &ShootingOptions,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    let d = field.dim();
    let fg = eval_field(field, &guess.z);
    if norm(&fg) <= 1e-12 * (1.0 + norm(&guess.z)) {
        return Err(Error::DegenerateOrbit(
            "guess is an equilibrium; no isolated cycle through it".into(),
        ));
    }
    if !(guess.period > 0.0) {
        return Err(Error::ContractViolation("period guess must be positive".into()));
    }
    let mut z0 = guess.z.clone();
    let mut period = guess.period;
    let mut residual = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let flow = integrate_with_matrix(
            field,
            &z0,
            &DMatrix::identity(d, d),
            (0.0, period),
            opts.tolerances,
            MatrixMode::Variational,
        )?;
        let zt = flow.final_state();
        let closure: Vec<f64> = zt.iter().zip(&z0).map(|(a, b)| a - b).collect();
        residual = norm(&closure);
        debug!("shooting iteration {iter}: closure {residual:.3e}, T = {period:.12}");
        let fz = eval_field(field, zt);
        if norm(&fz) <= 1e-12 * (1.0 + norm(zt)) {
            return Err(Error::DegenerateOrbit(
                "iterate converged to an equilibrium".into(),
            ));
        }
        if residual <= opts.tol {
            return Ok((z0, period, residual, iter));
        }
        if iter == opts.max_iter {
            break;
        }
        let m = flow.final_matrix();
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        let mut rhs = DVector::zeros(d + 1);
        for i in 0..d {
            for j in 0..d {
                jac[(i, j)] = m[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            jac[(i, d)] = fz[i];
            jac[(d, i)] = fg[i];
            rhs[i] = -closure[i];
        }
        rhs[d] = -dot(&fg, &z0.iter().zip(&guess.z).map(|(a, b)| a - b).collect::<Vec<_>>());
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-13 * smax) {
            return Err(Error::DegenerateOrbit(format!(
                "singular shooting matrix (condition {:.3e}); the cycle is not isolated",
                smax / smin
            )));
        }
        let step = svd
            .solve(&rhs, 0.0)
            .map_err(|e| Error::DegenerateOrbit(e.to_string()))?;
        // Limit the period change to keep early iterates meaningful.
        let scale = (0.5 * period / step[d].abs().max(1e-300)).min(1.0);
        for i in 0..d {
            z0[i] += scale * step[i];
        }
        period += scale * step[d];
        if !(period > 0.0) || z0.iter().any(|v| !v.is_finite()) {
            break;
        }
        if period < 1e-3 * guess.period {
            return Err(Error::DegenerateOrbit(format!(
                "period collapsed to {period:.3e}; no isolated cycle near the guess"
            )));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Shooting from `guess`, re-anchored at the maximum of the last coordinate and
/// sampled on `opts.n_samples` uniform phases.
pub fn find_periodic_orbit<F: VectorField + ?Sized>(
    field: &F,
    guess: &OrbitGuess,
    opts: &ShootingOptions,
) -> Result<PeriodicOrbit> {
    let (z0, period, _, iters) = shoot(field, guess, opts)?;
    let d = field.dim();

    // Anchor: maximum of the last coordinate. The scan window [h, T + h]
    // keeps the bracket of the maximum inside the integrated range.
    let n_scan = 4 * opts.n_samples;
    let h = period / n_scan as f64;
    let dense = integrate_adaptive(field, &z0, (0.0, period + 2.0 * h), opts.tolerances)?;
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 1..=n_scan {
        let t = k as f64 * h;
        let z = dense.eval(t);
        let better = match best {
            None => true,
            Some((top, x_first, _)) => {
                z[d - 1] > top + 1e-12 || ((z[d - 1] - top).abs() <= 1e-12 && z[0] < x_first)
            }
        };
        if better {
            best = Some((z[d - 1], z[0], t));
        }
    }
    let t_best = best.expect("nonempty scan").2;
    let rate = |z: &[f64]| eval_field(field, z)[d - 1];
    let (a, b) = (t_best - h, t_best + h);
    let t_anchor = if rate(&dense.eval(a)) > 0.0 && rate(&dense.eval(b)) < 0.0 {
        bisect_dense(&dense, a, b, |z| -rate(z))
    } else {
        t_best
    };
    let anchor = dense.eval(t_anchor);

    let (z_anchor, period, closure, iters2) = shoot(
        field,
        &OrbitGuess {
            z: anchor,
            period,
        },
        opts,
    )?;
    let dense = integrate_adaptive(field, &z_anchor, (0.0, period), opts.tolerances)?;
    let beta0 = TAU / period;
    let curve = PeriodicHermite::sample(d, opts.n_samples, |psi, v, dv| {
        dense.eval_into(psi / beta0, v);
        field.rhs(0.0, v, dv);
        for x in dv.iter_mut() {
            *x /= beta0;
        }
    });
    Ok(PeriodicOrbit {
        period,
        curve,
        closure_residual: closure,
        iterations: iters + iters2,
    })
}

/// Locates the model's cycle from its seed point: transient, shooting and the
/// `r0 > 0` check.
pub fn find_model_orbit(model: &ModelDef, opts: &ShootingOptions) -> Result<PeriodicOrbit> {
    let field = model.planar_field();
    let guess = transient_guess(&field, &model.family().cycle_seed(), opts.tolerances)?;
    let orbit = find_periodic_orbit(&field, &guess, opts)?;
    let r_min = orbit.min_last_component();
    if !(r_min > 0.0) {
        return Err(Error::InvalidOrbit(format!(
            "cycle reaches r = {r_min:.3e}; polar coordinates need r > 0"
        )));
    }
    Ok(orbit)
}

/// Monodromy matrix and multipliers of the cycle.
#[derive(Debug, Clone)]
pub struct FloquetData {
    pub monodromy: DMatrix<f64>,
    /// Trivial multiplier first, then the rest by decreasing modulus.
    pub multipliers: Vec<Complex64>,
    pub trivial_multiplier_error: f64,
    pub hyperbolic: bool,
    /// Largest modulus among the nontrivial multipliers (0 in dimension 1).
    pub spectral_gap: f64,
}

/// Trivial multipliers farther than this from 1 fail hyperbolicity.
pub const TRIVIAL_MULTIPLIER_TOL: f64 = 1e-5;

pub fn compute_floquet<F: VectorField + ?Sized>(
    field: &F,
    orbit: &PeriodicOrbit,
    tolerances: Tolerances,
) -> Result<FloquetData> {
    let d = field.dim();
    let flow = integrate_with_matrix(
        field,
        &orbit.z(0.0),
        &DMatrix::identity(d, d),
        (0.0, orbit.period()),
        tolerances,
        MatrixMode::Variational,
    )?;
    let m = flow.final_matrix();
    let eig = m.clone().complex_eigenvalues();
    let mut multipliers: Vec<Complex64> = eig.iter().map(|c| Complex64::new(c.re, c.im)).collect();
    let trivial = (0..multipliers.len())
        .min_by(|&i, &j| {
            (multipliers[i] - 1.0)
                .norm()
                .total_cmp(&(multipliers[j] - 1.0).norm())
        })
        .expect("nonempty spectrum");
    let lambda_triv = multipliers.remove(trivial);
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let spectral_gap = multipliers.first().map_or(0.0, |c| c.norm());
    let trivial_multiplier_error = (lambda_triv - 1.0).norm();
    multipliers.insert(0, lambda_triv);
    let hyperbolic = trivial_multiplier_error <= TRIVIAL_MULTIPLIER_TOL && spectral_gap < 1.0;
    if !hyperbolic {
        warn!(
            "cycle is not hyperbolic: |lambda_triv - 1| = {trivial_multiplier_error:.3e}, \
             max nontrivial |lambda| = {spectral_gap:.6}"
        );
    }
    Ok(FloquetData {
        monodromy: m,
        multipliers,
        trivial_multiplier_error,
        hyperbolic,
        spectral_gap,
    })
}

/// The periodic adjoint solution with `p(psi)^T z0'(psi) = 1`.
#[derive(Debug, Clone)]
pub struct AdjointOrbit {
    p: PeriodicHermite,
    normalization_residual: f64,
    periodicity_error: f64,
}

impl AdjointOrbit {
    pub fn p(&self, psi: f64) -> Vec<f64> {
        self.p.eval(psi)
    }

    pub fn p_into(&self, psi: f64, out: &mut [f64]) {
        self.p.eval_into(psi, out)
    }

    pub fn p_prime(&self, psi: f64) -> Vec<f64> {
        self.p.eval_derivative(psi)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.p.node(i)
    }

    pub fn n_samples(&self) -> usize {
        self.p.n_nodes()
    }

    /// `max |p^T z0' - 1|` over the sample nodes.
    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    /// `|p(0) - p(2π)|` of the propagated solution.
    pub fn periodicity_error(&self) -> f64 {
        self.periodicity_error
    }

    /// Same adjoint with the phase origin moved to `psi = c`.
    pub fn shifted(&self, c: f64) -> AdjointOrbit {
        let p = PeriodicHermite::sample(self.p.dim(), self.p.n_nodes(), |psi, v, dv| {
            self.p.eval_into(psi + c, v);
            self.p.eval_derivative_into(psi + c, dv);
        });
        AdjointOrbit { p, ..self.clone() }
    }
}

/// `p(0)` is the eigenvector of `M^T` for eigenvalue 1, scaled so that
/// `p(0)^T z0'(0) = 1`; `p(psi)` follows from the adjoint equation.
pub fn compute_adjoint<F: VectorField + ?Sized>(
    field: &F,
    orbit: &PeriodicOrbit,
    floquet: &FloquetData,
    tolerances: Tolerances,
) -> Result<AdjointOrbit> {
    if !floquet.hyperbolic {
        return Err(Error::AssumptionViolation(format!(
            "cycle is not hyperbolic (|lambda_triv - 1| = {:.3e}, max nontrivial |lambda| = {:.6})",
            floquet.trivial_multiplier_error, floquet.spectral_gap
        )));
    }
    let d = field.dim();
    let b = floquet.monodromy.transpose() - DMatrix::identity(d, d);
    let svd = b.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smax = svd.singular_values.max();
    if d > 1 && svd.singular_values[order[1]] <= 1e-6 * smax.max(1.0) {
        return Err(Error::AssumptionViolation(
            "eigenvalue 1 of the transposed monodromy is not simple".into(),
        ));
    }
    let mut q: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let beta0 = orbit.beta0();
    let z0 = orbit.z(0.0);
    let tangent: Vec<f64> = eval_field(field, &z0).iter().map(|v| v / beta0).collect();
    let scale = dot(&q, &tangent);
    if scale.abs() <= 1e-12 {
        return Err(Error::AssumptionViolation(
            "adjoint null vector is orthogonal to the orbit tangent".into(),
        ));
    }
    for v in q.iter_mut() {
        *v /= scale;
    }
    // Backward in time the nontrivial adjoint modes decay, so errors in q do not grow.
    let flow = integrate_with_matrix(
        field,
        &z0,
        &DMatrix::from_column_slice(d, 1, &q),
        (orbit.period(), 0.0),
        tolerances,
        MatrixMode::Adjoint,
    )?;
    let p_end: Vec<f64> = flow.final_matrix().iter().copied().collect();
    let periodicity_error = dist(&p_end, &q);
    let p = PeriodicHermite::sample(d, orbit.n_samples(), |psi, v, dv| {
        let t = psi / beta0;
        let state = flow.state(t);
        v.copy_from_slice(flow.matrix(t).as_slice());
        let jac = field.jacobian(t, &state).expect("checked by integrate_with_matrix");
        let pv = DVector::from_column_slice(v);
        let dp = -(jac.transpose() * pv) / beta0;
        dv.copy_from_slice(dp.as_slice());
    });
    let normalization_residual = (0..orbit.n_samples())
        .map(|i| (dot(p.node(i), orbit.node_tangent(i)) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(AdjointOrbit {
        p,
        normalization_residual,
        periodicity_error,
    })
}

/// Mean wave frequency `alpha0` and the periodic offset `phi(psi)`, so that the
/// unforced solution is `y = r0(beta0 t) e^{i (alpha0 t + phi(beta0 t))}`
/// up to a constant phase.
#[derive(Debug, Clone)]
pub struct PhaseOffsets {
    pub alpha0: f64,
    phi: PeriodicHermite,
    closure: f64,
}

impl PhaseOffsets {
    pub fn phi(&self, psi: f64) -> f64 {
        self.phi.eval(psi)[0]
    }

    pub fn phi_prime(&self, psi: f64) -> f64 {
        self.phi.eval_derivative(psi)[0]
    }

    /// `phi(2π) - phi(0)` before periodic wrapping.
    pub fn closure(&self) -> f64 {
        self.closure
    }
}

pub fn compute_phase_offsets(model: &ModelDef, orbit: &PeriodicOrbit) -> PhaseOffsets {
    let n = model.dim_x();
    let im_h = |z: &[f64]| model.h(&z[..n]).im;
    let alpha0 = orbit.mean(|_, z| im_h(z));
    let beta0 = orbit.beta0();
    let ns = orbit.n_samples();
    let h = TAU / ns as f64;
    let gl = GaussLegendre::new(6);
    let mut values = vec![0.0; ns];
    let mut z = vec![0.0; orbit.dim()];
    let mut acc = 0.0;
    for (i, slot) in values.iter_mut().enumerate() {
        *slot = acc;
        let mid = (i as f64 + 0.5) * h;
        for (x, w) in gl.nodes().iter().zip(gl.weights()) {
            orbit.z_into(mid + 0.5 * h * x, &mut z);
            acc += 0.5 * h * w * (im_h(&z) - alpha0) / beta0;
        }
    }
    let derivs = (0..ns)
        .map(|i| (im_h(orbit.node(i)) - alpha0) / beta0)
        .collect();
    PhaseOffsets {
        alpha0,
        phi: PeriodicHermite::new(1, values, derivs),
        closure: acc,
    }
}

/// `y0(psi) = r0(psi) e^{i phi(psi)}` and its `psi`-derivative.
pub fn wave_profile(orbit: &PeriodicOrbit, offsets: &PhaseOffsets, psi: f64) -> (Complex64, Complex64) {
    let d = orbit.dim();
    let r = orbit.z(psi)[d - 1];
    let dr = orbit.z_prime(psi)[d - 1];
    let rot = Complex64::from_polar(1.0, offsets.phi(psi));
    let y = rot * r;
    let dy = rot * Complex64::new(dr, r * offsets.phi_prime(psi));
    (y, dy)
}

/// Smallest singular value over `n` phases of the matrix
/// `[x0', 0; Re y0', -Im y0; Im y0', Re y0]`, whose full rank is the
/// nondegeneracy condition of the modulated wave.
pub fn rank_condition_margin(orbit: &PeriodicOrbit, offsets: &PhaseOffsets, n: usize) -> f64 {
    let nx = orbit.dim() - 1;
    (0..n)
        .map(|k| {
            let psi = TAU * k as f64 / n as f64;
            let dz = orbit.z_prime(psi);
            let (y, dy) = wave_profile(orbit, offsets, psi);
            let mut m = DMatrix::zeros(nx + 2, 2);
            for i in 0..nx {
                m[(i, 0)] = dz[i];
            }
            m[(nx, 0)] = dy.re;
            m[(nx, 1)] = -y.im;
            m[(nx + 1, 0)] = dy.im;
            m[(nx + 1, 1)] = y.re;
            m.singular_values().min()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Everything the locking analysis needs from the unforced system.
#[derive(Debug, Clone)]
pub struct OrbitAnalysis {
    pub orbit: PeriodicOrbit,
    pub floquet: FloquetData,
    pub adjoint: AdjointOrbit,
    pub offsets: PhaseOffsets,
}

impl OrbitAnalysis {
    /// Cycle, multipliers, adjoint and phase offsets of `model`.
    pub fn compute(model: &ModelDef, opts: &ShootingOptions, tolerances: Tolerances) -> Result<Self> {
        let orbit = find_model_orbit(model, opts)?;
        let field = model.planar_field();
        let floquet = compute_floquet(&field, &orbit, tolerances)?;
        let adjoint = compute_adjoint(&field, &orbit, &floquet, tolerances)?;
        let offsets = compute_phase_offsets(model, &orbit);
        Ok(Self {
            orbit,
            floquet,
            adjoint,
            offsets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::FnField;
    use crate::model::{make_vdp_laser, ForcingProfile, ModelDef, VdpLaser};
    use std::sync::Arc;

    /// r' = r(1 - r), theta' = 1 in Cartesian coordinates.
    fn circle() -> impl VectorField {
        FnField::new(2, |_t, z: &[f64], dz: &mut [f64]| {
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
            dz[0] = z[0] * (1.0 - r) - z[1];
            dz[1] = z[1] * (1.0 - r) + z[0];
        })
        .with_jacobian(|_t, z: &[f64]| {
            let (x, y) = (z[0], z[1]);
            let r = (x * x + y * y).sqrt();
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    1.0 - r - x * x / r,
                    -x * y / r - 1.0,
                    -x * y / r + 1.0,
                    1.0 - r - y * y / r,
                ],
            )
        })
    }

    #[test]
    fn unit_circle_benchmark() {
        let field = circle();
        let guess = OrbitGuess {
            z: vec![1.05, 0.1],
            period: 6.0,
        };
        let orbit = find_periodic_orbit(&field, &guess, &ShootingOptions::default()).unwrap();
        assert!((orbit.period() - TAU).abs() < 1e-8, "{}", orbit.period());
        // Anchor at max y, i.e. (0, 1).
        let z = orbit.z(0.0);
        assert!(z[0].abs() < 1e-8 && (z[1] - 1.0).abs() < 1e-8, "{z:?}");
        for k in 0..64 {
            let z = orbit.z(0.1 * k as f64);
            assert!(((z[0] * z[0] + z[1] * z[1]).sqrt() - 1.0).abs() < 1e-9);
        }
        let fl = compute_floquet(&field, &orbit, Tolerances::ANALYSIS).unwrap();
        assert!(fl.hyperbolic);
        assert!((fl.multipliers[0] - 1.0).norm() < 1e-6);
        assert!((fl.multipliers[1] - (-TAU).exp()).norm() < 1e-6);
        let adj = compute_adjoint(&field, &orbit, &fl, Tolerances::ANALYSIS).unwrap();
        assert!(adj.normalization_residual() < 1e-8);
        for k in 0..32 {
            let psi = 0.2 * k as f64;
            // |dz/dpsi| = 1 on the circle, so p is the unit tangent.
            let p = adj.p(psi);
            let t = orbit.z_prime(psi);
            assert!((p[0] - t[0]).abs() < 1e-7 && (p[1] - t[1]).abs() < 1e-7, "{psi}: {p:?} vs {t:?}");
        }
    }

    #[test]
    fn equilibrium_line_is_degenerate() {
        let field = FnField::new(2, |_t, z: &[f64], dz: &mut [f64]| {
            dz[0] = -z[0];
            dz[1] = z[1] * (1.0 - z[1]);
        })
        .with_jacobian(|_t, z: &[f64]| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0 - 2.0 * z[1]])
        });
        let guess = OrbitGuess {
            z: vec![0.0, 1.0],
            period: 1.0,
        };
        let err = find_periodic_orbit(&field, &guess, &ShootingOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateOrbit(_)), "{err}");
        let guess = OrbitGuess {
            z: vec![0.3, 0.8],
            period: 2.0,
        };
        let err = find_periodic_orbit(&field, &guess, &ShootingOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::DegenerateOrbit(_) | Error::NoConvergence { .. }),
            "{err}"
        );
    }

    #[test]
    fn stable_focus_has_no_cycle() {
        let m = make_vdp_laser(1.0, -0.1, 1.0, 2.0, 0.5).unwrap();
        let err = find_model_orbit(&m, &ShootingOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }

    #[test]
    fn vdp_orbit_basic_properties() {
        let m = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5).unwrap();
        let a = OrbitAnalysis::compute(&m, &ShootingOptions::default(), Tolerances::ANALYSIS).unwrap();
        let o = &a.orbit;
        assert!(o.closure_residual() <= 1e-10);
        assert!((o.period() - TAU / 2f64.sqrt()).abs() < 0.15, "{}", o.period());
        assert!(o.min_last_component() > 0.3);
        // psi = 0 is the maximum of r0.
        let r0 = o.z(0.0)[1];
        for k in 1..200 {
            assert!(o.z(TAU * k as f64 / 200.0)[1] <= r0 + 1e-12);
        }
        let field = m.planar_field();
        for k in 0..256 {
            let psi = TAU * (k as f64 + 0.37) / 256.0;
            let z = o.z(psi);
            let mut f = vec![0.0; 2];
            field.rhs(0.0, &z, &mut f);
            let dz = o.z_prime(psi);
            let res = (o.beta0() * dz[0] - f[0]).hypot(o.beta0() * dz[1] - f[1]);
            assert!(res < 1e-6, "residual {res} at {psi}");
        }
        assert!(a.floquet.hyperbolic);
        assert!(a.floquet.trivial_multiplier_error < 1e-6);
        assert!(a.adjoint.normalization_residual() < 1e-6);
        assert!(a.adjoint.periodicity_error() < 1e-8);
        assert!(a.offsets.closure().abs() < 1e-8);
        assert!((a.offsets.alpha0 - 2.0).abs() < 1e-8);
        assert!(o.mean(|_, z| z[0]).abs() < 1e-8);
        assert!(rank_condition_margin(o, &a.offsets, 64) > 1e-6);
    }

    #[test]
    fn kappa_zero_gives_flat_phase() {
        let m = make_vdp_laser(1.0, 0.2, 1.0, 3.0, 0.0).unwrap();
        let o = find_model_orbit(&m, &ShootingOptions::default()).unwrap();
        let off = compute_phase_offsets(&m, &o);
        assert!((off.alpha0 - 3.0).abs() < 1e-12);
        for k in 0..50 {
            assert!(off.phi(0.13 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn re_anchoring_is_stable() {
        let m = ModelDef::new(Arc::new(VdpLaser::DEFAULT), ForcingProfile::default());
        let field = m.planar_field();
        let opts = ShootingOptions::default();
        let a = find_model_orbit(&m, &opts).unwrap();
        let perturbed = OrbitGuess {
            z: {
                let mut z = a.z(2.0);
                z[0] += 0.01;
                z
            },
            period: a.period() * 1.01,
        };
        let b = find_periodic_orbit(&field, &perturbed, &opts).unwrap();
        let worst = (0..256)
            .map(|k| dist(&a.z(TAU * k as f64 / 256.0), &b.z(TAU * k as f64 / 256.0)))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}
