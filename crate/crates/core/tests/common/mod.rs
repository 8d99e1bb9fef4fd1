//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::sync::OnceLock;

use modlock::integrate::Tolerances;
use modlock::model::{make_vdp_laser, ForcingProfile, ModelDef};
use modlock::orbit::ShootingOptions;
use modlock::sim::Reference;
use num_complex::Complex64;

/// Frozen reference values of the default vdp-laser model.
pub const PERIOD: f64 = 4.549864610715;
pub const BETA0: f64 = 1.380960939449;
pub const MULTIPLIER: f64 = 0.40747186;
pub const G_MINUS: f64 = -1.958275;
pub const G_PLUS: f64 = 0.148797;
pub const G_MEAN: f64 = -0.904739;
pub const SINGULAR_POINTS: [f64; 2] = [2.7922, 5.9338];

pub fn vdp() -> ModelDef {
    make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5).expect("default model")
}

pub fn vdp_with(coeffs: &[Complex64]) -> ModelDef {
    vdp().with_forcing(ForcingProfile::new(coeffs.to_vec()).expect("forcing"))
}

pub fn compute_reference(model: &ModelDef) -> Reference {
    Reference::compute(
        model,
        &ShootingOptions::default(),
        Tolerances::ANALYSIS,
        512,
        64,
    )
    .expect("reference")
}

/// Default model with `a = 1 + 0.5 e^{i tau}`, computed once per test binary.
pub fn reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| compute_reference(&vdp()))
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Writes one line to the real stderr, bypassing the test harness capture.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

pub fn verdict(criterion: usize, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    report(&format!("criterion {criterion:>2}: {tag}  {detail}"));
}

/// Period from successive downward crossings of the section `x = 0` by a
/// trajectory started off the cycle. Returns the period and a state on the
/// section.
pub fn poincare_period(model: &ModelDef) -> (f64, Vec<f64>) {
    use modlock::integrate::integrate_adaptive;
    let field = model.planar_field();
    let tol = Tolerances::new(1e-12, 1e-14).unwrap();
    let settle = integrate_adaptive(&field, &[0.1, 1.0], (0.0, 250.0), tol).unwrap();
    let z = settle.final_state().to_vec();
    let sol = integrate_adaptive(&field, &z, (0.0, 30.0), tol).unwrap();
    let x = |t: f64| sol.eval(t)[0];
    let mut crossings = Vec::new();
    let n = 30_000;
    let dt = 30.0 / n as f64;
    for i in 0..n {
        let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
        if x(a) > 0.0 && x(b) <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if x(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
        }
    }
    assert!(crossings.len() >= 3, "too few section crossings");
    let k = crossings.len() - 1;
    let period = crossings[k] - crossings[k - 1];
    (period, sol.eval(crossings[k - 1]))
}

/// Nontrivial multiplier of a planar cycle from Liouville's formula,
/// `exp` of the integral of the Jacobian trace over one period (trapezoid).
pub fn liouville_multiplier(model: &ModelDef, start: &[f64], period: f64) -> f64 {
    use modlock::integrate::{integrate_adaptive, VectorField};
    let field = model.planar_field();
    let tol = Tolerances::new(1e-12, 1e-14).unwrap();
    let sol = integrate_adaptive(&field, start, (0.0, period), tol).unwrap();
    let n = 8192;
    let h = period / n as f64;
    let trace: f64 = (0..n)
        .map(|i| {
            let jac = field.jacobian(0.0, &sol.eval(i as f64 * h)).unwrap();
            jac.trace()
        })
        .sum();
    (trace * h).exp()
}

/// `G` on the 8192-point grid by the trapezoid rule applied to
/// `(1/2π) ∫ w(xi + psi) |a(xi)|^2 dxi`, returned at every `stride`-th node.
pub fn trapezoid_g(reference: &Reference, forcing: &ForcingProfile, stride: usize) -> Vec<(f64, f64)> {
    use modlock::locking::weight_function;
    use std::f64::consts::TAU;
    let n = 8192;
    let a = &reference.analysis;
    let w = weight_function(&reference.model, &a.orbit, &a.adjoint);
    let grid: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let wv: Vec<f64> = grid.iter().map(|&s| w(s)).collect();
    let iv: Vec<f64> = grid.iter().map(|&s| forcing.intensity(s)).collect();
    (0..n)
        .step_by(stride)
        .map(|j| {
            let sum: f64 = (0..n).map(|i| wv[(i + j) % n] * iv[i]).sum();
            (grid[j], sum / n as f64)
        })
        .collect()
}
