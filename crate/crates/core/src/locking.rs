//! The locking function
//!
//! ```text
//! G(psi) = (1/2π) ∫ p_x(xi + psi) · g(x0(xi + psi)) |a(xi)|^2 dxi,
//! ```
//!
//! its singular set, the locking-region conditions, region cross-sections and
//! the averaged relative-phase equation `psi' = mu^2 (G(psi) - Delta)`.
//!
//! `G` is a circular cross-correlation of `w = p_x · g(x0)` with `|a|^2`, so
//! it is a trigonometric polynomial whose degree is the highest harmonic of
//! `|a|^2`. It is stored exactly through its Fourier coefficients
//! `G_m = conj(c_m) w_m`, where `c_m` and `w_m` are the Fourier coefficients
//! of `|a|^2` and `w`.

use std::f64::consts::TAU;
use std::fmt;

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrate::{integrate_adaptive, DenseOutput, FnField, Tolerances};
use crate::model::{ControlParams, ForcingProfile, ModelDef};
use crate::orbit::{AdjointOrbit, PeriodicOrbit};
use crate::quadrature::CompositeRule;

/// Adjoint solutions with a larger normalization residual are rejected.
pub const NORMALIZATION_LIMIT: f64 = 1e-6;

/// A critical point of `G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPoint {
    pub psi: f64,
    pub value: f64,
    pub second_derivative: f64,
}

/// The locking function as a real trigonometric polynomial plus its samples
/// and critical points.
#[derive(Debug, Clone)]
pub struct LockingFunction {
    mean: f64,
    /// `G_m`, `m = 1..=K`; `G = mean + 2 Re sum G_m e^{i m psi}`.
    harmonics: Vec<Complex64>,
    samples: Vec<(f64, f64, f64)>,
    g_minus: f64,
    g_plus: f64,
    singular: Vec<SingularPoint>,
}

impl LockingFunction {
    /// `G(psi) = mean + 2 Re sum_{m >= 1} harmonics[m-1] e^{i m psi}`, sampled on `n_grid` points.
    pub fn from_harmonics(mean: f64, harmonics: Vec<Complex64>, n_grid: usize) -> Self {
        let mut g = LockingFunction {
            mean,
            harmonics,
            samples: Vec::new(),
            g_minus: 0.0,
            g_plus: 0.0,
            singular: Vec::new(),
        };
        g.samples = (0..n_grid)
            .map(|i| {
                let psi = TAU * i as f64 / n_grid as f64;
                let (v, d, _) = g.eval_all(psi);
                (psi, v, d)
            })
            .collect();
        g.singular = g.critical_points();
        let grid = g.samples.iter().map(|s| s.1);
        let crit = g.singular.iter().map(|s| s.value);
        g.g_minus = grid.clone().chain(crit.clone()).fold(f64::INFINITY, f64::min);
        g.g_plus = grid.chain(crit).fold(f64::NEG_INFINITY, f64::max);
        g
    }

    /// `G = sin(psi)`, the standard synthetic case.
    pub fn sine(n_grid: usize) -> Self {
        Self::from_harmonics(0.0, vec![Complex64::new(0.0, -0.5)], n_grid)
    }

    /// `(G, G', G'')` at `psi`.
    pub fn eval_all(&self, psi: f64) -> (f64, f64, f64) {
        let mut v = self.mean;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let rot = Complex64::from_polar(1.0, psi);
        let mut e = Complex64::new(1.0, 0.0);
        for (k, gm) in self.harmonics.iter().enumerate() {
            e *= rot;
            let m = (k + 1) as f64;
            let t = gm * e;
            v += 2.0 * t.re;
            d1 += -2.0 * m * t.im;
            d2 += -2.0 * m * m * t.re;
        }
        (v, d1, d2)
    }

    pub fn value(&self, psi: f64) -> f64 {
        self.eval_all(psi).0
    }

    pub fn derivative(&self, psi: f64) -> f64 {
        self.eval_all(psi).1
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn harmonics(&self) -> &[Complex64] {
        &self.harmonics
    }

    /// `(psi_i, G(psi_i), G'(psi_i))` on the uniform grid.
    pub fn samples(&self) -> &[(f64, f64, f64)] {
        &self.samples
    }

    pub fn g_minus(&self) -> f64 {
        self.g_minus
    }

    pub fn g_plus(&self) -> f64 {
        self.g_plus
    }

    /// Largest `|G|`.
    pub fn max_abs(&self) -> f64 {
        self.g_plus.abs().max(self.g_minus.abs())
    }

    /// Critical points in `[0, 2π)`, ascending (not checked for degeneracy).
    pub fn singular_points(&self) -> &[SingularPoint] {
        &self.singular
    }

    /// The singular set `S`, sorted ascending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.singular.iter().map(|s| s.value).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `G` has no harmonic content (constant).
    pub fn is_flat(&self) -> bool {
        let scale = self.mean.abs().max(1e-300);
        self.harmonics.iter().all(|h| h.norm() <= 1e-12 * scale.max(1.0))
    }

    /// Same function with the phase origin moved: `psi -> psi + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let harmonics = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, g)| g * Complex64::from_polar(1.0, (k + 1) as f64 * c))
            .collect();
        Self::from_harmonics(self.mean, harmonics, self.samples.len())
    }

    fn scan_points(&self) -> usize {
        (64 * (self.harmonics.len() + 1)).max(self.samples.len()).max(256)
    }

    /// Roots of `G'` by sign-change bracketing on a fine grid and bisection.
    fn critical_points(&self) -> Vec<SingularPoint> {
        if self.is_flat() {
            return Vec::new();
        }
        let n = self.scan_points();
        let h = TAU / n as f64;
        let mut out = Vec::new();
        let mut prev = self.derivative(0.0);
        for i in 1..=n {
            let psi = i as f64 * h;
            let cur = self.derivative(psi);
            if prev == 0.0 && i == 1 {
                out.push(0.0);
            } else if (prev < 0.0 && cur >= 0.0) || (prev > 0.0 && cur <= 0.0) {
                if cur == 0.0 {
                    if i < n {
                        out.push(psi);
                    }
                } else {
                    out.push(bisect(|x| self.derivative(x), psi - h, psi));
                }
            }
            prev = cur;
        }
        out.into_iter()
            .map(|psi| {
                let psi = psi.rem_euclid(TAU);
                let (value, _, second_derivative) = self.eval_all(psi);
                SingularPoint {
                    psi,
                    value,
                    second_derivative,
                }
            })
            .collect()
    }

    /// Solutions of `G(psi) = level` in `[0, 2π)`, ascending.
    pub fn level_crossings(&self, level: f64) -> Vec<f64> {
        let n = self.scan_points();
        let h = TAU / n as f64;
        let f = |x: f64| self.value(x) - level;
        let mut out = Vec::new();
        let mut prev = f(0.0);
        if prev == 0.0 {
            out.push(0.0);
        }
        for i in 1..=n {
            let psi = i as f64 * h;
            let cur = f(psi);
            if (prev < 0.0 && cur > 0.0) || (prev > 0.0 && cur < 0.0) {
                out.push(bisect(f, psi - h, psi));
            } else if cur == 0.0 && i < n {
                out.push(psi);
            }
            prev = cur;
        }
        out
    }

    /// Minimum of `sign * (G - level)` over the arc `[a, b]` (`b > a`, may exceed 2π).
    fn arc_min(&self, level: f64, sign: f64, a: f64, b: f64) -> f64 {
        let n = ((b - a) / TAU * self.scan_points() as f64).ceil().max(8.0) as usize;
        let f = |x: f64| sign * (self.value(x) - level);
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        for i in 0..=n {
            let v = f(a + (b - a) * i as f64 / n as f64);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        // Golden-section polish around the best sample.
        let h = (b - a) / n as f64;
        let mut lo = (a + (best_i as f64 - 1.0) * h).max(a);
        let mut hi = (a + (best_i as f64 + 1.0) * h).min(b);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if f(x1) < f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        best.min(f(0.5 * (lo + hi))).min(f(a)).min(f(b))
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b || b - a <= 1e-15 {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Builds `G` from the cycle, its adjoint and the forcing profile.
///
/// `w = p_x · g(x0)` is expanded in Fourier modes up to the highest harmonic of
/// `|a|^2` with `n_quad` order-8 Gauss–Legendre panels; `G` and `G'` then
/// follow in closed form.
pub fn compute_g(
    model: &ModelDef,
    orbit: &PeriodicOrbit,
    adjoint: &AdjointOrbit,
    forcing: &ForcingProfile,
    n_grid: usize,
    n_quad: usize,
) -> Result<LockingFunction> {
    if adjoint.normalization_residual() > NORMALIZATION_LIMIT {
        return Err(Error::ContractViolation(format!(
            "adjoint normalization residual {:.3e} exceeds {NORMALIZATION_LIMIT:.0e}",
            adjoint.normalization_residual()
        )));
    }
    if adjoint.n_samples() != orbit.n_samples() {
        return Err(Error::ContractViolation(
            "orbit and adjoint are sampled differently".into(),
        ));
    }
    let c = forcing.intensity_harmonics();
    let k_max = c.len() - 1;
    let w = weight_function(model, orbit, adjoint);
    let rule = CompositeRule::periodic(n_quad);
    let mut w_hat = vec![Complex64::new(0.0, 0.0); k_max + 1];
    for (&u, &wt) in rule.points().iter().zip(rule.weights()) {
        let wu = w(u) * wt / TAU;
        let rot = Complex64::from_polar(1.0, -u);
        let mut e = Complex64::new(1.0, 0.0);
        for slot in w_hat.iter_mut() {
            *slot += wu * e;
            e *= rot;
        }
    }
    let mean = c[0].re * w_hat[0].re;
    let harmonics = (1..=k_max).map(|m| c[m].conj() * w_hat[m]).collect();
    Ok(LockingFunction::from_harmonics(mean, harmonics, n_grid))
}

/// `w(psi) = p_x(psi) · g(x0(psi))`.
pub fn weight_function<'a>(
    model: &'a ModelDef,
    orbit: &'a PeriodicOrbit,
    adjoint: &'a AdjointOrbit,
) -> impl Fn(f64) -> f64 + 'a {
    let n = model.dim_x();
    move |psi: f64| {
        let z = orbit.z(psi);
        let p = adjoint.p(psi);
        let g = model.g(&z[..n]);
        p[..n].iter().zip(&g).map(|(a, b)| a * b).sum()
    }
}

/// Validated singular set: every critical point must satisfy `|G''| > nondeg_tol`.
/// A flat `G` yields an empty set with a warning.
pub fn find_singular_points(g: &LockingFunction, nondeg_tol: f64) -> Result<Vec<SingularPoint>> {
    if g.is_flat() {
        warn!("G is constant; the singular set is empty and no locking structure exists");
        return Ok(Vec::new());
    }
    for s in g.singular_points() {
        if s.second_derivative.abs() <= nondeg_tol {
            return Err(Error::NondegeneracyViolation {
                psi: s.psi,
                second_derivative: s.second_derivative.abs(),
                tolerance: nondeg_tol,
            });
        }
    }
    Ok(g.singular_points().to_vec())
}

/// Default nondegeneracy threshold, `1e-4 max|G|`.
pub fn default_nondeg_tol(g: &LockingFunction) -> f64 {
    1e-4 * g.max_abs()
}

/// Constants of the locking-region conditions: the amplitude window
/// `mu_star_low/alpha < gamma < mu_star_high * alpha` and the margin kept from
/// the singular set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub mu_star_low: f64,
    pub mu_star_high: f64,
    pub margin: f64,
}

impl RegionSpec {
    pub fn new(mu_star_low: f64, mu_star_high: f64, margin: f64) -> Result<Self> {
        for (name, v) in [
            ("region.mu_star_low", mu_star_low),
            ("region.mu_star_high", mu_star_high),
            ("region.margin", margin),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be > 0 (got {v})")));
            }
        }
        Ok(Self {
            mu_star_low,
            mu_star_high,
            margin,
        })
    }

    /// `mu_star_low = 0.5`, `mu_star_high = 0.1`, `margin = 0.05 (G+ - G-)`.
    pub fn default_for(g: &LockingFunction) -> Self {
        Self {
            mu_star_low: 0.5,
            mu_star_high: 0.1,
            margin: (0.05 * (g.g_plus() - g.g_minus())).max(f64::MIN_POSITIVE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionViolation {
    AmplitudeWindow { gamma: f64, low: f64, high: f64 },
    Detuning { delta: f64, g_minus: f64, g_plus: f64 },
    NearSingular { delta: f64, distance: f64, margin: f64 },
}

impl fmt::Display for RegionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AmplitudeWindow { gamma, low, high } => {
                write!(f, "amplitude-window: gamma = {gamma} not in ({low}, {high})")
            }
            Self::Detuning {
                delta,
                g_minus,
                g_plus,
            } => write!(f, "detuning: Delta = {delta} not in ({g_minus}, {g_plus})"),
            Self::NearSingular {
                delta,
                distance,
                margin,
            } => write!(
                f,
                "near-singular: dist(Delta = {delta}, S) = {distance} <= margin {margin}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionVerdict {
    Inside,
    Outside(Vec<RegionViolation>),
}

impl RegionVerdict {
    pub fn is_inside(&self) -> bool {
        matches!(self, Self::Inside)
    }
}

/// Evaluates the three locking-region conditions, listing every violated one.
pub fn in_locking_region(
    params: &ControlParams,
    beta0: f64,
    g: &LockingFunction,
    spec: &RegionSpec,
) -> RegionVerdict {
    let mut violations = Vec::new();
    let (low, high) = (spec.mu_star_low / params.alpha(), spec.mu_star_high * params.alpha());
    let gamma = params.gamma();
    if !(low < gamma && gamma < high) {
        violations.push(RegionViolation::AmplitudeWindow { gamma, low, high });
    }
    if let Some(delta) = params.detuning(beta0) {
        if !(g.g_minus() < delta && delta < g.g_plus()) {
            violations.push(RegionViolation::Detuning {
                delta,
                g_minus: g.g_minus(),
                g_plus: g.g_plus(),
            });
        }
        let distance = g
            .singular_values()
            .iter()
            .map(|s| (delta - s).abs())
            .fold(f64::INFINITY, f64::min);
        if !(distance > spec.margin) {
            violations.push(RegionViolation::NearSingular {
                delta,
                distance,
                margin: spec.margin,
            });
        }
    }
    if violations.is_empty() {
        RegionVerdict::Inside
    } else {
        RegionVerdict::Outside(violations)
    }
}

/// Which cross-section of the locking region to trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Section {
    /// `(beta, gamma)` plane at fixed `alpha`.
    AlphaConst { alpha: f64, beta0: f64 },
    /// `(1/alpha, gamma)` plane at fixed `beta`, for `1/alpha <= nu_max`.
    BetaConst { beta: f64, beta0: f64, nu_max: f64 },
}

/// One labelled polyline of a cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryCurves {
    /// Square-root-like curves `gamma = alpha sqrt((beta - beta0)/G~)`.
    pub curves: Vec<Branch>,
    /// The amplitude-window lines.
    pub lines: Vec<Branch>,
    pub diagnostic: Option<String>,
}

/// Boundary levels `G~` with labels: `G- + margin`, interior singular values
/// `± margin`, and `G+ - margin`.
pub fn boundary_levels(g: &LockingFunction, margin: f64) -> Vec<(String, f64)> {
    let mut levels = vec![("G_minus+margin".to_string(), g.g_minus() + margin)];
    let values = g.singular_values();
    let interior: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| *v > g.g_minus() + 1e-12 * g.max_abs() && *v < g.g_plus() - 1e-12 * g.max_abs())
        .collect();
    for (i, v) in interior.iter().enumerate() {
        levels.push((format!("G_{}-margin", i + 1), v - margin));
        levels.push((format!("G_{}+margin", i + 1), v + margin));
    }
    levels.push(("G_plus-margin".to_string(), g.g_plus() - margin));
    levels
}

/// Traces a cross-section of the locking region with `n_points` per polyline.
pub fn boundary_curves(
    g: &LockingFunction,
    spec: &RegionSpec,
    section: Section,
    n_points: usize,
) -> BoundaryCurves {
    let n_points = n_points.max(2);
    let levels = boundary_levels(g, spec.margin);
    let mut out = BoundaryCurves::default();
    match section {
        Section::AlphaConst { alpha, beta0 } => {
            let (lo, hi) = (spec.mu_star_low / alpha, spec.mu_star_high * alpha);
            if !(lo < hi) {
                out.diagnostic = Some(format!(
                    "empty amplitude window at alpha = {alpha}: {lo} >= {hi}"
                ));
                return out;
            }
            let (mut bmin, mut bmax) = (beta0, beta0);
            for (label, gt) in &levels {
                if *gt == 0.0 {
                    continue;
                }
                let points: Vec<(f64, f64)> = (0..n_points)
                    .map(|i| {
                        let gamma = lo + (hi - lo) * i as f64 / (n_points - 1) as f64;
                        (beta0 + gt * gamma * gamma / (alpha * alpha), gamma)
                    })
                    .collect();
                for p in &points {
                    bmin = bmin.min(p.0);
                    bmax = bmax.max(p.0);
                }
                out.curves.push(Branch {
                    label: label.clone(),
                    points,
                });
            }
            for (label, gamma) in [("gamma_low", lo), ("gamma_high", hi)] {
                out.lines.push(Branch {
                    label: label.to_string(),
                    points: vec![(bmin, gamma), (bmax, gamma)],
                });
            }
        }
        Section::BetaConst {
            beta,
            beta0,
            nu_max,
        } => {
            let d = beta - beta0;
            for (label, gt) in &levels {
                if *gt == 0.0 || d * gt <= 0.0 {
                    continue;
                }
                let mu_j = (d / gt).sqrt();
                if mu_j >= spec.mu_star_high {
                    continue;
                }
                // Above the lower line while nu^2 < mu_j / mu_star_low.
                let nu_hi = (mu_j / spec.mu_star_low).sqrt().min(nu_max);
                let nu_lo = nu_hi / 20.0;
                let points = (0..n_points)
                    .map(|i| {
                        let nu = nu_lo + (nu_hi - nu_lo) * i as f64 / (n_points - 1) as f64;
                        (nu, mu_j / nu)
                    })
                    .collect();
                out.curves.push(Branch {
                    label: label.clone(),
                    points,
                });
            }
            if out.curves.is_empty() {
                out.diagnostic = Some(format!(
                    "no boundary curve crosses the amplitude window at beta - beta0 = {d}"
                ));
                return out;
            }
            let nu_lo = nu_max / 20.0;
            let grid = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
                (0..n_points)
                    .map(|i| {
                        let nu = nu_lo + (nu_max - nu_lo) * i as f64 / (n_points - 1) as f64;
                        (nu, f(nu))
                    })
                    .collect()
            };
            out.lines.push(Branch {
                label: "gamma_low".into(),
                points: grid(&|nu| spec.mu_star_low * nu),
            });
            out.lines.push(Branch {
                label: "gamma_high".into(),
                points: grid(&|nu| spec.mu_star_high / nu),
            });
        }
    }
    out
}

/// An equilibrium of the averaged phase equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub theta: f64,
    /// `G'(theta)`; negative means stable.
    pub slope: f64,
}

impl Equilibrium {
    pub fn is_stable(&self) -> bool {
        self.slope < 0.0
    }
}

/// `psi' = mu^2 (G(psi) - Delta)` and its equilibria.
#[derive(Debug, Clone)]
pub struct AveragedPhaseModel {
    pub delta: f64,
    pub g: LockingFunction,
    /// Ascending in `[0, 2π)`; empty in the drifting regime.
    pub equilibria: Vec<Equilibrium>,
    /// `Delta` is within `1e-6 (G+ - G-)` of the singular set.
    pub ill_conditioned: bool,
}

impl AveragedPhaseModel {
    pub fn is_drifting(&self) -> bool {
        self.equilibria.is_empty()
    }

    pub fn stable(&self) -> impl Iterator<Item = &Equilibrium> {
        self.equilibria.iter().filter(|e| e.is_stable())
    }

    pub fn unstable(&self) -> impl Iterator<Item = &Equilibrium> {
        self.equilibria.iter().filter(|e| !e.is_stable())
    }

    /// Circular distance from `theta` to the nearest stable equilibrium.
    pub fn distance_to_stable(&self, theta: f64) -> Option<(f64, Equilibrium)> {
        self.stable()
            .map(|e| (circular_distance(theta, e.theta), *e))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn rhs(&self, mu: f64, psi: f64) -> f64 {
        mu * mu * (self.g.value(psi) - self.delta)
    }
}

/// `|a - b|` on the circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Solutions of `G(theta) = Delta` with their stability.
pub fn averaged_equilibria(delta: f64, g: &LockingFunction) -> AveragedPhaseModel {
    let range = (g.g_plus() - g.g_minus()).max(f64::MIN_POSITIVE);
    let near = g
        .singular_values()
        .iter()
        .map(|s| (delta - s).abs())
        .fold(f64::INFINITY, f64::min);
    let ill_conditioned = near <= 1e-6 * range;
    if ill_conditioned {
        warn!("Delta = {delta} is within {near:.3e} of a critical value of G; equilibria are ill-conditioned");
    }
    let equilibria = if delta <= g.g_minus() || delta >= g.g_plus() {
        Vec::new()
    } else {
        g.level_crossings(delta)
            .into_iter()
            .map(|theta| Equilibrium {
                theta,
                slope: g.derivative(theta),
            })
            .collect()
    };
    AveragedPhaseModel {
        delta,
        g: g.clone(),
        equilibria,
        ill_conditioned,
    }
}

/// Integrates the averaged phase equation from `psi0` over `[0, horizon]`.
pub fn integrate_averaged_phase(
    model: &AveragedPhaseModel,
    mu: f64,
    psi0: f64,
    horizon: f64,
    tolerances: Tolerances,
) -> Result<DenseOutput> {
    if !(mu > 0.0) {
        return Err(Error::ContractViolation(format!("mu must be > 0 (got {mu})")));
    }
    let field = FnField::new(1, |_t, y: &[f64], dy: &mut [f64]| {
        dy[0] = model.rhs(mu, y[0]);
    });
    integrate_adaptive(&field, &[psi0], (0.0, horizon), tolerances)
}

/// Arcs travelled from each unstable equilibrium to its neighbouring stable
/// ones, shrunk by `delta` at both ends, as `(start, end, sign)` with the
/// direction of motion `sign`. In the drifting regime the whole circle is one arc.
fn transit_arcs(model: &AveragedPhaseModel, delta: f64) -> Vec<(f64, f64, f64)> {
    let eq = &model.equilibria;
    if eq.is_empty() {
        let sign = if model.g.mean() >= model.delta { 1.0 } else { -1.0 };
        return vec![(0.0, TAU, sign)];
    }
    let n = eq.len();
    let mut arcs = Vec::new();
    for i in 0..n {
        let a = eq[i];
        let b = eq[(i + 1) % n];
        let mut end = b.theta;
        if end <= a.theta {
            end += TAU;
        }
        let mid = 0.5 * (a.theta + end);
        let sign = if model.g.value(mid) >= model.delta { 1.0 } else { -1.0 };
        if end - a.theta > 2.0 * delta {
            arcs.push((a.theta + delta, end - delta, sign));
        }
    }
    arcs
}

/// Upper bound `2π / (mu^2 (m - m0))` on the time the averaged phase needs to
/// pass between neighbourhoods of consecutive equilibria, with `m` the
/// smallest `|G - Delta|` on the shrunken arcs.
pub fn transit_time_bound(
    g: &LockingFunction,
    delta_level: f64,
    delta: f64,
    mu: f64,
    m0: f64,
) -> Result<f64> {
    let model = averaged_equilibria(delta_level, g);
    let arcs = transit_arcs(&model, delta);
    let m = arcs
        .iter()
        .map(|&(a, b, sign)| g.arc_min(delta_level, sign, a, b))
        .fold(f64::INFINITY, f64::min);
    if !(m > m0) || arcs.is_empty() {
        return Err(Error::BoundUnavailable { m, m0 });
    }
    Ok(TAU / (mu * mu * (m - m0)))
}

/// Mean of `|a|^2` times mean of `w`: the exact mean of `G`.
pub fn mean_identity(model: &ModelDef, orbit: &PeriodicOrbit, adjoint: &AdjointOrbit, forcing: &ForcingProfile) -> f64 {
    let w = weight_function(model, orbit, adjoint);
    forcing.mean_intensity() * orbit.mean(|psi, _| w(psi))
}

/// Half-width of the locking interval in `beta` predicted at amplitude `mu`:
/// `(mu^2 G+, mu^2 G-)` around `beta0`.
pub fn predicted_beta_window(g: &LockingFunction, beta0: f64, mu: f64) -> (f64, f64) {
    (beta0 + mu * mu * g.g_minus(), beta0 + mu * mu * g.g_plus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_singular_set() {
        let g = LockingFunction::sine(512);
        let s = find_singular_points(&g, 1e-4).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].psi - PI / 2.0).abs() < 1e-10);
        assert!((s[1].psi - 3.0 * PI / 2.0).abs() < 1e-10);
        assert!((s[0].value - 1.0).abs() < 1e-12 && (s[1].value + 1.0).abs() < 1e-12);
        assert!((g.g_plus() - 1.0).abs() < 1e-12 && (g.g_minus() + 1.0).abs() < 1e-12);
        assert!(s[0].second_derivative < 0.0 && s[1].second_derivative > 0.0);
    }

    #[test]
    fn flat_function_has_no_singular_points() {
        let g = LockingFunction::from_harmonics(0.7, vec![Complex64::new(0.0, 0.0)], 256);
        assert!(g.is_flat());
        assert!(find_singular_points(&g, 1e-4).unwrap().is_empty());
    }

    #[test]
    fn degenerate_critical_point_is_reported() {
        // G = sin(psi) + sin(2 psi)/2 has G'' = 0 where G' = 0 at psi = π.
        let g = LockingFunction::from_harmonics(
            0.0,
            vec![Complex64::new(0.0, -0.5), Complex64::new(0.0, -0.25)],
            512,
        );
        let err = find_singular_points(&g, 1e-4).unwrap_err();
        assert!(matches!(err, Error::NondegeneracyViolation { .. }), "{err}");
    }

    #[test]
    fn sine_equilibria_and_closed_form_phase() {
        let g = LockingFunction::sine(512);
        let m = averaged_equilibria(0.0, &g);
        assert_eq!(m.equilibria.len(), 2);
        assert!(m.equilibria[0].theta.abs() < 1e-12 && !m.equilibria[0].is_stable());
        assert!((m.equilibria[1].theta - PI).abs() < 1e-10 && m.equilibria[1].is_stable());
        assert!(averaged_equilibria(1.0 - 1e-12, &g).ill_conditioned);
        assert!(averaged_equilibria(1.5, &g).is_drifting());

        let mu = 0.1;
        let tol = Tolerances::new(1e-10, 1e-12).unwrap();
        let traj = integrate_averaged_phase(&m, mu, PI / 2.0, 300.0, tol).unwrap();
        for &t in traj.knots().iter().step_by(7) {
            // tan(psi/2) = tan(π/4) e^{mu^2 t}
            let exact = 2.0 * (mu * mu * t).exp().atan();
            assert!((traj.eval(t)[0] - exact).abs() < 1e-8, "t = {t}");
        }
        let fixed = integrate_averaged_phase(&m, mu, PI, 300.0, tol).unwrap();
        assert!((fixed.final_state()[0] - PI).abs() < 1e-12);
    }

    #[test]
    fn trajectory_from_unstable_side_settles_on_stable_equilibrium() {
        let g = LockingFunction::sine(512);
        let m = averaged_equilibria(0.3, &g);
        let (unstable, stable) = (m.unstable().next().unwrap().theta, m.stable().next().unwrap().theta);
        let mu = 0.05;
        let traj = integrate_averaged_phase(
            &m,
            mu,
            unstable + 1e-3,
            50.0 / (mu * mu),
            Tolerances::new(1e-10, 1e-12).unwrap(),
        )
        .unwrap();
        assert!(circular_distance(traj.final_state()[0], stable) < 1e-6);
    }

    #[test]
    fn sine_transit_bound() {
        let g = LockingFunction::sine(512);
        let (d, mu) = (0.2, 0.1);
        let t = transit_time_bound(&g, 0.0, d, mu, 0.0).unwrap();
        assert!((t - TAU / (mu * mu * d.sin())).abs() < 1e-6 * t);
        let err = transit_time_bound(&g, 0.0, 2.0, mu, 0.0).unwrap_err();
        assert!(matches!(err, Error::BoundUnavailable { .. }));
        let err = transit_time_bound(&g, 0.0, d, mu, 0.5).unwrap_err();
        assert!(matches!(err, Error::BoundUnavailable { .. }));
    }

    fn unit_sine_spec() -> RegionSpec {
        RegionSpec::new(0.5, 0.1, 0.05).unwrap()
    }

    #[test]
    fn region_verdicts() {
        let g = LockingFunction::sine(512);
        let beta0 = 1.3;
        let spec = unit_sine_spec();
        let p = ControlParams::new(100.0, beta0, 1.0).unwrap();
        assert_eq!(in_locking_region(&p, beta0, &g, &spec), RegionVerdict::Inside);

        let p = ControlParams::new(100.0, beta0, 0.0).unwrap();
        match in_locking_region(&p, beta0, &g, &spec) {
            RegionVerdict::Outside(v) => {
                assert!(matches!(v.as_slice(), [RegionViolation::AmplitudeWindow { .. }]))
            }
            other => panic!("{other:?}"),
        }

        let gamma: f64 = 1.0;
        let beta = beta0 + 1.0001 * (gamma * gamma / 1e4) * g.g_plus();
        let p = ControlParams::new(100.0, beta, gamma).unwrap();
        match in_locking_region(&p, beta0, &g, &spec) {
            RegionVerdict::Outside(v) => {
                assert!(v.iter().any(|x| matches!(x, RegionViolation::Detuning { .. })))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn alpha_const_plug_in_formula() {
        // G~ = 1 at alpha = 100 and beta - beta0 = 1e-4 gives gamma = 1.
        let g = LockingFunction::from_harmonics(0.0, vec![Complex64::new(0.0, -0.55)], 512);
        let spec = RegionSpec::new(0.5, 0.1, 0.1).unwrap();
        let curves = boundary_curves(
            &g,
            &spec,
            Section::AlphaConst {
                alpha: 100.0,
                beta0: 2.0,
            },
            1001,
        );
        assert_eq!(curves.curves.len(), 2);
        assert_eq!(curves.lines.len(), 2);
        let upper = curves.curves.iter().find(|b| b.label == "G_plus-margin").unwrap();
        let on = upper
            .points
            .iter()
            .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
            .unwrap();
        let gamma_at = 100.0 * ((on.0 - 2.0) / 1.0).sqrt();
        assert!((gamma_at - on.1).abs() < 1e-9);
        assert!(((on.0 - 2.0) - 1e-4 * on.1 * on.1).abs() < 1e-12);
    }

    #[test]
    fn beta_const_skips_wrong_sign_branches() {
        let g = LockingFunction::sine(512);
        let spec = unit_sine_spec();
        let c = boundary_curves(
            &g,
            &spec,
            Section::BetaConst {
                beta: 1.0 + 1e-5,
                beta0: 1.0,
                nu_max: 0.01,
            },
            50,
        );
        assert_eq!(c.curves.len(), 1);
        assert_eq!(c.curves[0].label, "G_plus-margin");
        let c = boundary_curves(
            &g,
            &spec,
            Section::BetaConst {
                beta: 2.0,
                beta0: 1.0,
                nu_max: 0.01,
            },
            50,
        );
        assert!(c.curves.is_empty() && c.diagnostic.is_some());
    }

    #[test]
    fn shift_moves_graph() {
        let g = LockingFunction::from_harmonics(
            0.1,
            vec![Complex64::new(0.3, -0.2), Complex64::new(0.05, 0.1)],
            512,
        );
        let s = g.shifted(0.7);
        for k in 0..40 {
            let psi = 0.17 * k as f64;
            assert!((s.value(psi) - g.value(psi + 0.7)).abs() < 1e-14);
        }
    }
}
