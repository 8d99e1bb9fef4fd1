//! The forced equivariant system
//!
//! ```text
//! x' = f(x) + g(x)|y|^2
//! y' = h(x) y + gamma e^{i alpha t} a(beta t)
//! ```
//!
//! with `x` in R^n, `y` complex and a 2π-periodic forcing profile `a`, its
//! unforced polar form `(x, r, theta)`, and the built-in model families.
//! Complex quantities are carried as real pairs whenever they enter the ODE layer.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrate::VectorField;

/// Smoothness class the analysis assumes for f, g, h and a (documented, not enforced).
pub const SMOOTHNESS_CLASS: u32 = 5;

/// Finite Fourier series `a(tau) = sum_k a_k e^{i k tau}`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingProfile {
    coeffs: Vec<Complex64>,
}

impl ForcingProfile {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidModel("non-finite forcing coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    /// Profile from real coefficients (`a_k` real).
    pub fn real(coeffs: &[f64]) -> Self {
        Self {
            coeffs: coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect(),
        }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Highest harmonic present.
    pub fn max_harmonic(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm_sqr() == 0.0)
    }

    pub fn eval(&self, tau: f64) -> Complex64 {
        let rot = Complex64::from_polar(1.0, tau);
        let mut power = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for c in &self.coeffs {
            acc += c * power;
            power *= rot;
        }
        acc
    }

    /// `(a(tau), da/dtau)`.
    pub fn eval_with_derivative(&self, tau: f64) -> (Complex64, Complex64) {
        let rot = Complex64::from_polar(1.0, tau);
        let mut power = Complex64::new(1.0, 0.0);
        let mut a = Complex64::new(0.0, 0.0);
        let mut da = Complex64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate() {
            let term = c * power;
            a += term;
            da += term * Complex64::new(0.0, k as f64);
            power *= rot;
        }
        (a, da)
    }

    pub fn intensity(&self, tau: f64) -> f64 {
        self.eval(tau).norm_sqr()
    }

    /// Harmonics `c_m`, `m = 0..=K`, of `|a|^2 = sum_m c_m e^{i m tau}` (`c_{-m} = conj(c_m)`).
    pub fn intensity_harmonics(&self) -> Vec<Complex64> {
        let k = self.coeffs.len();
        (0..k.max(1))
            .map(|m| {
                (0..k.saturating_sub(m))
                    .map(|l| self.coeffs[l + m] * self.coeffs[l].conj())
                    .sum()
            })
            .collect()
    }

    /// `|a|^2` and its derivative from the closed-form harmonics.
    pub fn intensity_from_harmonics(harmonics: &[Complex64], tau: f64) -> (f64, f64) {
        let mut v = harmonics.first().map_or(0.0, |c| c.re);
        let mut dv = 0.0;
        for (m, c) in harmonics.iter().enumerate().skip(1) {
            let e = Complex64::from_polar(1.0, m as f64 * tau);
            let term = c * e;
            v += 2.0 * term.re;
            dv += 2.0 * (term * Complex64::new(0.0, m as f64)).re;
        }
        (v, dv)
    }

    /// Mean of `|a|^2` over a period.
    pub fn mean_intensity(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

impl Default for ForcingProfile {
    /// `a(tau) = 1 + 0.5 e^{i tau}`: one positive and one negative extremum of G.
    fn default() -> Self {
        Self::real(&[1.0, 0.5])
    }
}

/// One parametric family of equivariant systems: `f`, `g`, `h` and first derivatives.
pub trait ModelFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Dimension `n` of `x`.
    fn dim_x(&self) -> usize;

    /// Named parameter values, in a stable order.
    fn parameters(&self) -> Vec<(&'static str, f64)>;

    fn f(&self, x: &[f64], out: &mut [f64]);

    fn g(&self, x: &[f64], out: &mut [f64]);

    fn h(&self, x: &[f64]) -> Complex64;

    /// `df/dx`, n×n.
    fn df(&self, x: &[f64]) -> DMatrix<f64>;

    /// `dg/dx`, n×n.
    fn dg(&self, x: &[f64]) -> DMatrix<f64>;

    /// Gradient of `h`: entry `j` is `d Re h/dx_j + i d Im h/dx_j`.
    fn dh(&self, x: &[f64]) -> Vec<Complex64>;

    /// Suggested starting point `(x, r)` for the transient that locates the cycle.
    fn cycle_seed(&self) -> Vec<f64>;

    /// `out = f(x) + g(x) s`; families override this to avoid the scratch allocation.
    fn x_rhs(&self, x: &[f64], s: f64, out: &mut [f64]) {
        self.f(x, out);
        let mut g = vec![0.0; out.len()];
        self.g(x, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi * s;
        }
    }
}

/// The laser-like example family (n = 1):
///
/// ```text
/// f(x) = P + eta x - x^3,  g(x) = -c,  h(x) = x + i (omega0 + kappa x)
/// ```
///
/// The planar `(x, r)` part has the fixed point `(0, sqrt(P/c))` with trace `eta`;
/// with `v = ln r` it becomes the Van der Pol-type oscillator
/// `x'' = (eta - 3x^2) x' - 2 P x`, which has a stable limit cycle for small `eta > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdpLaser {
    pub p: f64,
    pub eta: f64,
    pub c: f64,
    pub omega0: f64,
    pub kappa: f64,
}

impl VdpLaser {
    pub const DEFAULT: VdpLaser = VdpLaser {
        p: 1.0,
        eta: 0.2,
        c: 1.0,
        omega0: 2.0,
        kappa: 0.5,
    };

    pub const FAMILY: &'static str = "vdp_laser";
}

impl Default for VdpLaser {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl ModelFamily for VdpLaser {
    fn name(&self) -> &str {
        Self::FAMILY
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("P", self.p),
            ("eta", self.eta),
            ("c", self.c),
            ("omega0", self.omega0),
            ("kappa", self.kappa),
        ]
    }

    fn f(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.p + self.eta * x[0] - x[0].powi(3);
    }

    fn g(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = -self.c;
    }

    fn h(&self, x: &[f64]) -> Complex64 {
        Complex64::new(x[0], self.omega0 + self.kappa * x[0])
    }

    fn df(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.eta - 3.0 * x[0] * x[0])
    }

    fn dg(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn dh(&self, _x: &[f64]) -> Vec<Complex64> {
        vec![Complex64::new(1.0, self.kappa)]
    }

    fn cycle_seed(&self) -> Vec<f64> {
        vec![0.1, (self.p / self.c).sqrt()]
    }

    fn x_rhs(&self, x: &[f64], s: f64, out: &mut [f64]) {
        out[0] = self.p + self.eta * x[0] - x[0].powi(3) - self.c * s;
    }
}

/// The equivariant system together with its forcing profile.
#[derive(Clone)]
pub struct ModelDef {
    family: Arc<dyn ModelFamily>,
    forcing: ForcingProfile,
}

impl fmt::Debug for ModelDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelDef")
            .field("family", &self.family)
            .field("forcing", &self.forcing)
            .finish()
    }
}

impl PartialEq for ModelDef {
    fn eq(&self, other: &Self) -> bool {
        self.family.name() == other.family.name()
            && self.family.parameters() == other.family.parameters()
            && self.forcing == other.forcing
    }
}

impl ModelDef {
    pub fn new(family: Arc<dyn ModelFamily>, forcing: ForcingProfile) -> Self {
        Self { family, forcing }
    }

    pub fn with_forcing(&self, forcing: ForcingProfile) -> Self {
        Self {
            family: Arc::clone(&self.family),
            forcing,
        }
    }

    pub fn family(&self) -> &dyn ModelFamily {
        self.family.as_ref()
    }

    pub fn forcing(&self) -> &ForcingProfile {
        &self.forcing
    }

    pub fn dim_x(&self) -> usize {
        self.family.dim_x()
    }

    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x()];
        self.family.f(x, &mut out);
        out
    }

    pub fn g(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x()];
        self.family.g(x, &mut out);
        out
    }

    pub fn h(&self, x: &[f64]) -> Complex64 {
        self.family.h(x)
    }

    /// The planar `(x, r)` field of the unforced polar form.
    pub fn planar_field(&self) -> PlanarField {
        PlanarField {
            model: self.clone(),
        }
    }
}

/// Builds the vdp-laser model with the default forcing profile.
///
/// `eta` may be any finite value; for `eta <= 0` the fixed point is stable and
/// no cycle exists, which the orbit finder reports.
pub fn make_vdp_laser(p: f64, eta: f64, c: f64, omega0: f64, kappa: f64) -> Result<ModelDef> {
    let all = [p, eta, c, omega0, kappa];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("vdp_laser parameters must be finite".into()));
    }
    if p <= 0.0 {
        return Err(Error::InvalidModel(format!("vdp_laser requires P > 0 (got {p})")));
    }
    if c <= 0.0 {
        return Err(Error::InvalidModel(format!("vdp_laser requires c > 0 (got {c})")));
    }
    Ok(ModelDef::new(
        Arc::new(VdpLaser {
            p,
            eta,
            c,
            omega0,
            kappa,
        }),
        ForcingProfile::default(),
    ))
}

/// Registry of model families selectable from config files.
///
/// `params` holds the `model.*` keys other than `family`; missing keys take
/// the family defaults and unknown keys are rejected. New families are added here.
pub fn build_family(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelDef> {
    match name {
        VdpLaser::FAMILY => {
            let d = VdpLaser::DEFAULT;
            for key in params.keys() {
                if !["P", "eta", "c", "omega0", "kappa"].contains(&key.as_str()) {
                    return Err(Error::config(
                        format!("model.{key}"),
                        "unknown parameter for family vdp_laser",
                    ));
                }
            }
            let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
            make_vdp_laser(
                get("P", d.p),
                get("eta", d.eta),
                get("c", d.c),
                get("omega0", d.omega0),
                get("kappa", d.kappa),
            )
        }
        other => Err(Error::config(
            "model.family",
            format!("unknown model family `{other}` (known: vdp_laser)"),
        )),
    }
}

/// Forcing frequencies and amplitude, with the derived small parameters
/// `mu = gamma/alpha` and `nu = 1/alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    mu: f64,
    nu: f64,
}

impl ControlParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config("control.alpha", format!("must be > 0 (got {alpha})")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::config("control.beta", format!("must be > 0 (got {beta})")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::config("control.gamma", format!("must be >= 0 (got {gamma})")));
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            mu: gamma / alpha,
            nu: 1.0 / alpha,
        })
    }

    /// Parameters placing the modulation detuning at `delta = (beta - beta0)/mu^2`.
    pub fn from_detuning(alpha: f64, gamma: f64, beta0: f64, delta: f64) -> Result<Self> {
        let mu = gamma / alpha;
        Self::new(alpha, beta0 + mu * mu * delta, gamma)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `(beta - beta0)/mu^2`; undefined at zero amplitude.
    pub fn detuning(&self, beta0: f64) -> Option<f64> {
        (self.mu > 0.0).then(|| (self.beta - beta0) / (self.mu * self.mu))
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.alpha, beta, self.gamma)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, gamma)
    }

    /// Modulation period of the forcing, `2π/beta`.
    pub fn modulation_period(&self) -> f64 {
        2.0 * PI / self.beta
    }
}

/// State `(x, y)` of the full system.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub x: Vec<f64>,
    pub y: Complex64,
}

impl FullState {
    pub fn new(x: Vec<f64>, y: Complex64) -> Self {
        Self { x, y }
    }

    /// `[x_1, .., x_n, Re y, Im y]`.
    pub fn to_real(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.y.re);
        v.push(self.y.im);
        v
    }

    pub fn from_real(v: &[f64]) -> Self {
        let n = v.len() - 2;
        Self {
            x: v[..n].to_vec(),
            y: Complex64::new(v[n], v[n + 1]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.y.re.is_finite() && self.y.im.is_finite()
    }
}

/// Right-hand side of the full forced system.
pub fn eval_full_rhs(
    model: &ModelDef,
    params: &ControlParams,
    t: f64,
    s: &FullState,
) -> Result<FullState> {
    if !s.is_finite() || !t.is_finite() {
        return Err(Error::InvalidState("non-finite state or time".into()));
    }
    if s.x.len() != model.dim_x() {
        return Err(Error::InvalidState(format!(
            "x has length {}, model dimension is {}",
            s.x.len(),
            model.dim_x()
        )));
    }
    let field = ForcedField::new(model.clone(), *params, Formulation::Direct);
    let y = s.to_real();
    let mut dy = vec![0.0; y.len()];
    field.rhs(t, &y, &mut dy);
    Ok(FullState::from_real(&dy))
}

/// Derivatives in the polar form `(x, r, theta)` of the unforced system.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarDerivative {
    pub dx: Vec<f64>,
    pub dr: f64,
    pub dtheta: f64,
}

/// `(f(x) + g(x) r^2, Re h(x) r, Im h(x))`, defined for `r > 0`.
pub fn eval_polar_rhs(model: &ModelDef, x: &[f64], r: f64) -> Result<PolarDerivative> {
    if !(r > 0.0) {
        return Err(Error::DomainViolation(format!(
            "polar coordinates require r > 0 (got {r})"
        )));
    }
    let mut dx = model.f(x);
    let g = model.g(x);
    for (d, gi) in dx.iter_mut().zip(&g) {
        *d += gi * r * r;
    }
    let h = model.h(x);
    Ok(PolarDerivative {
        dx,
        dr: h.re * r,
        dtheta: h.im,
    })
}

/// First averaging change of variables: `y1 = y + i (gamma/alpha) e^{i alpha t} a(beta t)`.
pub fn remove_forcing_oscillation(
    params: &ControlParams,
    forcing: &ForcingProfile,
    t: f64,
    y: Complex64,
) -> Complex64 {
    y + forcing_oscillation(params, forcing, t)
}

/// Inverse of [`remove_forcing_oscillation`].
pub fn restore_forcing_oscillation(
    params: &ControlParams,
    forcing: &ForcingProfile,
    t: f64,
    y1: Complex64,
) -> Complex64 {
    y1 - forcing_oscillation(params, forcing, t)
}

fn forcing_oscillation(params: &ControlParams, forcing: &ForcingProfile, t: f64) -> Complex64 {
    if params.gamma == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, params.mu) * Complex64::from_polar(1.0, params.alpha * t)
        * forcing.eval(params.beta * t)
}

/// The unforced planar field `z' = F(z)`, `z = (x, r)`, with Jacobian.
#[derive(Debug, Clone)]
pub struct PlanarField {
    model: ModelDef,
}

impl PlanarField {
    pub fn model(&self) -> &ModelDef {
        &self.model
    }
}

impl VectorField for PlanarField {
    fn dim(&self) -> usize {
        self.model.dim_x() + 1
    }

    fn rhs(&self, _t: f64, z: &[f64], dz: &mut [f64]) {
        let n = self.model.dim_x();
        let (x, r) = (&z[..n], z[n]);
        let fam = self.model.family();
        fam.x_rhs(x, r * r, &mut dz[..n]);
        dz[n] = fam.h(x).re * r;
    }

    fn jacobian(&self, _t: f64, z: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.model.dim_x();
        let (x, r) = (&z[..n], z[n]);
        let fam = self.model.family();
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let df = fam.df(x);
        let dg = fam.dg(x);
        let mut g = vec![0.0; n];
        fam.g(x, &mut g);
        let dh = fam.dh(x);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = df[(i, j)] + dg[(i, j)] * r * r;
            }
            jac[(i, n)] = 2.0 * g[i] * r;
            jac[(n, i)] = dh[i].re * r;
        }
        jac[(n, n)] = fam.h(x).re;
        Some(jac)
    }
}

/// How the forced system is written for integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// State `(x, y)` as in the original equations.
    Direct,
    /// State `(x, y1)` with `y = y1 - i mu e^{i alpha t} a(beta t)`. This is an
    /// exact change of variables; the fast forcing enters with amplitude `mu`
    /// instead of `gamma`, which allows much larger steps.
    DeForced,
}

/// The full forced system as a real vector field on `[x, Re y, Im y]`
/// (or `[x, Re y1, Im y1]` for [`Formulation::DeForced`]).
#[derive(Debug, Clone)]
pub struct ForcedField {
    model: ModelDef,
    params: ControlParams,
    formulation: Formulation,
}

impl ForcedField {
    pub fn new(model: ModelDef, params: ControlParams, formulation: Formulation) -> Self {
        Self {
            model,
            params,
            formulation,
        }
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    /// Original `y` from an integration state.
    pub fn physical_y(&self, t: f64, state: &[f64]) -> Complex64 {
        let n = self.model.dim_x();
        let v = Complex64::new(state[n], state[n + 1]);
        match self.formulation {
            Formulation::Direct => v,
            Formulation::DeForced => {
                restore_forcing_oscillation(&self.params, self.model.forcing(), t, v)
            }
        }
    }

    /// De-forced `y1` from an integration state.
    pub fn deforced_y(&self, t: f64, state: &[f64]) -> Complex64 {
        let n = self.model.dim_x();
        let v = Complex64::new(state[n], state[n + 1]);
        match self.formulation {
            Formulation::Direct => {
                remove_forcing_oscillation(&self.params, self.model.forcing(), t, v)
            }
            Formulation::DeForced => v,
        }
    }

    /// Integration state for a physical state `(x, y)` at time `t`.
    pub fn state_from_physical(&self, t: f64, s: &FullState) -> Vec<f64> {
        let y = match self.formulation {
            Formulation::Direct => s.y,
            Formulation::DeForced => {
                remove_forcing_oscillation(&self.params, self.model.forcing(), t, s.y)
            }
        };
        FullState::new(s.x.clone(), y).to_real()
    }
}

impl VectorField for ForcedField {
    fn dim(&self) -> usize {
        self.model.dim_x() + 2
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        let n = self.model.dim_x();
        let fam = self.model.family();
        let x = &s[..n];
        let v = Complex64::new(s[n], s[n + 1]);
        let p = &self.params;
        let h = fam.h(x);
        let (y, dv) = if p.gamma == 0.0 {
            (v, h * v)
        } else {
            let fast = Complex64::from_polar(1.0, p.alpha * t);
            match self.formulation {
                Formulation::Direct => {
                    let a = self.model.forcing.eval(p.beta * t);
                    (v, h * v + p.gamma * fast * a)
                }
                Formulation::DeForced => {
                    let (a, da) = self.model.forcing.eval_with_derivative(p.beta * t);
                    let i_mu_fast = Complex64::new(0.0, p.mu) * fast;
                    let y = v - i_mu_fast * a;
                    (y, h * v - i_mu_fast * (h * a - p.beta * da))
                }
            }
        };
        fam.x_rhs(x, y.norm_sqr(), &mut ds[..n]);
        ds[n] = dv.re;
        ds[n + 1] = dv.im;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::finite_difference_jacobian;

    fn vdp() -> ModelDef {
        make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5).unwrap()
    }

    #[test]
    fn unforced_zero_field_limit() {
        let m = vdp();
        let p = ControlParams::new(100.0, 1.4, 0.0).unwrap();
        let d = eval_full_rhs(&m, &p, 0.3, &FullState::new(vec![0.4], Complex64::new(0.0, 0.0)))
            .unwrap();
        assert_eq!(d.x, m.f(&[0.4]));
        assert_eq!(d.y, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn equivariance_at_zero_amplitude() {
        let m = vdp();
        let p = ControlParams::new(100.0, 1.4, 0.0).unwrap();
        for (k, &x) in [-0.7, 0.0, 0.3, 1.1].iter().enumerate() {
            let y = Complex64::new(0.8, -0.3 + 0.2 * k as f64);
            let base = eval_full_rhs(&m, &p, 1.0, &FullState::new(vec![x], y)).unwrap();
            for phi in [0.1, 1.0, 2.5, -3.0] {
                let rot = Complex64::from_polar(1.0, phi);
                let d = eval_full_rhs(&m, &p, 1.0, &FullState::new(vec![x], rot * y)).unwrap();
                assert!((d.x[0] - base.x[0]).abs() <= 1e-12);
                assert!((d.y - rot * base.y).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn full_rhs_matches_hand_expansion() {
        let m = vdp();
        let beta0 = 1.4;
        let p = ControlParams::new(100.0, beta0, 0.1).unwrap();
        let d = eval_full_rhs(&m, &p, 0.0, &FullState::new(vec![0.0], Complex64::new(1.0, 0.0)))
            .unwrap();
        // x' = P + 0 - 0 - c*1 = 0; y' = (0 + 2i)*1 + 0.1 * 1 * (1 + 0.5) = 0.15 + 2i
        assert!((d.x[0] - 0.0).abs() < 1e-15);
        assert!((d.y - Complex64::new(0.15, 2.0)).norm() < 1e-15);

        let t = 0.37;
        let (x, y) = (0.4, Complex64::new(0.9, -0.2));
        let d = eval_full_rhs(&m, &p, t, &FullState::new(vec![x], y)).unwrap();
        let a = Complex64::new(1.0, 0.0) + 0.5 * Complex64::from_polar(1.0, beta0 * t);
        let expect_x = 1.0 + 0.2 * x - x * x * x - y.norm_sqr();
        let expect_y = Complex64::new(x, 2.0 + 0.5 * x) * y
            + 0.1 * Complex64::from_polar(1.0, 100.0 * t) * a;
        assert!((d.x[0] - expect_x).abs() < 1e-14);
        assert!((d.y - expect_y).norm() < 1e-14);
    }

    #[test]
    fn polar_fixed_point_of_vdp_laser() {
        let d = eval_polar_rhs(&vdp(), &[0.0], 1.0).unwrap();
        assert_eq!(d.dx, vec![0.0]);
        assert_eq!(d.dr, 0.0);
        assert_eq!(d.dtheta, 2.0);
    }

    #[test]
    fn polar_rejects_nonpositive_radius() {
        assert!(matches!(
            eval_polar_rhs(&vdp(), &[0.0], 0.0),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn polar_matches_cartesian() {
        let m = vdp();
        let p = ControlParams::new(50.0, 1.0, 0.0).unwrap();
        let mut seed = 12345u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let x = 2.0 * rnd() - 1.0;
            let r = 0.2 + 1.5 * rnd();
            let th = 2.0 * PI * rnd();
            let y = Complex64::from_polar(r, th);
            let full = eval_full_rhs(&m, &p, 0.0, &FullState::new(vec![x], y)).unwrap();
            let polar = eval_polar_rhs(&m, &[x], r).unwrap();
            // d/dt (r e^{i th}) = (r' + i r th') e^{i th}
            let expect = Complex64::new(polar.dr, r * polar.dtheta) * Complex64::from_polar(1.0, th);
            assert!((full.x[0] - polar.dx[0]).abs() <= 1e-12);
            assert!((full.y - expect).norm() <= 1e-12);
        }
    }

    #[test]
    fn forcing_oscillation_removal() {
        let f = ForcingProfile::real(&[1.0, 0.3, 0.2]);
        let zero = ControlParams::new(100.0, 1.3, 0.0).unwrap();
        let y = Complex64::new(0.4, 0.7);
        assert_eq!(remove_forcing_oscillation(&zero, &f, 2.0, y), y);

        let p = ControlParams::new(100.0, 1.3, 2.0).unwrap();
        let t = 0.812;
        let y = Complex64::new(0.0, -p.mu()) * Complex64::from_polar(1.0, p.alpha() * t)
            * f.eval(p.beta() * t);
        assert!(remove_forcing_oscillation(&p, &f, t, y).norm() < 1e-17);

        let y = Complex64::new(0.9, -0.1);
        let back = restore_forcing_oscillation(&p, &f, t, remove_forcing_oscillation(&p, &f, t, y));
        assert!((back - y).norm() <= 1e-15);
    }

    #[test]
    fn intensity_harmonics_match_direct_expansion() {
        let f = ForcingProfile::new(vec![
            Complex64::new(1.0, 0.2),
            Complex64::new(0.3, -0.4),
            Complex64::new(0.2, 0.1),
        ])
        .unwrap();
        let h = f.intensity_harmonics();
        for j in 0..50 {
            let tau = 0.13 * j as f64;
            let mut direct = Complex64::new(0.0, 0.0);
            for (k, ak) in f.coeffs().iter().enumerate() {
                for (m, am) in f.coeffs().iter().enumerate() {
                    direct += ak * am.conj() * Complex64::from_polar(1.0, (k as f64 - m as f64) * tau);
                }
            }
            let (v, dv) = ForcingProfile::intensity_from_harmonics(&h, tau);
            assert!((direct.re - f.intensity(tau)).abs() <= 1e-12);
            assert!((v - f.intensity(tau)).abs() <= 1e-12);
            let fd = (f.intensity(tau + 1e-6) - f.intensity(tau - 1e-6)) / 2e-6;
            assert!((dv - fd).abs() < 1e-8);
        }
        assert!((f.mean_intensity() - h[0].re).abs() < 1e-15);
    }

    #[test]
    fn planar_jacobian_matches_finite_differences() {
        let field = vdp().planar_field();
        for z in [[0.0, 1.0], [0.4, 0.7], [-0.6, 1.3]] {
            let j = field.jacobian(0.0, &z).unwrap();
            let fd = finite_difference_jacobian(&field, 0.0, &z, 1e-6);
            assert!((j - &fd).amax() <= 1e-6 * fd.amax().max(1.0));
        }
    }

    #[test]
    fn forced_formulations_agree_pointwise() {
        let m = vdp().with_forcing(ForcingProfile::real(&[1.0, 0.4, 0.3]));
        let p = ControlParams::new(200.0, 1.4, 2.0).unwrap();
        let direct = ForcedField::new(m.clone(), p, Formulation::Direct);
        let deforced = ForcedField::new(m.clone(), p, Formulation::DeForced);
        let t = 3.21;
        let s = FullState::new(vec![0.3], Complex64::new(0.8, 0.4));
        let sd = direct.state_from_physical(t, &s);
        let sf = deforced.state_from_physical(t, &s);
        let mut dd = vec![0.0; 3];
        let mut df = vec![0.0; 3];
        direct.rhs(t, &sd, &mut dd);
        deforced.rhs(t, &sf, &mut df);
        assert!((dd[0] - df[0]).abs() < 1e-13);
        // y1' = y' + d/dt [i mu e^{i alpha t} a(beta t)]
        let (a, da) = m.forcing().eval_with_derivative(p.beta() * t);
        let fast = Complex64::from_polar(1.0, p.alpha() * t);
        let corr = Complex64::new(0.0, p.mu())
            * fast
            * (Complex64::new(0.0, p.alpha()) * a + p.beta() * da);
        let expect = Complex64::new(dd[1], dd[2]) + corr;
        assert!((Complex64::new(df[1], df[2]) - expect).norm() < 1e-12);
        assert!((deforced.physical_y(t, &sf) - s.y).norm() < 1e-15);
    }

    #[test]
    fn control_params_derived_values() {
        let p = ControlParams::new(200.0, 1.5, 2.0).unwrap();
        assert_eq!(p.mu(), 2.0 / 200.0);
        assert_eq!(p.nu(), 1.0 / 200.0);
        assert!(ControlParams::new(200.0, 1.5, 0.0).unwrap().detuning(1.4).is_none());
        let q = ControlParams::from_detuning(200.0, 2.0, 1.4, 0.3).unwrap();
        assert!((q.detuning(1.4).unwrap() - 0.3).abs() < 1e-9);
        assert!(ControlParams::new(200.0, 1.5, -1.0).is_err());
    }

    #[test]
    fn vdp_laser_domain() {
        assert!(make_vdp_laser(0.0, 0.2, 1.0, 2.0, 0.5).is_err());
        assert!(make_vdp_laser(1.0, 0.2, -1.0, 2.0, 0.5).is_err());
        assert!(make_vdp_laser(1.0, f64::NAN, 1.0, 2.0, 0.5).is_err());
        assert!(make_vdp_laser(1.0, -0.1, 1.0, 2.0, 0.5).is_ok());
    }
}
