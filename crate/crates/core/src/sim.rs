//! Simulation of the forced system, extraction of the slow relative phase
//! `psi1 = psi - beta t`, locking classification, and quantitative checks of
//! the averaged phase equation `psi1' = mu^2 (G(psi1) - Delta)`.
//!
//! Phases are read off by projecting the reduced state `(x, |y1|)` onto the
//! unforced cycle, where `y1` is the de-forced variable
//! `y + i mu e^{i alpha t} a(beta t)`. The projection is seeded by the previous
//! sample, so `psi_hat` is continuous and unwrapped.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use log::{debug, info, warn};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{NumericSettings, SimSettings};
use crate::error::{Error, Result};
use crate::integrate::{integrate_sampled, StepOptions, Tolerances};
use crate::locking::{
    averaged_equilibria, circular_distance, compute_g, in_locking_region, integrate_averaged_phase,
    transit_time_bound, AveragedPhaseModel, LockingFunction, RegionSpec,
};
use crate::model::{ControlParams, ForcedField, Formulation, FullState, ModelDef};
use crate::orbit::{OrbitAnalysis, PeriodicOrbit, ShootingOptions};
use crate::quadrature::CompositeRule;

/// Classification needs at least this many samples after the transient cut.
pub const MIN_CLASSIFY_SAMPLES: usize = 1000;
pub const DEFAULT_LOCK_BAND: f64 = 0.15;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
pub const DEFAULT_RESIDUAL_BOUND: f64 = 0.05;
/// Default horizons are capped here; longer runs must be requested explicitly.
pub const MAX_DEFAULT_HORIZON: f64 = 2.0e6;
/// Any state component beyond this magnitude counts as blow-up.
const BLOW_UP: f64 = 1e8;

/// Unforced cycle data and locking function shared by all runs of one model.
#[derive(Debug, Clone)]
pub struct Reference {
    pub model: ModelDef,
    pub analysis: OrbitAnalysis,
    pub g: LockingFunction,
}

impl Reference {
    pub fn compute(
        model: &ModelDef,
        shooting: &ShootingOptions,
        tolerances: Tolerances,
        n_grid: usize,
        n_quad: usize,
    ) -> Result<Self> {
        let analysis = OrbitAnalysis::compute(model, shooting, tolerances)?;
        let g = compute_g(
            model,
            &analysis.orbit,
            &analysis.adjoint,
            model.forcing(),
            n_grid,
            n_quad,
        )?;
        Ok(Self {
            model: model.clone(),
            analysis,
            g,
        })
    }

    pub fn orbit(&self) -> &PeriodicOrbit {
        &self.analysis.orbit
    }

    pub fn beta0(&self) -> f64 {
        self.analysis.orbit.beta0()
    }

    /// Averaged phase equation at these parameters; `None` when `gamma = 0`.
    pub fn averaged(&self, params: &ControlParams) -> Option<AveragedPhaseModel> {
        params
            .detuning(self.beta0())
            .map(|d| averaged_equilibria(d, &self.g))
    }
}

/// Point of the unforced torus with modulation phase `psi` and wave phase 0.
pub fn cycle_state(orbit: &PeriodicOrbit, psi: f64) -> FullState {
    let z = orbit.z(psi);
    let n = z.len() - 1;
    FullState::new(z[..n].to_vec(), Complex64::new(z[n], 0.0))
}

/// [`cycle_state`] moved off the cycle by `distance` in the `(x, r)` plane,
/// normal to the cycle.
pub fn displaced_cycle_state(orbit: &PeriodicOrbit, psi: f64, distance: f64) -> FullState {
    let mut z = orbit.z(psi);
    let t = orbit.z_prime(psi);
    let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t: Vec<f64> = t.iter().map(|v| v / tn).collect();
    // coordinate axis least aligned with the tangent, orthogonalized
    let k = (0..t.len())
        .min_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs()))
        .unwrap_or(0);
    let mut v: Vec<f64> = t.iter().map(|tj| -t[k] * tj).collect();
    v[k] += 1.0;
    let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for (zj, vj) in z.iter_mut().zip(&v) {
        *zj += distance * vj / vn;
    }
    let n = z.len() - 1;
    FullState::new(z[..n].to_vec(), Complex64::new(z[n], 0.0))
}

/// Integration settings of a forced run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub tolerances: Tolerances,
    pub formulation: Formulation,
    /// Output samples per modulation period `2π/beta`.
    pub samples_per_period: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::SWEEP,
            formulation: Formulation::DeForced,
            samples_per_period: 32,
        }
    }
}

impl SimOptions {
    pub fn stride(&self, params: &ControlParams) -> f64 {
        params.modulation_period() / self.samples_per_period as f64
    }
}

/// Samples of a forced run at a uniform stride.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub dim_x: usize,
    pub t: Vec<f64>,
    /// Row-major `len × dim_x`.
    pub x: Vec<f64>,
    pub y: Vec<Complex64>,
    /// De-forced `y1`.
    pub y1: Vec<Complex64>,
}

impl Trajectory {
    pub fn new(dim_x: usize) -> Self {
        Self {
            dim_x,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim_x..(i + 1) * self.dim_x]
    }

    pub fn state(&self, i: usize) -> FullState {
        FullState::new(self.x_at(i).to_vec(), self.y[i])
    }

    /// Reduced state `(x, |y1|)`.
    pub fn reduced(&self, i: usize) -> Vec<f64> {
        let mut z = self.x_at(i).to_vec();
        z.push(self.y1[i].norm());
        z
    }

    fn push(&mut self, t: f64, x: &[f64], y: Complex64, y1: Complex64) {
        self.t.push(t);
        self.x.extend_from_slice(x);
        self.y.push(y);
        self.y1.push(y1);
    }
}

/// Streams `(t, x, y, y1)` at the output stride of `opts` over `[0, horizon]`.
/// The sink stops the run early by returning `Ok(false)`.
pub fn simulate_streaming(
    model: &ModelDef,
    params: &ControlParams,
    init: &FullState,
    horizon: f64,
    opts: &SimOptions,
    mut sink: impl FnMut(f64, &[f64], Complex64, Complex64) -> Result<bool>,
) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::ContractViolation(format!(
            "horizon must be positive (got {horizon})"
        )));
    }
    if opts.samples_per_period == 0 {
        return Err(Error::ContractViolation(
            "samples_per_period must be positive".into(),
        ));
    }
    if init.x.len() != model.dim_x() || !init.is_finite() {
        return Err(Error::InvalidState(
            "initial state has the wrong dimension or non-finite entries".into(),
        ));
    }
    let field = ForcedField::new(model.clone(), *params, opts.formulation);
    let s0 = field.state_from_physical(0.0, init);
    let n = model.dim_x();
    integrate_sampled(
        &field,
        &s0,
        (0.0, horizon),
        opts.stride(params),
        StepOptions::new(opts.tolerances),
        |t, s| {
            if s.iter().any(|v| v.abs() > BLOW_UP) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("state exceeded {BLOW_UP:.0e} (blow-up)"),
                });
            }
            sink(t, &s[..n], field.physical_y(t, s), field.deforced_y(t, s))
        },
    )?;
    Ok(())
}

/// Raw trajectory of the forced system from `init` over `[0, horizon]`.
pub fn simulate_full(
    model: &ModelDef,
    params: &ControlParams,
    init: &FullState,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(model.dim_x());
    simulate_streaming(model, params, init, horizon, opts, |t, x, y, y1| {
        traj.push(t, x, y, y1);
        Ok(true)
    })?;
    Ok(traj)
}

/// Continuous phase estimate by projection onto the cycle in `(x, r)` space.
#[derive(Debug, Clone)]
pub struct PhaseTracker<'a> {
    orbit: &'a PeriodicOrbit,
    limit: f64,
    last: Option<(f64, f64)>,
    z0: Vec<f64>,
    dz: Vec<f64>,
}

impl<'a> PhaseTracker<'a> {
    /// States farther than `limit` from the cycle are rejected.
    pub fn new(orbit: &'a PeriodicOrbit, limit: f64) -> Self {
        let d = orbit.dim();
        Self {
            orbit,
            limit,
            last: None,
            z0: vec![0.0; d],
            dz: vec![0.0; d],
        }
    }

    /// Half the smallest amplitude along the cycle.
    pub fn default_limit(orbit: &PeriodicOrbit) -> f64 {
        0.5 * orbit.min_last_component()
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Forgets the previous sample; the next call starts from a global search.
    pub fn reset(&mut self) {
        self.last = None;
    }

    /// Unwrapped phase of the reduced state `z` at time `t`, and its distance
    /// from the cycle.
    pub fn track(&mut self, t: f64, z: &[f64]) -> Result<(f64, f64)> {
        let seed = match self.last {
            Some((t0, p0)) => p0 + self.orbit.beta0() * (t - t0),
            None => self.global_seed(z),
        };
        let mut psi = seed;
        for _ in 0..60 {
            self.orbit.z_into(psi, &mut self.z0);
            self.orbit.z_prime_into(psi, &mut self.dz);
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..z.len() {
                num += self.dz[k] * (self.z0[k] - z[k]);
                den += self.dz[k] * self.dz[k];
            }
            let step = (num / den).clamp(-0.5, 0.5);
            psi -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        // stay on the branch closest to the prediction
        psi = seed + wrap_pi(psi - seed);
        self.orbit.z_into(psi, &mut self.z0);
        let distance = z
            .iter()
            .zip(&self.z0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if !(distance <= self.limit) {
            return Err(Error::LeftNeighborhood {
                t,
                distance,
                limit: self.limit,
            });
        }
        self.last = Some((t, psi));
        Ok((psi, distance))
    }

    fn global_seed(&self, z: &[f64]) -> f64 {
        let n = self.orbit.n_samples();
        let best = (0..n)
            .map(|i| {
                let d: f64 = self
                    .orbit
                    .node(i)
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(i, _)| i);
        TAU * best as f64 / n as f64
    }
}

/// `x` wrapped into `(-π, π]`.
fn wrap_pi(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Phase estimates along a trajectory.
#[derive(Debug, Clone, Default)]
pub struct PhaseSeries {
    pub t: Vec<f64>,
    pub psi_hat: Vec<f64>,
    /// `psi_hat - beta t`.
    pub psi1_hat: Vec<f64>,
    pub max_distance: f64,
}

/// Projects every sample of `traj` onto the cycle.
pub fn extract_phase(
    orbit: &PeriodicOrbit,
    traj: &Trajectory,
    beta: f64,
    limit: f64,
) -> Result<PhaseSeries> {
    let mut tracker = PhaseTracker::new(orbit, limit);
    let mut out = PhaseSeries::default();
    for i in 0..traj.len() {
        let t = traj.t[i];
        let (psi, d) = tracker.track(t, &traj.reduced(i))?;
        out.t.push(t);
        out.psi_hat.push(psi);
        out.psi1_hat.push(psi - beta * t);
        out.max_distance = out.max_distance.max(d);
    }
    Ok(out)
}

/// Verdict on a relative-phase series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    /// The relative phase settled at `theta` in `[0, 2π)`. `stable` records
    /// whether the nearest equilibrium of the averaged equation is stable,
    /// when that is known.
    Locked { theta: f64, stable: Option<bool> },
    /// Slips at mean rate `rate` (rad per time unit).
    Drifting { rate: f64 },
    Indeterminate,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Locked { .. } => "locked",
            Classification::Drifting { .. } => "drifting",
            Classification::Indeterminate => "indeterminate",
        }
    }

    pub fn is_locked(&self) -> bool {
        matches!(self, Classification::Locked { .. })
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            Classification::Locked { theta, .. } => Some(*theta),
            _ => None,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            Classification::Drifting { rate } => Some(*rate),
            _ => None,
        }
    }
}

/// Thresholds of [`classify_locking`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Fraction of the series (from the end) inspected for locking.
    pub tail_fraction: f64,
    /// Largest tail oscillation range of a locked phase.
    pub lock_band: f64,
    /// Largest tail slope of a locked phase.
    pub drift_threshold: f64,
}

/// Locked if the tail stays within `lock_band` with slope at most
/// `drift_threshold`; drifting if the total change reaches `2π` with no
/// segment moving backwards by more than `lock_band`; otherwise indeterminate.
/// Series shorter than [`MIN_CLASSIFY_SAMPLES`] are indeterminate.
pub fn classify_locking(t: &[f64], psi1: &[f64], opts: &ClassifyOptions) -> Classification {
    let n = t.len().min(psi1.len());
    if n < MIN_CLASSIFY_SAMPLES {
        return Classification::Indeterminate;
    }
    let k = ((n as f64 * opts.tail_fraction).ceil() as usize).clamp(2, n);
    let (tt, tp) = (&t[n - k..n], &psi1[n - k..n]);
    let (lo, hi) = tp
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let slope = ls_slope(tt, tp);
    if hi - lo <= opts.lock_band && slope.abs() <= opts.drift_threshold {
        return Classification::Locked {
            theta: circular_mean(tp).rem_euclid(TAU),
            stable: None,
        };
    }
    let total = psi1[n - 1] - psi1[0];
    if total.abs() >= TAU {
        let segments = 8;
        let consistent = (0..segments).all(|s| {
            let a = s * (n - 1) / segments;
            let b = (s + 1) * (n - 1) / segments;
            (psi1[b] - psi1[a]) * total.signum() >= -opts.lock_band
        });
        if consistent {
            return Classification::Drifting {
                rate: total / (t[n - 1] - t[0]),
            };
        }
    }
    Classification::Indeterminate
}

/// Least-squares slope of `y` against `t`.
pub fn ls_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let tm = t[..n].iter().sum::<f64>() / n as f64;
    let ym = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sty, mut stt) = (0.0, 0.0);
    for i in 0..n {
        sty += (t[i] - tm) * (y[i] - ym);
        stt += (t[i] - tm) * (t[i] - tm);
    }
    if stt > 0.0 {
        sty / stt
    } else {
        0.0
    }
}

/// Mean direction of angles.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Averages of consecutive blocks of `block` samples: `(mean t, mean v)`.
pub fn block_means(t: &[f64], v: &[f64], block: usize) -> Vec<(f64, f64)> {
    let block = block.max(1);
    t.chunks_exact(block)
        .zip(v.chunks_exact(block))
        .map(|(tc, vc)| {
            (
                tc.iter().sum::<f64>() / block as f64,
                vc.iter().sum::<f64>() / block as f64,
            )
        })
        .collect()
}

/// Settings of [`simulate`] beyond the integration options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    /// Defaults to [`default_horizon`].
    pub horizon: Option<f64>,
    /// Defaults to [`transient_time`].
    pub transient: Option<f64>,
    pub sim: SimOptions,
    pub lock_band: f64,
    pub tail_fraction: f64,
    /// Defaults to [`default_drift_threshold`].
    pub drift_threshold: Option<f64>,
    /// Bound `eps1` on the locked residual.
    pub residual_bound: f64,
    /// Defaults to [`PhaseTracker::default_limit`].
    pub proj_limit: Option<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            horizon: None,
            transient: None,
            sim: SimOptions::default(),
            lock_band: DEFAULT_LOCK_BAND,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            drift_threshold: None,
            residual_bound: DEFAULT_RESIDUAL_BOUND,
            proj_limit: None,
        }
    }
}

impl RunSettings {
    pub fn from_config(numeric: &NumericSettings, sim: &SimSettings) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            horizon: sim.horizon,
            transient: None,
            sim: SimOptions {
                tolerances: Tolerances::new(numeric.sim_rtol, numeric.sim_atol)?,
                formulation: if sim.direct {
                    Formulation::Direct
                } else {
                    Formulation::DeForced
                },
                samples_per_period: d.sim.samples_per_period,
            },
            lock_band: sim.lock_band.unwrap_or(d.lock_band),
            tail_fraction: sim.tail_fraction.unwrap_or(d.tail_fraction),
            drift_threshold: sim.drift_threshold,
            residual_bound: sim.residual_bound.unwrap_or(d.residual_bound),
            proj_limit: None,
        })
    }
}

/// `|G'|` used for contraction-time estimates, floored at 5% of the half-range
/// of `G` so that runs next to the tongue boundary stay bounded.
fn contraction_slope(g: &LockingFunction, avg: &AveragedPhaseModel) -> f64 {
    let floor = 0.05 * 0.5 * (g.g_plus() - g.g_minus());
    avg.equilibria
        .iter()
        .map(|e| e.slope.abs())
        .fold(f64::INFINITY, f64::min)
        .max(floor)
        .max(f64::MIN_POSITIVE)
}

/// Time discarded before classification. In the locking regime this is
/// `max(20/(mu^2 min|G'|), 50 modulation periods)` with the minimum over the
/// equilibria of the averaged equation; otherwise 50 modulation periods.
pub fn transient_time(reference: &Reference, params: &ControlParams) -> f64 {
    let base = 50.0 * params.modulation_period();
    match reference.averaged(params) {
        Some(avg) if !avg.is_drifting() => {
            let mu2 = params.mu() * params.mu();
            base.max(20.0 / (mu2 * contraction_slope(&reference.g, &avg)))
        }
        _ => base,
    }
}

/// Time for the averaged phase to slip once, `∫ dpsi / |psi1'|`, or infinity
/// when the averaged equation has equilibria.
pub fn slip_time(reference: &Reference, params: &ControlParams) -> f64 {
    let offset = params.beta() - reference.beta0();
    let mu2 = params.mu() * params.mu();
    let g = &reference.g;
    if mu2 > 0.0 {
        let delta = offset / mu2;
        if delta > g.g_minus() && delta < g.g_plus() {
            return f64::INFINITY;
        }
    } else if offset == 0.0 {
        return f64::INFINITY;
    }
    CompositeRule::periodic(64).integrate(|psi| 1.0 / (mu2 * g.value(psi) - offset).abs())
}

/// Transient plus a tail long enough to see settling or two slips, at least
/// 100 cycle periods, capped at [`MAX_DEFAULT_HORIZON`].
pub fn default_horizon(reference: &Reference, params: &ControlParams) -> f64 {
    let cut = transient_time(reference, params);
    let slip = slip_time(reference, params);
    let tail = if slip.is_finite() {
        cut.max((2.0 * slip).min(20.0 * cut))
    } else {
        cut
    };
    let h = (cut + tail).max(100.0 * reference.orbit().period());
    if h > MAX_DEFAULT_HORIZON {
        warn!("default horizon {h:.3e} capped at {MAX_DEFAULT_HORIZON:.1e}");
    }
    h.min(MAX_DEFAULT_HORIZON)
}

/// `0.1 max(|beta - beta0|, mu^2 (G+ - G-)/2)`.
pub fn default_drift_threshold(reference: &Reference, params: &ControlParams) -> f64 {
    let mu2 = params.mu() * params.mu();
    let g = &reference.g;
    0.1 * (params.beta() - reference.beta0())
        .abs()
        .max(mu2 * 0.5 * (g.g_plus() - g.g_minus()))
}

/// Outcome of one forced run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub params: ControlParams,
    pub horizon: f64,
    /// Samples before this time are ignored by the classifier.
    pub transient: f64,
    pub trajectory: Trajectory,
    pub psi_hat: Vec<f64>,
    pub psi1_hat: Vec<f64>,
    pub classification: Classification,
    /// Locked offset `sigma`, equal to the locked `theta`.
    pub sigma_hat: Option<f64>,
    /// Sup over the tail of `|x - x0(beta t + sigma)| + ||y| - r0(beta t + sigma)|`.
    pub residual: Option<f64>,
    pub residual_bound: f64,
    pub drift_threshold: f64,
    /// Largest distance of the reduced state from the cycle.
    pub max_distance: f64,
    /// Index of the first tail sample.
    pub tail_start: usize,
}

impl SimResult {
    /// Whether the locked residual respects the configured bound.
    pub fn residual_ok(&self) -> Option<bool> {
        self.residual.map(|r| r <= self.residual_bound)
    }

    /// Per-sample distance to the torus point at the locked offset, or at the
    /// current relative phase when not locked.
    pub fn residual_series(&self, orbit: &PeriodicOrbit) -> Vec<f64> {
        (0..self.trajectory.len())
            .map(|i| {
                let sigma = self.sigma_hat.unwrap_or(self.psi1_hat[i]);
                torus_residual(orbit, &self.trajectory, i, self.params.beta(), sigma)
            })
            .collect()
    }
}

/// `|x - x0(beta t + sigma)| + ||y| - r0(beta t + sigma)|` at sample `i`.
fn torus_residual(orbit: &PeriodicOrbit, traj: &Trajectory, i: usize, beta: f64, sigma: f64) -> f64 {
    let z0 = orbit.z(beta * traj.t[i] + sigma);
    let n = traj.dim_x;
    let dx = traj
        .x_at(i)
        .iter()
        .zip(&z0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    dx + (traj.y[i].norm() - z0[n]).abs()
}

/// Runs the forced system from `init`, tracks the relative phase and
/// classifies the outcome.
///
/// The locked verdict is phase-based; the residual is reported alongside
/// (see [`SimResult::residual_ok`]).
pub fn simulate(
    reference: &Reference,
    params: &ControlParams,
    init: &FullState,
    settings: &RunSettings,
) -> Result<SimResult> {
    let orbit = reference.orbit();
    let horizon = settings
        .horizon
        .unwrap_or_else(|| default_horizon(reference, params));
    let min_horizon = 100.0 * orbit.period();
    if horizon < min_horizon * (1.0 - 1e-12) {
        return Err(Error::ContractViolation(format!(
            "horizon {horizon} is shorter than 100 cycle periods ({min_horizon:.4})"
        )));
    }
    let cut = settings
        .transient
        .unwrap_or_else(|| transient_time(reference, params));
    if cut >= horizon {
        warn!("transient {cut:.3e} covers the whole horizon {horizon:.3e}; verdict will be indeterminate");
    }
    let drift_threshold = settings
        .drift_threshold
        .unwrap_or_else(|| default_drift_threshold(reference, params));
    let limit = settings
        .proj_limit
        .unwrap_or_else(|| PhaseTracker::default_limit(orbit));
    debug!(
        "simulate: alpha={} beta={} gamma={} horizon={horizon:.4e} transient={cut:.4e}",
        params.alpha(),
        params.beta(),
        params.gamma()
    );

    let n = reference.model.dim_x();
    let mut tracker = PhaseTracker::new(orbit, limit);
    let mut traj = Trajectory::new(n);
    let (mut psi_hat, mut psi1_hat) = (Vec::new(), Vec::new());
    let mut max_distance: f64 = 0.0;
    let mut z = vec![0.0; n + 1];
    let beta = params.beta();
    simulate_streaming(
        &reference.model,
        params,
        init,
        horizon,
        &settings.sim,
        |t, x, y, y1| {
            z[..n].copy_from_slice(x);
            z[n] = y1.norm();
            let (psi, d) = tracker.track(t, &z)?;
            max_distance = max_distance.max(d);
            traj.push(t, x, y, y1);
            psi_hat.push(psi);
            psi1_hat.push(psi - beta * t);
            Ok(true)
        },
    )?;

    let start = traj.t.partition_point(|&t| t < cut);
    let opts = ClassifyOptions {
        tail_fraction: settings.tail_fraction,
        lock_band: settings.lock_band,
        drift_threshold,
    };
    let mut classification = classify_locking(&traj.t[start..], &psi1_hat[start..], &opts);
    let m = traj.len() - start;
    let tail_start = traj.len() - ((m as f64 * settings.tail_fraction).ceil() as usize).min(m);

    let (mut sigma_hat, mut residual) = (None, None);
    if let Classification::Locked { theta, stable } = &mut classification {
        if let Some(avg) = reference.averaged(params) {
            *stable = avg
                .equilibria
                .iter()
                .min_by(|a, b| {
                    circular_distance(a.theta, *theta).total_cmp(&circular_distance(b.theta, *theta))
                })
                .map(|e| e.is_stable());
        }
        sigma_hat = Some(*theta);
        residual = Some(
            (tail_start..traj.len())
                .map(|i| torus_residual(orbit, &traj, i, beta, *theta))
                .fold(0.0, f64::max),
        );
    }
    if let (Some(r), true) = (residual, classification.is_locked()) {
        if r > settings.residual_bound {
            warn!(
                "locked run has residual {r:.3e} above the bound {:.3e}",
                settings.residual_bound
            );
        }
    }
    Ok(SimResult {
        params: *params,
        horizon,
        transient: cut,
        trajectory: traj,
        psi_hat,
        psi1_hat,
        classification,
        sigma_hat,
        residual,
        residual_bound: settings.residual_bound,
        drift_threshold,
        max_distance,
        tail_start,
    })
}

/// Summary of one probe run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    /// Initial modulation phase (equal to the initial relative phase).
    pub psi0: f64,
    /// Normal offset of the initial state from the cycle.
    pub displacement: f64,
    pub classification: Classification,
    pub residual: Option<f64>,
    /// Distance from the initial phase to the nearest unstable equilibrium.
    pub distance_to_unstable: Option<f64>,
}

/// Runs `n_probe` probes started on the cycle at equally spaced phases, plus
/// one started off the cycle by half the projection limit.
pub fn run_probes(
    reference: &Reference,
    params: &ControlParams,
    n_probe: usize,
    settings: &RunSettings,
) -> Result<Vec<ProbeOutcome>> {
    if n_probe == 0 {
        return Err(Error::ContractViolation("n_probe must be positive".into()));
    }
    let orbit = reference.orbit();
    let limit = settings
        .proj_limit
        .unwrap_or_else(|| PhaseTracker::default_limit(orbit));
    let avg = reference.averaged(params);
    let mut starts: Vec<(f64, f64)> = (0..n_probe)
        .map(|k| (TAU * k as f64 / n_probe as f64, 0.0))
        .collect();
    starts.push((PI / n_probe as f64, 0.5 * limit));
    starts
        .par_iter()
        .map(|&(psi0, disp)| {
            let init = if disp > 0.0 {
                displaced_cycle_state(orbit, psi0, disp)
            } else {
                cycle_state(orbit, psi0)
            };
            let run = simulate(reference, params, &init, settings)?;
            let distance_to_unstable = avg.as_ref().and_then(|a| {
                a.unstable()
                    .map(|e| circular_distance(psi0, e.theta))
                    .min_by(f64::total_cmp)
            });
            info!(
                "probe psi0={psi0:.4} displacement={disp:.3}: {}",
                run.classification.label()
            );
            Ok(ProbeOutcome {
                psi0,
                displacement: disp,
                classification: run.classification,
                residual: run.residual,
                distance_to_unstable,
            })
        })
        .collect()
}

/// Measured drift of one probe against the averaged prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftProbe {
    pub psi0: f64,
    pub windows: usize,
    pub mean_abs_deviation: f64,
    pub mean_abs_prediction: f64,
    pub max_relative_deviation: f64,
}

/// Gain of the measured drift on the shape `G(psi1) - Delta`; ideally `mu^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingCheck {
    pub gamma: f64,
    pub beta: f64,
    pub gain: f64,
    /// `gain(gamma/2) / gain(gamma)`; ideally 1/4.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub mu: f64,
    pub nu: f64,
    pub delta: Option<f64>,
    pub probes: Vec<DriftProbe>,
    /// `sum |measured - predicted| / sum |predicted|` over all used windows.
    pub mean_relative_deviation: f64,
    pub max_relative_deviation: f64,
    pub windows: usize,
    /// Least-squares gain of the measured drift on `G(psi1) - Delta`.
    pub gain: Option<f64>,
    pub scaling: Option<ScalingCheck>,
}

struct DriftSamples {
    /// `(psi1, measured, predicted)` per window.
    windows: Vec<(f64, f64, f64)>,
}

/// Compares the measured slow drift with `mu^2 (G(psi1) - Delta)`.
///
/// The drift is the centred difference of relative-phase means over
/// consecutive modulation periods, which removes ripple that is periodic in
/// the forcing phase. Windows where the prediction is below 10% of its
/// largest magnitude are skipped, as are the first 20 periods of every probe.
/// With `scaling`, the probes are repeated at `gamma/2` with
/// `beta - beta0` divided by four.
pub fn validate_averaged_drift(
    reference: &Reference,
    params: &ControlParams,
    n_probe: usize,
    sim: &SimOptions,
    scaling: bool,
) -> Result<DriftReport> {
    let (mu, nu) = (params.mu(), params.nu());
    if mu > 0.1 || nu > 1e-2 {
        return Err(Error::RegimeViolation(format!(
            "mu = {mu:.4e} (limit 0.1), nu = {nu:.4e} (limit 1e-2)"
        )));
    }
    if n_probe == 0 {
        return Err(Error::ContractViolation("n_probe must be positive".into()));
    }
    let first = drift_runs(reference, params, n_probe, sim)?;
    let mut report = drift_report(reference, params, &first);
    if scaling && mu > 0.0 {
        let beta0 = reference.beta0();
        let half = ControlParams::new(
            params.alpha(),
            beta0 + 0.25 * (params.beta() - beta0),
            0.5 * params.gamma(),
        )?;
        let second = drift_runs(reference, &half, n_probe, sim)?;
        let gain = drift_gain(reference, &half, &second);
        if let (Some(g1), Some(g2)) = (report.gain, gain) {
            report.scaling = Some(ScalingCheck {
                gamma: half.gamma(),
                beta: half.beta(),
                gain: g2,
                ratio: g2 / g1,
            });
        }
    }
    Ok(report)
}

fn drift_runs(
    reference: &Reference,
    params: &ControlParams,
    n_probe: usize,
    sim: &SimOptions,
) -> Result<Vec<(f64, DriftSamples)>> {
    let orbit = reference.orbit();
    let beta0 = reference.beta0();
    let offset = params.beta() - beta0;
    let mu2 = params.mu() * params.mu();
    let g = &reference.g;
    let period = params.modulation_period();
    let skip = 20.0 * period;
    let max_pred = g
        .samples()
        .iter()
        .map(|s| (mu2 * s.1 - offset).abs())
        .fold(0.0, f64::max);
    let limit = PhaseTracker::default_limit(orbit);
    let avg = reference.averaged(params);
    let psi0s: Vec<f64> = (0..n_probe).map(|k| TAU * k as f64 / n_probe as f64).collect();
    psi0s
        .par_iter()
        .map(|&psi0| {
            let horizon = drift_horizon(reference, params, avg.as_ref(), psi0, max_pred, skip)?;
            let mut tracker = PhaseTracker::new(orbit, limit);
            let n = reference.model.dim_x();
            let mut z = vec![0.0; n + 1];
            let (mut ts, mut ps) = (Vec::new(), Vec::new());
            simulate_streaming(
                &reference.model,
                params,
                &cycle_state(orbit, psi0),
                horizon,
                sim,
                |t, x, _y, y1| {
                    z[..n].copy_from_slice(x);
                    z[n] = y1.norm();
                    let (psi, _) = tracker.track(t, &z)?;
                    ts.push(t);
                    ps.push(psi - params.beta() * t);
                    Ok(true)
                },
            )?;
            let means = block_means(&ts, &ps, sim.samples_per_period);
            let windows = means
                .windows(3)
                .filter(|w| w[1].0 >= skip)
                .filter_map(|w| {
                    let measured = (w[2].1 - w[0].1) / (w[2].0 - w[0].0);
                    let predicted = mu2 * g.value(w[1].1) - offset;
                    (predicted.abs() >= 0.1 * max_pred).then_some((w[1].1, measured, predicted))
                })
                .collect();
            Ok((psi0, DriftSamples { windows }))
        })
        .collect()
}

/// Long enough for the averaged phase to come within 0.2 rad of a stable
/// equilibrium, at most `10/max|psi1'|` past the skipped start.
fn drift_horizon(
    reference: &Reference,
    params: &ControlParams,
    avg: Option<&AveragedPhaseModel>,
    psi0: f64,
    max_pred: f64,
    skip: f64,
) -> Result<f64> {
    let floor = 100.0 * reference.orbit().period();
    if !(max_pred > 0.0) {
        return Ok(floor.max(skip + 200.0 * params.modulation_period()));
    }
    let cap = skip + 10.0 / max_pred;
    let Some(avg) = avg.filter(|a| !a.is_drifting()) else {
        return Ok(cap.max(floor));
    };
    let dense = integrate_averaged_phase(avg, params.mu(), psi0, cap, Tolerances::ANALYSIS)?;
    let steps = 2000;
    let arrival = (0..=steps)
        .map(|k| cap * k as f64 / steps as f64)
        .find(|&t| {
            avg.distance_to_stable(dense.eval(t)[0])
                .is_some_and(|(d, _)| d < 0.2)
        })
        .unwrap_or(cap);
    Ok((arrival + skip).min(cap).max(floor))
}

fn drift_report(
    reference: &Reference,
    params: &ControlParams,
    runs: &[(f64, DriftSamples)],
) -> DriftReport {
    let mut probes = Vec::new();
    let (mut dev, mut pred, mut max_rel, mut count) = (0.0, 0.0, 0.0f64, 0usize);
    for (psi0, s) in runs {
        let w = &s.windows;
        let d: f64 = w.iter().map(|(_, m, p)| (m - p).abs()).sum();
        let p: f64 = w.iter().map(|(_, _, p)| p.abs()).sum();
        let mr = w
            .iter()
            .map(|(_, m, p)| (m - p).abs() / p.abs())
            .fold(0.0, f64::max);
        let k = w.len().max(1) as f64;
        probes.push(DriftProbe {
            psi0: *psi0,
            windows: w.len(),
            mean_abs_deviation: d / k,
            mean_abs_prediction: p / k,
            max_relative_deviation: mr,
        });
        dev += d;
        pred += p;
        max_rel = max_rel.max(mr);
        count += w.len();
    }
    DriftReport {
        mu: params.mu(),
        nu: params.nu(),
        delta: params.detuning(reference.beta0()),
        probes,
        mean_relative_deviation: if pred > 0.0 { dev / pred } else { f64::NAN },
        max_relative_deviation: max_rel,
        windows: count,
        gain: drift_gain(reference, params, runs),
        scaling: None,
    }
}

fn drift_gain(
    reference: &Reference,
    params: &ControlParams,
    runs: &[(f64, DriftSamples)],
) -> Option<f64> {
    let delta = params.detuning(reference.beta0())?;
    let (mut num, mut den) = (0.0, 0.0);
    for (_, s) in runs {
        for &(psi, m, _) in &s.windows {
            let shape = reference.g.value(psi) - delta;
            num += m * shape;
            den += shape * shape;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Which end of the locking interval in `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Upper,
    Lower,
}

/// Locked/drifting verdict as a function of `beta`.
pub trait LockingProbe: Sync {
    fn classify(&self, beta: f64) -> Result<Classification>;
}

/// Classifies runs of the averaged phase equation.
#[derive(Debug, Clone)]
pub struct AveragedProbe {
    pub g: LockingFunction,
    pub beta0: f64,
    pub mu: f64,
    pub psi0: f64,
    pub horizon: f64,
    pub samples: usize,
    pub classify: ClassifyOptions,
}

impl AveragedProbe {
    /// Horizon of `2·10^4 / mu^2` sampled at 20000 points, threshold `1e-3 mu^2`.
    pub fn new(g: LockingFunction, beta0: f64, mu: f64) -> Self {
        let mu2 = mu * mu;
        Self {
            g,
            beta0,
            mu,
            psi0: 0.0,
            horizon: 2.0e4 / mu2,
            samples: 20_000,
            classify: ClassifyOptions {
                tail_fraction: DEFAULT_TAIL_FRACTION,
                lock_band: DEFAULT_LOCK_BAND,
                drift_threshold: 1e-3 * mu2,
            },
        }
    }
}

impl LockingProbe for AveragedProbe {
    fn classify(&self, beta: f64) -> Result<Classification> {
        let delta = (beta - self.beta0) / (self.mu * self.mu);
        let model = averaged_equilibria(delta, &self.g);
        let dense =
            integrate_averaged_phase(&model, self.mu, self.psi0, self.horizon, Tolerances::ANALYSIS)?;
        let n = self.samples.max(2);
        let t: Vec<f64> = (0..n)
            .map(|k| self.horizon * k as f64 / (n - 1) as f64)
            .collect();
        let psi: Vec<f64> = t.iter().map(|&s| dense.eval(s)[0]).collect();
        Ok(classify_locking(&t, &psi, &self.classify))
    }
}

/// Full-system verdict from the direction of slow drift at the extremum of
/// `G` that bounds `side`.
///
/// Near a saddle-node of the phase equation the locked and drifting regimes
/// differ only in the sign of `G(psi_c) - Delta` at the extremum `psi_c`: a
/// run started there moves towards the stable equilibrium when one exists and
/// away from it otherwise. The sign is read from the least-squares slope of
/// period means of the relative phase, after skipping the relaxation onto the
/// forced torus. This needs a fixed number of periods regardless of how close
/// `beta` is to the boundary.
#[derive(Debug, Clone)]
pub struct BottleneckProbe<'a> {
    pub reference: &'a Reference,
    pub alpha: f64,
    pub gamma: f64,
    pub side: Side,
    /// Modulation periods used for the slope.
    pub periods: usize,
    /// Modulation periods skipped at the start.
    pub skip_periods: usize,
    pub sim: SimOptions,
}

impl<'a> BottleneckProbe<'a> {
    pub fn new(reference: &'a Reference, alpha: f64, gamma: f64, side: Side) -> Self {
        Self {
            reference,
            alpha,
            gamma,
            side,
            periods: 1500,
            skip_periods: 30,
            sim: SimOptions::default(),
        }
    }

    /// Critical point of `G` at which the saddle-node for `side` occurs.
    pub fn critical_phase(&self) -> f64 {
        let points = self.reference.g.singular_points();
        let pick = match self.side {
            Side::Upper => points.iter().max_by(|a, b| a.value.total_cmp(&b.value)),
            Side::Lower => points.iter().min_by(|a, b| a.value.total_cmp(&b.value)),
        };
        pick.map_or(0.0, |s| s.psi)
    }
}

impl LockingProbe for BottleneckProbe<'_> {
    fn classify(&self, beta: f64) -> Result<Classification> {
        let params = ControlParams::new(self.alpha, beta, self.gamma)?;
        let reference = self.reference;
        let orbit = reference.orbit();
        let psi_c = self.critical_phase();
        let horizon = (self.skip_periods + self.periods) as f64 * params.modulation_period();
        let skip = self.skip_periods as f64 * params.modulation_period();
        let mut tracker = PhaseTracker::new(orbit, PhaseTracker::default_limit(orbit));
        let n = reference.model.dim_x();
        let mut z = vec![0.0; n + 1];
        let (mut ts, mut ps) = (Vec::new(), Vec::new());
        simulate_streaming(
            &reference.model,
            &params,
            &cycle_state(orbit, psi_c),
            horizon,
            &self.sim,
            |t, x, _y, y1| {
                z[..n].copy_from_slice(x);
                z[n] = y1.norm();
                let (psi, _) = tracker.track(t, &z)?;
                if t >= skip {
                    ts.push(t);
                    ps.push(psi - beta * t);
                }
                Ok(true)
            },
        )?;
        let means = block_means(&ts, &ps, self.sim.samples_per_period);
        let (mt, mp): (Vec<f64>, Vec<f64>) = means.into_iter().unzip();
        let slope = ls_slope(&mt, &mp);
        let toward_stable = match self.side {
            Side::Upper => slope > 0.0,
            Side::Lower => slope < 0.0,
        };
        debug!("bottleneck probe beta={beta:.12}: slope {slope:.3e}");
        Ok(if toward_stable {
            Classification::Locked {
                theta: mp.last().copied().unwrap_or(psi_c).rem_euclid(TAU),
                stable: None,
            }
        } else {
            Classification::Drifting { rate: slope }
        })
    }
}

/// Result of [`find_locking_boundary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryResult {
    pub side: Side,
    pub beta_c: f64,
    /// `(beta_c - beta0)/mu^2`.
    pub delta_c: f64,
    /// Final bracket `(locked end, drifting end)`.
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Bisection in `beta` between a locked point at the middle of `[G-, G+]`
/// and a drifting point 1.5 times as far out as the predicted boundary.
pub fn find_locking_boundary(
    probe: &dyn LockingProbe,
    beta0: f64,
    mu: f64,
    g: &LockingFunction,
    side: Side,
    bisection_tol: f64,
) -> Result<BoundaryResult> {
    if !(mu > 0.0 && bisection_tol > 0.0) {
        return Err(Error::ContractViolation(
            "mu and bisection_tol must be positive".into(),
        ));
    }
    let mu2 = mu * mu;
    let mid = 0.5 * (g.g_minus() + g.g_plus());
    let edge = match side {
        Side::Upper => g.g_plus(),
        Side::Lower => g.g_minus(),
    };
    let mut locked_end = beta0 + mu2 * mid;
    let mut drifting_end = beta0 + mu2 * (mid + 1.5 * (edge - mid));
    let near = probe.classify(locked_end)?;
    let far = probe.classify(drifting_end)?;
    let mut evaluations = 2;
    if !near.is_locked() || !matches!(far, Classification::Drifting { .. }) {
        return Err(Error::BracketFailure {
            lower: format!("{} at beta = {locked_end}", near.label()),
            upper: format!("{} at beta = {drifting_end}", far.label()),
        });
    }
    while (drifting_end - locked_end).abs() > bisection_tol {
        let m = 0.5 * (locked_end + drifting_end);
        let verdict = probe.classify(m)?;
        evaluations += 1;
        if verdict == Classification::Indeterminate {
            warn!("indeterminate verdict at beta = {m}; counted as not locked");
        }
        if verdict.is_locked() {
            locked_end = m;
        } else {
            drifting_end = m;
        }
    }
    let beta_c = 0.5 * (locked_end + drifting_end);
    Ok(BoundaryResult {
        side,
        beta_c,
        delta_c: (beta_c - beta0) / mu2,
        bracket: (locked_end, drifting_end),
        evaluations,
    })
}

/// Measured passage from `theta_u + delta` to `theta_s - delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitMeasurement {
    pub start: f64,
    pub target: f64,
    /// `None` when the target was not reached within the horizon.
    pub time: Option<f64>,
    pub bound: f64,
}

/// Starts next to an unstable equilibrium and times the passage to the
/// neighbourhood of the next stable one, against the bound with `m0 = 0`.
pub fn measure_transit(
    reference: &Reference,
    params: &ControlParams,
    delta: f64,
    sim: &SimOptions,
) -> Result<TransitMeasurement> {
    let avg = reference
        .averaged(params)
        .filter(|a| !a.is_drifting())
        .ok_or_else(|| {
            Error::ContractViolation("transit needs equilibria of the averaged equation".into())
        })?;
    let eq = &avg.equilibria;
    let iu = eq
        .iter()
        .position(|e| !e.is_stable())
        .ok_or_else(|| Error::ContractViolation("no unstable equilibrium".into()))?;
    // to the right of an unstable equilibrium G > Delta, so the phase increases
    let u = eq[iu].theta;
    let mut s = eq[(iu + 1) % eq.len()].theta;
    if s <= u {
        s += TAU;
    }
    let (start, target) = (u + delta, s - delta);
    let bound = transit_time_bound(&reference.g, avg.delta, delta, params.mu(), 0.0)?;
    let orbit = reference.orbit();
    let mut tracker = PhaseTracker::new(orbit, PhaseTracker::default_limit(orbit));
    let n = reference.model.dim_x();
    let mut z = vec![0.0; n + 1];
    let mut prev: Option<(f64, f64)> = None;
    let mut time = None;
    let horizon = (2.0 * bound).max(100.0 * orbit.period());
    simulate_streaming(
        &reference.model,
        params,
        &cycle_state(orbit, start),
        horizon,
        sim,
        |t, x, _y, y1| {
            z[..n].copy_from_slice(x);
            z[n] = y1.norm();
            let (psi, _) = tracker.track(t, &z)?;
            let psi1 = psi - params.beta() * t;
            if psi1 >= target {
                time = Some(match prev {
                    Some((t0, p0)) => t0 + (target - p0) / (psi1 - p0) * (t - t0),
                    None => t,
                });
                return Ok(false);
            }
            prev = Some((t, psi1));
            Ok(true)
        },
    )?;
    Ok(TransitMeasurement {
        start,
        target,
        time,
        bound,
    })
}

/// Grid of a sweep in the `(beta, gamma)` plane at fixed `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub alpha: f64,
    pub beta_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub n_beta: usize,
    pub n_gamma: usize,
}

/// Largest grid dimension accepted by [`sweep_grid`].
pub const MAX_SWEEP_DIM: usize = 64;

impl SweepSpec {
    fn axis(range: (f64, f64), n: usize, i: usize) -> f64 {
        if n <= 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_beta * self.n_gamma
    }

    /// `(beta, gamma)` of cell `index`; beta varies fastest.
    pub fn cell(&self, index: usize) -> (f64, f64) {
        let (ib, ig) = (index % self.n_beta, index / self.n_beta);
        (
            Self::axis(self.beta_range, self.n_beta, ib),
            Self::axis(self.gamma_range, self.n_gamma, ig),
        )
    }
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    /// `NaN` at zero amplitude.
    pub delta: f64,
    pub classification: Classification,
    pub theta_lock: Option<f64>,
    pub drift_rate: Option<f64>,
    /// Prediction of the locking-region conditions.
    pub predicted_inside: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Simulates and classifies every cell of `spec`; cells run concurrently and
/// come back in index order. A failing cell records its error and is marked
/// indeterminate.
pub fn sweep_grid(
    reference: &Reference,
    spec: &SweepSpec,
    region: &RegionSpec,
    settings: &RunSettings,
    init_phase: impl Fn(usize) -> f64 + Sync,
) -> Result<Vec<SweepCell>> {
    let dims_ok = (1..=MAX_SWEEP_DIM).contains(&spec.n_beta)
        && (1..=MAX_SWEEP_DIM).contains(&spec.n_gamma);
    if !dims_ok {
        return Err(Error::ContractViolation(format!(
            "grid {}x{} outside 1..={MAX_SWEEP_DIM}",
            spec.n_beta, spec.n_gamma
        )));
    }
    let beta0 = reference.beta0();
    let cells = (0..spec.n_cells())
        .into_par_iter()
        .map(|index| {
            let (beta, gamma) = spec.cell(index);
            let start = Instant::now();
            let outcome = ControlParams::new(spec.alpha, beta, gamma).and_then(|params| {
                let init = cycle_state(reference.orbit(), init_phase(index));
                let run = simulate(reference, &params, &init, settings)?;
                let inside = in_locking_region(&params, beta0, &reference.g, region).is_inside();
                Ok((params, run.classification, inside))
            });
            let wall_time = start.elapsed().as_secs_f64();
            let mu = gamma / spec.alpha;
            let delta = if mu > 0.0 {
                (beta - beta0) / (mu * mu)
            } else {
                f64::NAN
            };
            let mut cell = SweepCell {
                index,
                alpha: spec.alpha,
                beta,
                gamma,
                mu,
                delta,
                classification: Classification::Indeterminate,
                theta_lock: None,
                drift_rate: None,
                predicted_inside: false,
                wall_time,
                error: None,
            };
            match outcome {
                Ok((params, class, inside)) => {
                    cell.classification = class;
                    cell.theta_lock = class.theta();
                    cell.drift_rate = class.rate();
                    cell.predicted_inside = inside;
                    debug!("cell {index} ({:?}): {}", params, class.label());
                }
                Err(e) => {
                    warn!("cell {index} failed: {e}");
                    cell.error = Some(e.to_string());
                }
            }
            cell
        })
        .collect();
    Ok(cells)
}
