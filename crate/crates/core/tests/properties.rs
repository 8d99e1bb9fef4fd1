//! Structural invariants checked on random inputs.

use modlock::config::{parse_config, BetaSpec};
use modlock::interp::PeriodicHermite;
use modlock::locking::{
    averaged_equilibria, circular_distance, in_locking_region, integrate_averaged_phase,
    transit_time_bound, LockingFunction, RegionSpec,
};
use modlock::model::{
    remove_forcing_oscillation, restore_forcing_oscillation, ControlParams, ForcingProfile,
};
use modlock::integrate::Tolerances;
use modlock::sim::{classify_locking, Classification, ClassifyOptions};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn harmonics(max: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..=max)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
}

/// Locking functions whose leading harmonic is not negligible.
fn locking_function() -> impl Strategy<Value = LockingFunction> {
    (-2.0..2.0f64, harmonics(3))
        .prop_filter("nonflat", |(_, h)| h[0].norm() > 0.2)
        .prop_map(|(mean, h)| LockingFunction::from_harmonics(mean, h, 512))
}

fn opts() -> ClassifyOptions {
    ClassifyOptions {
        tail_fraction: 0.5,
        lock_band: 0.15,
        drift_threshold: 1e-4,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_relative_phase_is_locked(theta in -20.0..20.0f64, ripple in 0.0..0.05f64) {
        let t: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let psi: Vec<f64> = t.iter().map(|s| theta + ripple * (0.7 * s).sin()).collect();
        match classify_locking(&t, &psi, &opts()) {
            Classification::Locked { theta: got, .. } => {
                prop_assert!(circular_distance(got, theta) < ripple + 1e-9);
                prop_assert!((0.0..TAU).contains(&got));
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn steady_slip_is_drifting(rate in prop_oneof![-0.1..-0.01f64, 0.01..0.1f64], start in 0.0..TAU) {
        let t: Vec<f64> = (0..2000).map(|i| i as f64 * 0.5).collect();
        let psi: Vec<f64> = t.iter().map(|s| start + rate * s).collect();
        match classify_locking(&t, &psi, &opts()) {
            Classification::Drifting { rate: got } => prop_assert!((got - rate).abs() < 1e-9),
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn circular_distance_is_a_metric_on_the_circle(a in -50.0..50.0f64, b in -50.0..50.0f64, k in -5i32..5) {
        let d = circular_distance(a, b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
        prop_assert!((d - circular_distance(b, a)).abs() < 1e-9);
        prop_assert!((d - circular_distance(a + k as f64 * TAU, b)).abs() < 1e-9);
    }

    #[test]
    fn g_range_brackets_mean_and_singular_values(g in locking_function()) {
        prop_assert!(g.g_minus() <= g.mean() && g.mean() <= g.g_plus());
        let s = g.singular_points();
        prop_assert!(s.len() >= 2 && s.len() % 2 == 0);
        for p in s {
            prop_assert!(g.derivative(p.psi).abs() < 1e-8 * (1.0 + g.max_abs()));
            prop_assert!(p.value >= g.g_minus() - 1e-12 && p.value <= g.g_plus() + 1e-12);
        }
    }

    #[test]
    fn equilibria_alternate_in_stability(g in locking_function(), u in 0.02..0.98f64) {
        let delta = g.g_minus() + u * (g.g_plus() - g.g_minus());
        let avg = averaged_equilibria(delta, &g);
        prop_assume!(!avg.ill_conditioned);
        let eq = &avg.equilibria;
        prop_assert!(!eq.is_empty() && eq.len() % 2 == 0);
        for (i, e) in eq.iter().enumerate() {
            prop_assert!((g.value(e.theta) - delta).abs() < 1e-8);
            let next = &eq[(i + 1) % eq.len()];
            prop_assert!(e.is_stable() != next.is_stable());
        }
    }

    #[test]
    fn detuning_outside_the_range_has_no_equilibria(g in locking_function(), d in 0.01..3.0f64) {
        prop_assert!(averaged_equilibria(g.g_plus() + d, &g).is_drifting());
        prop_assert!(averaged_equilibria(g.g_minus() - d, &g).is_drifting());
    }

    #[test]
    fn shift_moves_the_phase_origin(g in locking_function(), c in -7.0..7.0f64, psi in 0.0..TAU) {
        prop_assert!((g.shifted(c).value(psi) - g.value(psi + c)).abs() < 1e-10);
    }

    #[test]
    fn transit_bound_dominates_the_averaged_passage(u in 0.2..0.8f64, mu in 0.01..0.1f64) {
        let g = LockingFunction::sine(512);
        let level = -1.0 + 2.0 * u;
        let delta = 0.2;
        let avg = averaged_equilibria(level, &g);
        let un = avg.unstable().next().unwrap().theta;
        let st = avg.stable().next().unwrap().theta;
        let target = if st > un { st } else { st + TAU } - delta;
        let bound = transit_time_bound(&g, level, delta, mu, 0.0).unwrap();
        let sol = integrate_averaged_phase(&avg, mu, un + delta, bound, Tolerances::ANALYSIS).unwrap();
        prop_assert!(sol.final_state()[0] >= target);
    }

    #[test]
    fn intensity_harmonics_reproduce_intensity(a in harmonics(4), tau in 0.0..TAU) {
        let f = ForcingProfile::new(a.clone()).unwrap();
        let (v, _) = ForcingProfile::intensity_from_harmonics(&f.intensity_harmonics(), tau);
        prop_assert!((v - f.intensity(tau)).abs() < 1e-12);
        let power: f64 = a.iter().map(|c| c.norm_sqr()).sum();
        prop_assert!((f.mean_intensity() - power).abs() < 1e-12);
    }

    #[test]
    fn forcing_oscillation_roundtrip(a in harmonics(3), t in 0.0..100.0f64, re in -2.0..2.0f64, im in -2.0..2.0f64) {
        let f = ForcingProfile::new(a).unwrap();
        let p = ControlParams::new(150.0, 1.3, 3.0).unwrap();
        let y = Complex64::new(re, im);
        let back = restore_forcing_oscillation(&p, &f, t, remove_forcing_oscillation(&p, &f, t, y));
        prop_assert!((back - y).norm() < 1e-12);
    }

    #[test]
    fn detuning_roundtrip(alpha in 50.0..500.0f64, gamma in 0.1..10.0f64, delta in -3.0..3.0f64) {
        let p = ControlParams::from_detuning(alpha, gamma, 1.38, delta).unwrap();
        prop_assert!((p.detuning(1.38).unwrap() - delta).abs() < 1e-6 * (1.0 + delta.abs()));
        prop_assert!((p.mu() - gamma / alpha).abs() < 1e-15);
    }

    #[test]
    fn region_verdict_matches_its_conditions(
        g in locking_function(),
        alpha in 20.0..400.0f64,
        mu in 0.0001..0.2f64,
        u in -0.3..1.3f64,
    ) {
        let spec = RegionSpec::default_for(&g);
        let gamma = mu * alpha;
        let delta = g.g_minus() + u * (g.g_plus() - g.g_minus());
        let p = ControlParams::from_detuning(alpha, gamma, 1.38, delta).unwrap();
        let d = p.detuning(1.38).unwrap();
        let amplitude = 0.5 / alpha < gamma && gamma < 0.1 * alpha;
        let window = g.g_minus() < d && d < g.g_plus();
        let margin = g.singular_values().iter().all(|s| (d - s).abs() > spec.margin);
        let inside = in_locking_region(&p, 1.38, &g, &spec).is_inside();
        prop_assert_eq!(inside, amplitude && window && margin);
    }

    #[test]
    fn hermite_interpolant_is_periodic(k in 1usize..5, psi in 0.0..TAU) {
        let n = 64;
        let curve = PeriodicHermite::sample(1, n, |s, v, d| {
            v[0] = (k as f64 * s).sin();
            d[0] = k as f64 * (k as f64 * s).cos();
        });
        let a = curve.eval(psi)[0];
        prop_assert!((a - curve.eval(psi + TAU)[0]).abs() < 1e-12);
        prop_assert!((a - (k as f64 * psi).sin()).abs() < 1e-4);
    }

    #[test]
    fn control_values_survive_parsing(alpha in 1.0..1000.0f64, gamma in 0.0..100.0f64, beta in 0.1..5.0f64) {
        let text = format!(
            "model.family = vdp_laser\ncontrol.alpha = {alpha:e}\ncontrol.gamma = {gamma:e}\ncontrol.beta = {beta:e}\n"
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.control.alpha, alpha);
        prop_assert_eq!(cfg.control.gamma, gamma);
        prop_assert_eq!(cfg.control.beta, BetaSpec::Absolute(beta));
    }
}
