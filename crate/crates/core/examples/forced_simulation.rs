//! Forced runs inside and outside the locking window, classified from the
//! relative modulation phase.

use modlock::integrate::Tolerances;
use modlock::model::{make_vdp_laser, ControlParams};
use modlock::orbit::ShootingOptions;
use modlock::sim::{cycle_state, simulate, Classification, Reference, RunSettings};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let mid = 0.5 * (r.g.g_minus() + r.g.g_plus());
    for delta in [mid, r.g.g_plus() + 1.0] {
        let params = ControlParams::from_detuning(100.0, 5.0, r.beta0(), delta)?;
        let run = simulate(&r, &params, &cycle_state(r.orbit(), 1.0), &RunSettings::default())?;
        print!(
            "Delta = {delta:+.4} (beta = {:.8}), horizon {:.0}, transient {:.0}: ",
            params.beta(),
            run.horizon,
            run.transient
        );
        match run.classification {
            Classification::Locked { theta, stable } => println!(
                "locked at theta = {theta:.4} (stable equilibrium nearby: {stable:?}), residual {:.4}",
                run.residual.unwrap_or(f64::NAN)
            ),
            Classification::Drifting { rate } => println!("drifting at {rate:.3e} rad per unit time"),
            Classification::Indeterminate => println!("indeterminate"),
        }
    }
    Ok(())
}
