//! Measured slow drift of the relative phase against the averaged prediction
//! at alpha = 200, gamma = 2, and its scaling when gamma is halved.
//! Takes a few minutes.

use modlock::integrate::Tolerances;
use modlock::model::{make_vdp_laser, ControlParams};
use modlock::orbit::ShootingOptions;
use modlock::sim::{validate_averaged_drift, Reference, SimOptions};

fn main() -> modlock::Result<()> {
    env_logger::init();
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let params = ControlParams::new(200.0, r.beta0(), 2.0)?;
    let report = validate_averaged_drift(&r, &params, 4, &SimOptions::default(), true)?;
    for p in &report.probes {
        println!(
            "psi0 = {:.4}: {} windows, mean |measured - predicted| = {:.3e}, mean |predicted| = {:.3e}",
            p.psi0, p.windows, p.mean_abs_deviation, p.mean_abs_prediction
        );
    }
    println!("mean relative deviation {:.4}", report.mean_relative_deviation);
    if let (Some(gain), Some(s)) = (report.gain, report.scaling) {
        println!("gain {gain:.4e} (mu^2 = {:.1e}); at gamma = {}: ratio {:.4}", report.mu * report.mu, s.gamma, s.ratio);
    }
    Ok(())
}
