//! Equilibria of the averaged phase equation, a run of it, and the transit
//! time bound between neighbouring equilibria.

use modlock::integrate::Tolerances;
use modlock::locking::{averaged_equilibria, integrate_averaged_phase, transit_time_bound};
use modlock::model::make_vdp_laser;
use modlock::orbit::ShootingOptions;
use modlock::sim::Reference;

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let (mu, delta) = (0.05, 0.5 * (r.g.g_minus() + r.g.g_plus()));
    let avg = averaged_equilibria(delta, &r.g);
    for e in &avg.equilibria {
        let kind = if e.is_stable() { "stable" } else { "unstable" };
        println!("theta = {:.6}, G'(theta) = {:+.4} ({kind})", e.theta, e.slope);
    }
    let bound = transit_time_bound(&r.g, delta, 0.2, mu, 0.0)?;
    let start = avg.unstable().next().map_or(0.0, |e| e.theta) + 0.2;
    let run = integrate_averaged_phase(&avg, mu, start, bound, Tolerances::ANALYSIS)?;
    println!("transit bound with delta = 0.2: {bound:.1}");
    println!("phase after the bound: {:.6} (started at {start:.6})", run.final_state()[0]);
    Ok(())
}
