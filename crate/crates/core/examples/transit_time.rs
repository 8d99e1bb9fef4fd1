//! Time the forced system needs to pass from an unstable to the next stable
//! relative-phase equilibrium, against the averaged bound.

use modlock::integrate::Tolerances;
use modlock::model::{make_vdp_laser, ControlParams};
use modlock::orbit::ShootingOptions;
use modlock::sim::{measure_transit, Reference, SimOptions};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let mid = 0.5 * (r.g.g_minus() + r.g.g_plus());
    let params = ControlParams::from_detuning(200.0, 4.0, r.beta0(), mid)?;
    let m = measure_transit(&r, &params, 0.2, &SimOptions::default())?;
    println!("from {:.4} to {:.4}", m.start, m.target);
    match m.time {
        Some(t) => println!("measured {t:.1}, bound {:.1} (ratio {:.3})", m.bound, t / m.bound),
        None => println!("target not reached; bound {:.1}", m.bound),
    }
    Ok(())
}
