//! Upper and lower ends of the locking interval in beta, by bisection on the
//! averaged equation and on the full forced system.

use modlock::integrate::Tolerances;
use modlock::model::make_vdp_laser;
use modlock::orbit::ShootingOptions;
use modlock::sim::{find_locking_boundary, AveragedProbe, BottleneckProbe, LockingProbe, Reference, Side};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let (alpha, gamma) = (200.0, 2.0);
    let mu = gamma / alpha;
    let tol = 0.002 * (r.g.g_plus() - r.g.g_minus()) * mu * mu;
    let averaged = AveragedProbe::new(r.g.clone(), r.beta0(), mu);
    for side in [Side::Upper, Side::Lower] {
        let full = BottleneckProbe::new(&r, alpha, gamma, side);
        for (name, probe) in [("averaged", &averaged as &dyn LockingProbe), ("full", &full)] {
            let b = find_locking_boundary(probe, r.beta0(), mu, &r.g, side, tol)?;
            println!(
                "{side:?} {name:>8}: beta_c = {:.9}, Delta_c = {:+.5} after {} runs",
                b.beta_c, b.delta_c, b.evaluations
            );
        }
    }
    println!("G- = {:+.5}, G+ = {:+.5}", r.g.g_minus(), r.g.g_plus());
    Ok(())
}
