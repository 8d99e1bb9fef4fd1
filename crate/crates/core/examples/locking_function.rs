//! Locking function of the vdp-laser model for the one- and two-harmonic forcing profiles.

use modlock::integrate::Tolerances;
use modlock::locking::{compute_g, default_nondeg_tol, find_singular_points};
use modlock::model::{make_vdp_laser, ForcingProfile};
use modlock::orbit::{OrbitAnalysis, ShootingOptions};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let a = OrbitAnalysis::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS)?;
    println!("T = {:.10}, beta0 = {:.10}", a.orbit.period(), a.orbit.beta0());
    for (name, forcing) in [
        ("1 + 0.5 e^{i tau}", ForcingProfile::real(&[1.0, 0.5])),
        ("1 + 0.4 e^{i tau} + 0.3 e^{2i tau}", ForcingProfile::real(&[1.0, 0.4, 0.3])),
    ] {
        let g = compute_g(&model, &a.orbit, &a.adjoint, &forcing, 512, 64)?;
        let s = find_singular_points(&g, default_nondeg_tol(&g))?;
        println!("a(tau) = {name}");
        println!("  G- = {:.6}, G+ = {:.6}, mean = {:.6}", g.g_minus(), g.g_plus(), g.mean());
        for p in s {
            println!(
                "  critical point psi = {:.6}: G = {:.6}, G'' = {:+.4}",
                p.psi, p.value, p.second_derivative
            );
        }
    }
    Ok(())
}
