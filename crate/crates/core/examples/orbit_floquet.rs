//! Periodic orbit, Floquet multipliers, adjoint normalization and wave frequency
//! of the default vdp-laser model.

use modlock::integrate::Tolerances;
use modlock::model::make_vdp_laser;
use modlock::orbit::{rank_condition_margin, OrbitAnalysis, ShootingOptions};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let a = OrbitAnalysis::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS)?;
    let o = &a.orbit;
    println!("period T         = {:.12}", o.period());
    println!("beta0            = {:.12}", o.beta0());
    println!("closure residual = {:.3e}", o.closure_residual());
    println!("anchor z0(0)     = {:?}", o.z(0.0));
    for (k, m) in a.floquet.multipliers.iter().enumerate() {
        println!("multiplier {k}     = {:.12} {:+.3e}i (|.| = {:.12})", m.re, m.im, m.norm());
    }
    println!("hyperbolic       = {}", a.floquet.hyperbolic);
    println!("p^T z0' - 1      = {:.3e}", a.adjoint.normalization_residual());
    println!("alpha0           = {:.12}", a.offsets.alpha0);
    println!("rank margin      = {:.6}", rank_condition_margin(o, &a.offsets, 64));
    Ok(())
}
