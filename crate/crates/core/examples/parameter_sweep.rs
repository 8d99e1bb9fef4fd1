//! A 3x3 (beta, gamma) grid at alpha = 100 straddling the locking window,
//! each cell simulated and compared with the region prediction.

use modlock::integrate::Tolerances;
use modlock::locking::RegionSpec;
use modlock::model::make_vdp_laser;
use modlock::orbit::ShootingOptions;
use modlock::sim::{sweep_grid, Reference, RunSettings, SweepSpec};

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let (mid, half) = (0.5 * (r.g.g_plus() + r.g.g_minus()), 0.5 * (r.g.g_plus() - r.g.g_minus()));
    let mu2 = 0.05f64.powi(2);
    let spec = SweepSpec {
        alpha: 100.0,
        beta_range: (r.beta0() + mu2 * (mid - 1.5 * half), r.beta0() + mu2 * (mid + 1.5 * half)),
        gamma_range: (2.5, 5.0),
        n_beta: 3,
        n_gamma: 3,
    };
    let cells = sweep_grid(&r, &spec, &RegionSpec::default_for(&r.g), &RunSettings::default(), |_| 0.0)?;
    println!("{:>12} {:>6} {:>9} {:>14} {:>9}", "beta", "gamma", "Delta", "verdict", "predicted");
    for c in &cells {
        println!(
            "{:>12.8} {:>6.3} {:>9.4} {:>14} {:>9}",
            c.beta,
            c.gamma,
            c.delta,
            c.classification.label(),
            if c.predicted_inside { "inside" } else { "outside" }
        );
    }
    Ok(())
}
