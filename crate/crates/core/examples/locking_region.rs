//! Locking-region test for a few parameter points and the alpha = const
//! cross-section of the region.

use modlock::integrate::Tolerances;
use modlock::locking::{boundary_curves, in_locking_region, RegionSpec, RegionVerdict, Section};
use modlock::model::{make_vdp_laser, ControlParams};
use modlock::orbit::ShootingOptions;
use modlock::sim::Reference;

fn main() -> modlock::Result<()> {
    let model = make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5)?;
    let r = Reference::compute(&model, &ShootingOptions::default(), Tolerances::ANALYSIS, 512, 64)?;
    let spec = RegionSpec::default_for(&r.g);
    println!("G- = {:.6}, G+ = {:.6}, margin = {:.4}", r.g.g_minus(), r.g.g_plus(), spec.margin);

    for (alpha, gamma, delta) in [(200.0, 2.0, -0.9), (200.0, 2.0, 0.5), (200.0, 2.0, 0.14), (200.0, 0.001, -0.9)] {
        let params = ControlParams::from_detuning(alpha, gamma, r.beta0(), delta)?;
        match in_locking_region(&params, r.beta0(), &r.g, &spec) {
            RegionVerdict::Inside => println!("alpha {alpha}, gamma {gamma}, Delta {delta:+.2}: inside"),
            RegionVerdict::Outside(v) => {
                println!("alpha {alpha}, gamma {gamma}, Delta {delta:+.2}: outside");
                for reason in v {
                    println!("    {reason}");
                }
            }
        }
    }

    let section = Section::AlphaConst { alpha: 200.0, beta0: r.beta0() };
    let curves = boundary_curves(&r.g, &spec, section, 5);
    for b in curves.curves.iter().chain(&curves.lines) {
        let pts: Vec<String> = b.points.iter().map(|(x, y)| format!("({x:.5}, {y:.3})")).collect();
        println!("{:>16}: {}", b.label, pts.join(" "));
    }
    Ok(())
}
