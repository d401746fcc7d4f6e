//! Fit a unit-modulus precoder to the optimal unconstrained one and show the
//! objective falling across alternating-minimization passes.

use spim::channel::{draw_paths, synthesize_channel, ScenarioConfig};
use spim::manifold::{alt_min_precoder, optimal_precoders, AltMinConfig};
use spim::rng;

fn main() -> spim::Result<()> {
    let scenario = ScenarioConfig {
        n_tx: 32,
        n_rx: 4,
        users: 1,
        ..ScenarioConfig::default()
    };
    let paths = draw_paths(&scenario, Some(&[0.5, 0.5]), &mut rng::stream(3, &[0]))?;
    let h = synthesize_channel(&paths, 0, &scenario);
    let target = optimal_precoders(&h, 2)?;
    let fit = alt_min_precoder(&target, 2, &AltMinConfig::default())?;
    for (k, f) in fit.history.iter().enumerate() {
        println!("pass {k:2}: {f:.3e}");
    }
    println!("final residual {:.3e}", fit.residual);
    Ok(())
}
