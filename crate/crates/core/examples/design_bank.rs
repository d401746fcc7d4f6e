//! Design the beamformer bank for every spatial pattern of one channel draw.

use spim::channel::{draw_paths, synthesize_all, ScenarioConfig};
use spim::rng;
use spim::spim::{build_bank, DesignOptions};

fn main() -> spim::Result<()> {
    let scenario = ScenarioConfig {
        n_tx: 32,
        n_rx: 4,
        users: 2,
        ..ScenarioConfig::default()
    };
    let paths = draw_paths(&scenario, Some(&[0.5, 0.5]), &mut rng::stream(1, &[0]))?;
    let channels = synthesize_all(&paths, &scenario);
    let bank = build_bank(&scenario, &channels, &DesignOptions::default())?;
    println!("pattern  power   zf residual  cond");
    for p in &bank.patterns {
        println!("{:<8} {:.4}  {:.2e}     {:.2}", p.pattern.to_string(), p.power(), p.zf_residual, p.condition);
    }
    Ok(())
}
