//! Draw one multi-user geometry and print each user's paths and channel norm.

use spim::channel::{draw_paths, partition_sectors, synthesize_all, ScenarioConfig};
use spim::rng;

fn main() -> spim::Result<()> {
    let scenario = ScenarioConfig {
        n_tx: 32,
        n_rx: 4,
        users: 2,
        ..ScenarioConfig::default()
    };
    let (aoa, _) = partition_sectors(&scenario);
    let paths = draw_paths(&scenario, None, &mut rng::stream(7, &[0]))?;
    let channels = synthesize_all(&paths, &scenario);
    for (u, (h, sector)) in channels.iter().zip(&aoa).enumerate() {
        println!("user {u}: sector [{:.1}, {:.1}) deg, ||H||_F = {:.3}", sector.lo, sector.hi, h.norm());
        for p in &paths.users[u] {
            println!("  aoa {:6.2}  aod {:6.2}  gain {:.3}", p.aoa, p.aod, p.gain);
        }
    }
    Ok(())
}
