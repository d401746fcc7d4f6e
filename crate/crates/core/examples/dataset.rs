//! Generate a small local dataset for one user, save it, and read it back.

use spim::config::{Preset, RunConfig};
use spim::dataset::{generate_local, Dataset};

fn main() -> spim::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.dataset.realizations = 5;
    let ds = generate_local(0, &cfg.scenario, &cfg.design, &cfg.dataset, cfg.seed)?;
    let path = std::env::temp_dir().join("spim_user_0.spimds");
    ds.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back, ds);
    println!(
        "{} samples, input {} values, label {} values, {} bytes on disk",
        back.len(),
        back.input_len(),
        back.label_len(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
