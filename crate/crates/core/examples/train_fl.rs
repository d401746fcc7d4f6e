//! Federated training with dropout on desk-scale datasets, then the
//! centralized baseline on the pooled data.

use spim::config::{Preset, RunConfig};
use spim::dataset::{generate_local, Dataset};
use spim::federated::{train_cl, train_fl, ClConfig, FlConfig};

fn main() -> spim::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.dataset.realizations = 10;
    let data: Vec<Dataset> = (0..cfg.scenario.users)
        .map(|u| generate_local(u, &cfg.scenario, &cfg.design, &cfg.dataset, cfg.seed))
        .collect::<spim::Result<_>>()?;
    let arch = cfg.arch();
    let fl = train_fl(
        &arch,
        &data,
        &FlConfig {
            rounds: 20,
            train: cfg.train.clone(),
            validation_fraction: 0.2,
            seed: cfg.seed,
            record_trajectory: false,
        },
    )?;
    for r in fl.log.iter().step_by(5) {
        println!("round {:2}: val mse {:.5}, {} blocks so far", r.round, r.val_mse, r.cum_blocks);
    }
    let cl = train_cl(
        &arch,
        &Dataset::pooled(&data)?,
        &ClConfig {
            epochs: 5,
            train: cfg.train.clone(),
            validation_fraction: 0.2,
            seed: cfg.seed,
            record_trajectory: false,
            users: cfg.scenario.users,
        },
    )?;
    println!("fl: {} symbols; cl: {} symbols", fl.ledger.total(), cl.ledger.total());
    println!("cl val mse after 5 epochs: {:.5}", cl.log.last().map_or(f64::NAN, |r| r.val_mse));
    Ok(())
}
