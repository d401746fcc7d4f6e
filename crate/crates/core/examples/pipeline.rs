//! The full command pipeline at a reduced desk scale: design, dataset,
//! federated training and evaluation, with artifacts in a temp directory.

use spim::commands::{self, TrainMode};
use spim::config::{Preset, RunConfig};

fn main() -> spim::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.dataset.realizations = 10;
    cfg.rounds = 10;
    cfg.eval.trials = 20;
    let out = std::env::temp_dir().join("spim_pipeline");
    commands::design(&cfg, &out)?;
    commands::dataset(&cfg, &out)?;
    let fl = commands::train(&cfg, TrainMode::Fl, &out)?;
    println!("trained {} rounds, final val mse {:.5}", fl.log.len(), fl.log.last().map_or(f64::NAN, |r| r.val_mse));
    for r in commands::eval(&cfg, &out.join(commands::model_file_name(TrainMode::Fl)), &out)? {
        println!("{:<8} {:.3} bits/s/Hz ({:.0}% of spim-mo)", r.method, r.mean_se, 100.0 * r.ratio);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
