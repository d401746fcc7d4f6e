//! Spectral efficiency versus the first path gain, and where SPIM stops
//! beating the single-path design.

use spim::config::{Preset, RunConfig};
use spim::metrics::{crossing, curve, sweep, Method, SweepKind};

fn main() -> spim::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.experiment.trials = 40;
    cfg.experiment.methods = vec![Method::SpimMo, Method::MmWave];
    let rows = sweep(&cfg.scenario, &cfg.design, &cfg.sweep_spec(SweepKind::Gamma1), None)?;
    for r in &rows {
        println!("{:.2} {:<8} {:.3}", r.x, r.method, r.mean_se);
    }
    match crossing(&curve(&rows, Method::SpimMo), &curve(&rows, Method::MmWave)) {
        Some(x) => println!("curves cross at gamma1 = {x:.3}"),
        None => println!("no crossing on this grid"),
    }
    Ok(())
}
