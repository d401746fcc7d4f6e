//! Spectral efficiency of the optimized design and both baselines over SNR.

use spim::config::{Preset, RunConfig};
use spim::metrics::{sweep, write_sweep_csv, SweepKind};

fn main() -> spim::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.experiment.trials = 40;
    let rows = sweep(&cfg.scenario, &cfg.design, &cfg.sweep_spec(SweepKind::Snr), None)?;
    write_sweep_csv(&rows, std::io::stdout())
}
