//! Transmission overhead of federated and centralized training at full scale.

use spim::config::{Preset, RunConfig};
use spim::federated::{overhead_table, write_overhead_csv};
use spim::neural::param_count;

fn main() -> spim::Result<()> {
    let cfg = RunConfig::preset(Preset::Paper);
    let arch = cfg.arch();
    println!("P = {} with dropout, {} without", param_count(&arch, 0.5), param_count(&arch, 1.0));
    let users = cfg.scenario.users as u64;
    let samples = users * cfg.dataset.samples_per_user() as u64;
    write_overhead_csv(&overhead_table(&arch, cfg.rounds as u64, users, samples), std::io::stdout())
}
