use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spim::commands::{self, TrainMode};
use spim::config::{Preset, RunConfig};
use spim::metrics::SweepKind;
use spim::{Error, Result};

#[derive(Parser)]
#[command(name = "spim", version, about = "Multi-user SPIM hybrid beamforming simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing fields take the preset's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: PresetArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Snr,
    Gamma1,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fl,
    Cl,
}

#[derive(Subcommand)]
enum Command {
    /// Design the beamformer bank for one channel draw.
    Design,
    /// Monte Carlo spectral-efficiency sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Trained checkpoint, needed when `spim-fl` is among the methods.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate every user's local dataset.
    Dataset,
    /// Train the network federated (fl) or centralized (cl).
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Transmission overhead of FL and CL.
    Overhead,
    /// Spectral efficiency of a trained model against the optimized design.
    Eval {
        /// Defaults to `<out>/model_fl.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let preset = match common.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, preset)?,
        None => RunConfig::preset(preset),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = cfg.out.clone();
    pool.install(|| match cli.command {
        Command::Design => {
            let rows = commands::design(&cfg, &out)?;
            let ok = rows.iter().filter(|r| r.power_ok && r.zf_ok).count();
            println!("designed {} patterns, {ok} pass the power and ZF checks", rows.len());
            Ok(())
        }
        Command::Sweep { kind, model } => {
            let kind = match kind {
                KindArg::Snr => SweepKind::Snr,
                KindArg::Gamma1 => SweepKind::Gamma1,
            };
            let rows = commands::sweep(&cfg, kind, &out, model.as_deref())?;
            for r in rows {
                println!("{:>6.2} {:<8} {:.4} ± {:.4}", r.x, r.method, r.mean_se, r.std_se);
            }
            Ok(())
        }
        Command::Dataset => {
            for path in commands::dataset(&cfg, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Train { mode } => {
            let mode = match mode {
                ModeArg::Fl => TrainMode::Fl,
                ModeArg::Cl => TrainMode::Cl,
            };
            let outcome = commands::train(&cfg, mode, &out)?;
            if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
                println!("validation mse {:.6} -> {:.6}", first.val_mse, last.val_mse);
            }
            println!("{} symbols, {} blocks", outcome.ledger.total(), outcome.ledger.blocks());
            Ok(())
        }
        Command::Overhead => {
            for r in commands::overhead(&cfg, &out)? {
                println!("{:<10} {:>14} symbols {:>10} blocks", r.scheme.as_str(), r.total(), r.blocks());
            }
            Ok(())
        }
        Command::Eval { model } => {
            let model = model.unwrap_or_else(|| out.join(commands::model_file_name(TrainMode::Fl)));
            for r in commands::eval(&cfg, &model, &out)? {
                println!("{:<8} {:.4} ± {:.4} ({:.1}%)", r.method, r.mean_se, r.std_se, 100.0 * r.ratio);
            }
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
