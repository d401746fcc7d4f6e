//! The pipeline steps behind each CLI subcommand. Every command writes its
//! artifacts plus a `manifest.json` into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::channel::{draw_paths, synthesize_all};
use crate::config::RunConfig;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::federated::{self, ClConfig, FlConfig, ModelPredictor, TrainOutcome};
use crate::linalg::CMatrix;
use crate::metrics::{self, Method, SweepKind, SweepRow, SweepSpec};
use crate::neural;
use crate::rng::{self, label};
use crate::spim::{self, BeamformerBank};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DATASET_DIR: &str = "dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Fl,
    Cl,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fl" => Ok(TrainMode::Fl),
            "cl" => Ok(TrainMode::Cl),
            other => Err(Error::Config(format!("unknown training mode {other:?} (fl or cl)"))),
        }
    }
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Fl => "fl",
            TrainMode::Cl => "cl",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[PathBuf]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: VERSION,
        seed: cfg.seed,
        config_sha256: cfg.digest(),
        outputs: outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
    };
    let name = format!("manifest_{}.json", command.replace(' ', "_"));
    fs::write(dir.join(name), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Complex matrix as `[[re, im], ...]` rows.
fn matrix_json(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub pattern: String,
    pub index: usize,
    pub power: f64,
    pub zf_residual: f64,
    pub condition: f64,
    pub power_ok: bool,
    pub zf_ok: bool,
}

pub fn design_rows(bank: &BeamformerBank, users: usize) -> Vec<DesignRow> {
    bank.patterns
        .iter()
        .map(|p| DesignRow {
            pattern: p.pattern.to_string(),
            index: p.pattern.index,
            power: p.power(),
            zf_residual: p.zf_residual,
            condition: p.condition,
            power_ok: (p.power() - users as f64).abs() <= 1e-8,
            zf_ok: p.zf_residual <= 1e-8,
        })
        .collect()
}

/// Design the bank for one channel draw (trial 0 of the configured seed,
/// with the SNR sweep's gains) and write `bank.json` and `design.csv`.
pub fn design(cfg: &RunConfig, out: &Path) -> Result<Vec<DesignRow>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let scenario = &cfg.scenario;
    let key = [label::TRIAL, 0];
    let paths = draw_paths(scenario, Some(&cfg.experiment.gains), &mut rng::stream(cfg.seed, &key))?;
    let channels = synthesize_all(&paths, scenario);
    let bank = spim::build_bank(scenario, &channels, &cfg.design.with_seed(rng::derive(cfg.seed, &key)))?;
    let rows = design_rows(&bank, scenario.users);

    let patterns: Vec<serde_json::Value> = bank
        .patterns
        .iter()
        .map(|p| {
            serde_json::json!({
                "pattern": p.pattern.to_string(),
                "index": p.pattern.index,
                "analog": matrix_json(&p.analog),
                "baseband": matrix_json(&p.baseband),
                "combiners": p.combiners.iter().map(|w| w.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let bank_path = out.join("bank.json");
    let doc = serde_json::json!({ "excluded": bank.excluded, "patterns": patterns });
    fs::write(&bank_path, serde_json::to_string(&doc)? + "\n")?;

    let csv_path = out.join("design.csv");
    let mut w = csv::Writer::from_writer(csv_file(&csv_path)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_manifest(out, "design", cfg, &[bank_path, csv_path])?;
    Ok(rows)
}

fn load_predictor(cfg: &RunConfig, model: &Path) -> Result<ModelPredictor> {
    let (m, _) = neural::load_checkpoint(model)
        .map_err(|e| Error::Config(format!("cannot load model {}: {e}", model.display())))?;
    if m.arch != cfg.arch() {
        return Err(Error::Config(format!(
            "model {} was trained for a different architecture",
            model.display()
        )));
    }
    Ok(ModelPredictor {
        model: m,
        paths: cfg.scenario.paths,
        input_snr_db: cfg.eval.input_snr_db,
        seed: cfg.seed,
    })
}

pub fn sweep_file_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Snr => "sweep_snr.csv",
        SweepKind::Gamma1 => "sweep_gamma1.csv",
    }
}

/// Run a sweep and write its CSV. `model` is needed only when the method
/// list includes `spim-fl`.
pub fn sweep(cfg: &RunConfig, kind: SweepKind, out: &Path, model: Option<&Path>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let spec = cfg.sweep_spec(kind);
    let predictor = match (spec.methods.contains(&Method::SpimFl), model) {
        (true, Some(p)) => Some(load_predictor(cfg, p)?),
        (true, None) => return Err(Error::Config("spim-fl in methods needs --model".into())),
        (false, _) => None,
    };
    let rows = metrics::sweep(
        &cfg.scenario,
        &cfg.design,
        &spec,
        predictor.as_ref().map(|p| p as &dyn metrics::BeamPredictor),
    )?;
    let path = out.join(sweep_file_name(kind));
    metrics::write_sweep_csv(&rows, csv_file(&path)?)?;
    write_manifest(out, &format!("sweep {}", kind_name(kind)), cfg, &[path])?;
    Ok(rows)
}

fn kind_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Snr => "snr",
        SweepKind::Gamma1 => "gamma1",
    }
}

/// Generate every user's local dataset into `out/dataset/user_{u}.spimds`.
pub fn dataset(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = out.join(DATASET_DIR);
    ensure_dir(&dir)?;
    let mut files = Vec::with_capacity(cfg.scenario.users);
    for u in 0..cfg.scenario.users {
        let ds = dataset::generate_local(u, &cfg.scenario, &cfg.design, &cfg.dataset, cfg.seed)?;
        let path = dir.join(dataset::user_file_name(u));
        ds.save(&path)?;
        log::info!("user {u}: {} samples -> {}", ds.len(), path.display());
        files.push(path);
    }
    write_manifest(out, "dataset", cfg, &files)?;
    Ok(files)
}

/// Load `user_0 .. user_{U-1}` from `dir`. The user a file belongs to is
/// taken from its name.
pub fn load_user_datasets(cfg: &RunConfig, dir: &Path) -> Result<Vec<Dataset>> {
    (0..cfg.scenario.users)
        .map(|u| {
            let path = dir.join(dataset::user_file_name(u));
            if !path.exists() {
                return Err(Error::Config(format!("missing dataset {}", path.display())));
            }
            let ds = Dataset::load(&path)?;
            if ds.n_r != cfg.scenario.n_rx
                || ds.n_t != cfg.scenario.n_tx
                || ds.users != cfg.scenario.users
                || ds.planes != cfg.dataset.input_planes
            {
                return Err(Error::Config(format!("{} does not match the configured scenario", path.display())));
            }
            Ok(ds)
        })
        .collect()
}

pub fn model_file_name(mode: TrainMode) -> String {
    format!("model_{}.ckpt", mode.as_str())
}

/// Train from the datasets in `out/dataset` and write the checkpoint and
/// the per-round log.
pub fn train(cfg: &RunConfig, mode: TrainMode, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure_dir(out)?;
    let datasets = load_user_datasets(cfg, &out.join(DATASET_DIR))?;
    let arch = cfg.arch();
    let outcome = match mode {
        TrainMode::Fl => federated::train_fl(
            &arch,
            &datasets,
            &FlConfig {
                rounds: cfg.rounds,
                train: cfg.train.clone(),
                validation_fraction: cfg.dataset.validation_fraction,
                seed: cfg.seed,
                record_trajectory: false,
            },
        )?,
        TrainMode::Cl => federated::train_cl(
            &arch,
            &Dataset::pooled(&datasets)?,
            &ClConfig {
                epochs: cfg.epochs,
                train: cfg.train.clone(),
                validation_fraction: cfg.dataset.validation_fraction,
                seed: cfg.seed,
                record_trajectory: false,
                users: cfg.scenario.users,
            },
        )?,
    };
    let model_path = out.join(model_file_name(mode));
    neural::save_checkpoint(&outcome.model, &outcome.velocity, &model_path)?;
    let log_path = out.join(format!("training_{}.csv", mode.as_str()));
    federated::write_training_log(&outcome.log, csv_file(&log_path)?)?;
    write_manifest(out, &format!("train {}", mode.as_str()), cfg, &[model_path, log_path])?;
    Ok(outcome)
}

/// Overhead of FL with dropout, FL without dropout and CL for the
/// configured sizes.
pub fn overhead(cfg: &RunConfig, out: &Path) -> Result<Vec<federated::OverheadLedger>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let users = cfg.scenario.users as u64;
    let samples = users * cfg.dataset.samples_per_user() as u64;
    let rows = federated::overhead_table(&cfg.arch(), cfg.rounds as u64, users, samples);
    let path = out.join("overhead.csv");
    federated::write_overhead_csv(&rows, csv_file(&path)?)?;
    write_manifest(out, "overhead", cfg, &[path])?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: &'static str,
    pub mean_se: f64,
    pub std_se: f64,
    pub trials: usize,
    /// Mean SE relative to `spim-mo`.
    pub ratio: f64,
}

/// Rates of the trained model against the optimized design on fresh
/// channel draws at the evaluation SNR.
pub fn eval(cfg: &RunConfig, model: &Path, out: &Path) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let predictor = load_predictor(cfg, model)?;
    let spec = SweepSpec {
        kind: SweepKind::Snr,
        grid: vec![cfg.eval.snr_db],
        trials: cfg.eval.trials,
        methods: vec![Method::SpimMo, Method::SpimFl],
        gains: cfg.dataset.gains.clone().unwrap_or_else(|| cfg.experiment.gains.clone()),
        snr_db: cfg.eval.snr_db,
        include_index_bits: cfg.experiment.include_index_bits,
        seed: cfg.seed.wrapping_add(cfg.eval.seed_offset),
    };
    let rows = metrics::sweep(&cfg.scenario, &cfg.design, &spec, Some(&predictor))?;
    let reference = rows[0].mean_se;
    let table: Vec<EvalRow> = rows
        .iter()
        .map(|r| EvalRow {
            method: r.method,
            mean_se: r.mean_se,
            std_se: r.std_se,
            trials: r.trials,
            ratio: r.mean_se / reference,
        })
        .collect();
    let path = out.join("eval.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path)?);
    for r in &table {
        w.serialize(r)?;
    }
    w.flush()?;
    write_manifest(out, "eval", cfg, &[path])?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.scenario.n_tx = 8;
        cfg.scenario.n_rx = 2;
        cfg.dataset.realizations = 3;
        cfg.dataset.copies = 2;
        cfg.network.filters = 2;
        cfg.network.fc_units = 4;
        cfg.network.pool_x = 2;
        cfg.experiment.trials = 3;
        cfg.experiment.snr_db = vec![10.0];
        cfg.eval.trials = 2;
        cfg.rounds = 3;
        cfg.epochs = 2;
        cfg
    }

    #[test]
    fn single_path_gives_one_pattern() {
        let mut cfg = small();
        cfg.scenario.paths = 1;
        cfg.experiment.gains = vec![1.0];
        cfg.dataset.gains = Some(vec![1.0]);
        let dir = tempfile::tempdir().unwrap();
        let rows = design(&cfg, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].power_ok && rows[0].zf_ok);
    }

    #[test]
    fn pipeline_runs_end_to_end() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let rows = design(&cfg, out).unwrap();
        assert!(rows.iter().all(|r| r.power_ok && r.zf_ok));
        dataset(&cfg, out).unwrap();
        train(&cfg, TrainMode::Fl, out).unwrap();
        train(&cfg, TrainMode::Cl, out).unwrap();
        let table = eval(&cfg, &out.join(model_file_name(TrainMode::Fl)), out).unwrap();
        assert_eq!(table[0].ratio, 1.0);
        assert!(table[1].mean_se.is_finite());
        let oh = overhead(&cfg, out).unwrap();
        assert_eq!(oh.len(), 3);
        for name in ["design.csv", "training_fl.csv", "eval.csv", "overhead.csv", "manifest_eval.json"] {
            assert!(out.join(name).exists(), "{name}");
        }
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = train(&small(), TrainMode::Fl, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
