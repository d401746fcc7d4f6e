//! Run configuration: one JSON document with defaults for every field.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ScenarioConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::metrics::{Method, SweepKind, SweepSpec};
use crate::neural::{NetworkArch, TrainConfig};
use crate::spim::DesignOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk or paper)"))),
        }
    }
}

/// Layer sizes; input and output sizes follow from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel_x: usize,
    pub kernel_y: usize,
    pub fc_units: usize,
    pub dropout: f64,
    pub pool_x: usize,
    pub pool_y: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            conv_layers: 3,
            filters: 128,
            kernel_x: 3,
            kernel_y: 3,
            fc_units: 1024,
            dropout: 0.5,
            pool_x: 3,
            pool_y: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Grid of the SNR sweep, dB.
    pub snr_db: Vec<f64>,
    /// Grid of the `gamma1` sweep.
    pub gamma1: Vec<f64>,
    /// Operating SNR of the `gamma1` sweep, dB.
    pub gamma_snr_db: f64,
    /// Path gains of the SNR sweep.
    pub gains: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub include_index_bits: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            gamma1: vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
            gamma_snr_db: 20.0,
            gains: vec![0.5, 0.5],
            trials: 1000,
            methods: vec![Method::SpimMo, Method::Wang, Method::MmWave],
            include_index_bits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Link SNR at which rates are evaluated, dB.
    pub snr_db: f64,
    /// SNR of the channel estimate fed to the network; `null` feeds the
    /// exact channel.
    pub input_snr_db: Option<f64>,
    pub trials: usize,
    /// Offset applied to the seed so evaluation channels differ from the
    /// training realizations.
    pub seed_offset: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            input_snr_db: Some(20.0),
            trials: 200,
            seed_offset: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub design: DesignOptions,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Federated rounds `T`.
    pub rounds: usize,
    /// Centralized epochs.
    pub epochs: usize,
    pub experiment: ExperimentConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Paper)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = Self {
            scenario: ScenarioConfig::default(),
            design: DesignOptions::default(),
            dataset: DatasetConfig {
                input_planes: 3,
                ..DatasetConfig::default()
            },
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            rounds: 50,
            epochs: 50,
            experiment: ExperimentConfig::default(),
            eval: EvalConfig::default(),
            seed: 1,
            out: PathBuf::from("out"),
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => Self {
                scenario: ScenarioConfig {
                    n_tx: 32,
                    n_rx: 4,
                    users: 2,
                    paths: 2,
                    ..ScenarioConfig::default()
                },
                dataset: DatasetConfig {
                    realizations: 50,
                    copies: 10,
                    snr_levels: vec![20.0],
                    input_planes: 4,
                    ..DatasetConfig::default()
                },
                network: NetworkConfig {
                    filters: 8,
                    fc_units: 64,
                    ..NetworkConfig::default()
                },
                experiment: ExperimentConfig {
                    snr_db: vec![0.0, 10.0, 20.0],
                    trials: 200,
                    ..ExperimentConfig::default()
                },
                ..paper
            },
        }
    }

    /// Parse JSON; unknown keys and type errors are configuration errors.
    /// Fields missing from the document take the given preset's values.
    pub fn from_json(text: &str, base: Preset) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let mut merged = serde_json::to_value(Self::preset(base))?;
        merge(&mut merged, value.take());
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        // Unknown keys surface only when parsed against the bare schema.
        serde_json::from_str::<Self>(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Preset) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.design.altmin.validate()?;
        self.dataset.validate(&self.scenario)?;
        self.arch().validate()?;
        self.train.validate()?;
        let e = &self.experiment;
        if e.trials == 0 || self.eval.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if e.gains.len() != self.scenario.paths {
            return Err(Error::Config(format!(
                "experiment.gains has {} entries for {} paths",
                e.gains.len(),
                self.scenario.paths
            )));
        }
        if e.gamma1.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Config("gamma1 values must lie in [0, 1]".into()));
        }
        if e.methods.is_empty() {
            return Err(Error::Config("experiment.methods is empty".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> NetworkArch {
        let n = &self.network;
        NetworkArch {
            n_r: self.scenario.n_rx,
            n_t: self.scenario.n_tx,
            planes: self.dataset.input_planes,
            conv_layers: n.conv_layers,
            filters: n.filters,
            kernel_x: n.kernel_x,
            kernel_y: n.kernel_y,
            fc_units: n.fc_units,
            dropout: n.dropout,
            output_dim: crate::dataset::label_len(self.scenario.n_tx, self.scenario.users, self.scenario.n_rx),
            pool_x: n.pool_x,
            pool_y: n.pool_y,
        }
    }

    pub fn sweep_spec(&self, kind: SweepKind) -> SweepSpec {
        let e = &self.experiment;
        SweepSpec {
            kind,
            grid: match kind {
                SweepKind::Snr => e.snr_db.clone(),
                SweepKind::Gamma1 => e.gamma1.clone(),
            },
            trials: e.trials,
            methods: e.methods.clone(),
            gains: e.gains.clone(),
            snr_db: e.gamma_snr_db,
            include_index_bits: e.include_index_bits,
            seed: self.seed,
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::preset(Preset::Paper).validate().unwrap();
        RunConfig::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn paper_arch_count() {
        let arch = RunConfig::preset(Preset::Paper).arch();
        assert_eq!(crate::neural::param_count(&arch, 1.0 - arch.dropout), 600_192);
        assert_eq!(arch.planes, 3);
    }

    #[test]
    fn partial_documents_fill_from_preset() {
        let cfg = RunConfig::from_json(r#"{"seed": 9, "scenario": {"users": 1}}"#, Preset::Desk).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.users, 1);
        assert_eq!(cfg.scenario.n_tx, 32);
    }

    #[test]
    fn bad_documents_are_config_errors() {
        for text in [
            r#"{"scenario": {"users": 0}}"#,
            r#"{"scenario": {"antennas": 3}}"#,
            r#"{"seed": "x"}"#,
            "not json",
        ] {
            let err = RunConfig::from_json(text, Preset::Desk).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::preset(Preset::Desk);
        let back = RunConfig::from_json(&cfg.to_json(), Preset::Paper).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }
}
