//! Round-synchronous federated training with dropout-restricted parameter
//! exchange, the centralized baseline, and transmission-overhead counting.

use std::io::Write;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ScenarioConfig;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::metrics::BeamPredictor;
use crate::neural::{self, DropoutMask, Mode, Model, Moments, NetworkArch, TrainConfig};
use crate::rng::{self, label};
use crate::spim::SpatialPattern;

pub const BLOCK_SYMBOLS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    FlDropout,
    FlFull,
    Cl,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FlDropout => "fl-dropout",
            Scheme::FlFull => "fl-full",
            Scheme::Cl => "cl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadLedger {
    pub uplink: u64,
    pub downlink: u64,
    pub scheme: Scheme,
}

impl OverheadLedger {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            uplink: 0,
            downlink: 0,
            scheme,
        }
    }

    pub fn total(&self) -> u64 {
        self.uplink + self.downlink
    }

    pub fn blocks(&self) -> u64 {
        self.total().div_ceil(BLOCK_SYMBOLS)
    }
}

/// `2 P T U` symbols.
pub fn overhead_fl(params: u64, rounds: u64, users: u64) -> u64 {
    2 * params * rounds * users
}

/// `(3 N_T N_R + 2 N_T U + N_R) D` symbols.
pub fn overhead_cl(n_t: u64, n_r: u64, users: u64, samples: u64) -> u64 {
    (3 * n_t * n_r + 2 * n_t * users + n_r) * samples
}

/// Mean gradient of one mini-batch of a user's data, plus its moments.
pub fn local_gradient(
    model: &Model<f32>,
    data: &Dataset,
    indices: &[usize],
    mask: &DropoutMask,
) -> Result<neural::BatchGradient<f32>> {
    if data.is_empty() || indices.is_empty() {
        return Err(Error::Config("empty local dataset".into()));
    }
    let batch: Vec<(&[f32], &[f32])> = indices
        .iter()
        .map(|&i| (data.samples[i].x.as_slice(), data.samples[i].y.as_slice()))
        .collect();
    neural::batch_gradient(model, &batch, Some(mask))
}

/// Server update with the mean of all users' gradients. Every slot must be
/// filled; there is no partial aggregation.
pub fn aggregate(
    theta: &mut [f32],
    velocity: &mut [f32],
    gradients: &[Option<Vec<f32>>],
    config: &TrainConfig,
) -> Result<Vec<f32>> {
    if gradients.is_empty() {
        return Err(Error::Protocol("no user gradients".into()));
    }
    let mut mean = vec![0.0f32; theta.len()];
    for (u, g) in gradients.iter().enumerate() {
        let g = g
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("gradient of user {u} missing")))?;
        if g.len() != theta.len() {
            return Err(Error::Protocol(format!(
                "gradient of user {u} has {} entries, expected {}",
                g.len(),
                theta.len()
            )));
        }
        mean.iter_mut().zip(g).for_each(|(m, &v)| *m += v);
    }
    let n = gradients.len() as f32;
    mean.iter_mut().for_each(|m| *m /= n);
    neural::sgd_momentum_step(theta, velocity, &mean, config);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub val_mse: f64,
    pub uplink_symbols: u64,
    pub downlink_symbols: u64,
    pub cum_blocks: u64,
}

pub fn write_training_log<W: Write>(log: &[RoundLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub velocity: Vec<f32>,
    pub ledger: OverheadLedger,
    pub log: Vec<RoundLog>,
    /// Parameter vector after every round or epoch.
    pub trajectory: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct FlConfig {
    pub rounds: usize,
    pub train: TrainConfig,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Keep every parameter vector in the outcome.
    pub record_trajectory: bool,
}

/// Mean loss over the given samples in inference mode.
pub fn validation_mse(model: &Model<f32>, sets: &[(&Dataset, &[usize])]) -> Result<f64> {
    let jobs: Vec<(&Dataset, usize)> = sets
        .iter()
        .flat_map(|&(d, idx)| idx.iter().map(move |&i| (d, i)))
        .collect();
    if jobs.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = jobs
        .par_iter()
        .map(|&(d, i)| {
            let s = &d.samples[i];
            let out = neural::forward(model, &s.x, None, Mode::Infer)?;
            Ok(neural::loss_mse(&out, &s.y) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(crate::metrics::pairwise_sum(&losses) / losses.len() as f64)
}

fn check_data(arch: &NetworkArch, data: &Dataset) -> Result<()> {
    if data.input_len() != arch.input_len() || data.label_len() != arch.output_dim {
        return Err(Error::Config(format!(
            "dataset ({} inputs, {} outputs) does not fit the network ({}, {})",
            data.input_len(),
            data.label_len(),
            arch.input_len(),
            arch.output_dim
        )));
    }
    Ok(())
}

/// Batch for one step: the whole training split when it fits, otherwise a
/// seeded draw without replacement, in ascending index order.
fn draw_batch(train: &[usize], size: usize, seed: u64, key: &[u64]) -> Vec<usize> {
    if size >= train.len() {
        return train.to_vec();
    }
    let mut picks: Vec<usize> = sample(&mut rng::stream(seed, key), train.len(), size)
        .into_iter()
        .map(|i| train[i])
        .collect();
    picks.sort_unstable();
    picks
}

fn check_finite(theta: &[f32], step: usize) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("parameters became non-finite at step {step}")))
    }
}

/// Federated training over the users' local datasets. Each round every user
/// computes one mini-batch gradient at the broadcast parameters under the
/// shared mask for that round; the server averages and takes a momentum
/// step, and folds the users' normalization moments into the running
/// statistics.
pub fn train_fl(arch: &NetworkArch, datasets: &[Dataset], config: &FlConfig) -> Result<TrainOutcome> {
    arch.validate()?;
    config.train.validate()?;
    if datasets.is_empty() {
        return Err(Error::Config("no user datasets".into()));
    }
    for d in datasets {
        check_data(arch, d)?;
        if d.is_empty() {
            return Err(Error::Config("empty local dataset".into()));
        }
    }
    let users = datasets.len();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = datasets
        .iter()
        .map(|d| dataset::split(config.seed, d.len(), config.validation_fraction))
        .collect();
    if let Some(u) = splits.iter().position(|(train, _)| train.is_empty()) {
        return Err(Error::Config(format!("user {u} has no training samples after the split")));
    }
    let val_sets: Vec<(&Dataset, &[usize])> = datasets.iter().zip(&splits).map(|(d, s)| (d, s.1.as_slice())).collect();

    let mut model = Model::<f32>::init(arch, config.seed)?;
    let mut velocity = vec![0.0f32; model.theta.len()];
    let scheme = if arch.dropout > 0.0 { Scheme::FlDropout } else { Scheme::FlFull };
    let active = neural::param_count(arch, 1.0 - arch.dropout);
    let mut ledger = OverheadLedger::new(scheme);
    let mut log = Vec::with_capacity(config.rounds);
    let mut trajectory = Vec::new();

    for t in 1..=config.rounds {
        let mask = DropoutMask::draw(arch, arch.dropout, config.seed, t as u64);
        ledger.downlink += active * users as u64;
        let results: Vec<(Vec<f32>, Moments<f32>)> = (0..users)
            .into_par_iter()
            .map(|u| {
                let key = [label::BATCH, u as u64, t as u64];
                let batch = draw_batch(&splits[u].0, config.train.batch_size, config.seed, &key);
                let g = local_gradient(&model, &datasets[u], &batch, &mask)?;
                Ok((g.grad, g.moments))
            })
            .collect::<Result<_>>()?;
        ledger.uplink += active * users as u64;
        let mut moments = results[0].1.clone();
        for (_, m) in &results[1..] {
            moments.add(m);
        }
        let grads: Vec<Option<Vec<f32>>> = results.into_iter().map(|(g, _)| Some(g)).collect();
        aggregate(&mut model.theta, &mut velocity, &grads, &config.train)?;
        neural::update_stats(&mut model, &moments, config.train.stats_momentum);
        check_finite(&model.theta, t)?;
        if config.record_trajectory {
            trajectory.push(model.theta.clone());
        }
        let val_mse = validation_mse(&model, &val_sets)?;
        log::info!("round {t}: validation mse {val_mse:.6}");
        log.push(RoundLog {
            round: t,
            val_mse,
            uplink_symbols: ledger.uplink,
            downlink_symbols: ledger.downlink,
            cum_blocks: ledger.blocks(),
        });
    }
    Ok(TrainOutcome {
        model,
        velocity,
        ledger,
        log,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct ClConfig {
    pub epochs: usize,
    pub train: TrainConfig,
    pub validation_fraction: f64,
    pub seed: u64,
    pub record_trajectory: bool,
    /// Users whose data was pooled, for the upload count.
    pub users: usize,
}

/// Centralized training on the pooled dataset. Each epoch visits the
/// training split once in seeded random mini-batches (in index order when
/// one batch holds everything). The ledger counts the dataset upload only.
pub fn train_cl(arch: &NetworkArch, pooled: &Dataset, config: &ClConfig) -> Result<TrainOutcome> {
    arch.validate()?;
    config.train.validate()?;
    check_data(arch, pooled)?;
    let (train, val) = dataset::split(config.seed, pooled.len(), config.validation_fraction);
    if train.is_empty() {
        return Err(Error::Config("no training samples after the split".into()));
    }
    let mut model = Model::<f32>::init(arch, config.seed)?;
    let mut velocity = vec![0.0f32; model.theta.len()];
    let mut ledger = OverheadLedger::new(Scheme::Cl);
    ledger.uplink = overhead_cl(
        pooled.n_t as u64,
        pooled.n_r as u64,
        config.users as u64,
        pooled.len() as u64,
    );
    let mut log = Vec::with_capacity(config.epochs);
    let mut trajectory = Vec::new();
    let mut step = 0usize;
    let bs = config.train.batch_size;

    for epoch in 1..=config.epochs {
        let mut order = train.clone();
        if bs < order.len() {
            order.shuffle(&mut rng::stream(config.seed, &[label::SHUFFLE, epoch as u64]));
        }
        for chunk in order.chunks(bs) {
            step += 1;
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let mask = DropoutMask::draw(arch, arch.dropout, config.seed, step as u64);
            let g = local_gradient(&model, pooled, &batch, &mask)?;
            neural::sgd_momentum_step(&mut model.theta, &mut velocity, &g.grad, &config.train);
            neural::update_stats(&mut model, &g.moments, config.train.stats_momentum);
            check_finite(&model.theta, step)?;
        }
        if config.record_trajectory {
            trajectory.push(model.theta.clone());
        }
        let val_mse = validation_mse(&model, &[(pooled, &val)])?;
        log::info!("epoch {epoch}: validation mse {val_mse:.6}");
        log.push(RoundLog {
            round: epoch,
            val_mse,
            uplink_symbols: ledger.uplink,
            downlink_symbols: ledger.downlink,
            cum_blocks: ledger.blocks(),
        });
    }
    Ok(TrainOutcome {
        model,
        velocity,
        ledger,
        log,
        trajectory,
    })
}

/// Beamformers from a trained model. User `u` feeds its own (optionally
/// noise-corrupted) channel and the pattern plane; the precoder takes
/// column `u` from user `u`'s prediction and `w_u` from the same output.
pub struct ModelPredictor {
    pub model: Model<f32>,
    pub paths: usize,
    /// SNR of the channel estimate fed to the network; `None` feeds the
    /// exact channel.
    pub input_snr_db: Option<f64>,
    pub seed: u64,
}

impl ModelPredictor {
    fn noise_key(&self, user: usize, pattern: usize, h: &CMatrix) -> [u64; 5] {
        let z = h[(0, 0)];
        [
            label::VALIDATION,
            user as u64,
            pattern as u64,
            z.re.to_bits(),
            z.im.to_bits(),
        ]
    }
}

impl BeamPredictor for ModelPredictor {
    fn predict(&self, channels: &[CMatrix], pattern: &SpatialPattern) -> Result<(CMatrix, Vec<CVector>)> {
        let arch = &self.model.arch;
        let users = channels.len();
        let count = crate::spim::pattern_count(self.paths, users)?;
        let mut f = CMatrix::zeros(arch.n_t, users);
        let mut combiners = Vec::with_capacity(users);
        for (u, h) in channels.iter().enumerate() {
            if h.shape() != (arch.n_r, arch.n_t) {
                return Err(Error::Shape {
                    layer: "input".into(),
                    expected: arch.n_r * arch.n_t,
                    actual: h.len(),
                });
            }
            let h_in = match self.input_snr_db {
                Some(snr) => {
                    let key = self.noise_key(u, pattern.index, h);
                    dataset::corrupt(h, snr, &mut rng::stream(self.seed, &key))
                }
                None => h.clone(),
            };
            let plane = (arch.planes == 4).then_some((pattern.index, count));
            let x: Vec<f32> = dataset::build_input(&h_in, plane).iter().map(|&v| v as f32).collect();
            let y = neural::forward(&self.model, &x, None, Mode::Infer)?;
            let (fu, w) = dataset::decode_label(&y, arch.n_t, users, arch.n_r)?;
            f.set_column(u, &fu.column(u));
            combiners.push(w);
        }
        if f.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
            return Err(Error::Evaluation("model predicts an all-zero precoder".into()));
        }
        Ok((f, combiners))
    }
}

/// Overhead of the three schemes for the given sizes.
pub fn overhead_table(arch: &NetworkArch, rounds: u64, users: u64, samples: u64) -> Vec<OverheadLedger> {
    let half = |scheme, total: u64| OverheadLedger {
        uplink: total / 2,
        downlink: total / 2,
        scheme,
    };
    vec![
        half(Scheme::FlDropout, overhead_fl(neural::param_count(arch, 1.0 - arch.dropout), rounds, users)),
        half(Scheme::FlFull, overhead_fl(neural::param_count(arch, 1.0), rounds, users)),
        OverheadLedger {
            uplink: overhead_cl(arch.n_t as u64, arch.n_r as u64, users, samples),
            downlink: 0,
            scheme: Scheme::Cl,
        },
    ]
}

pub fn write_overhead_csv<W: Write>(rows: &[OverheadLedger], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "uplink_symbols", "downlink_symbols", "total_symbols", "blocks"])?;
    for r in rows {
        w.write_record([
            r.scheme.as_str().to_string(),
            r.uplink.to_string(),
            r.downlink.to_string(),
            r.total().to_string(),
            r.blocks().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario sizes a network must match to consume this scenario's data.
pub fn arch_for(scenario: &ScenarioConfig, planes: usize, template: &NetworkArch) -> NetworkArch {
    NetworkArch {
        n_r: scenario.n_rx,
        n_t: scenario.n_tx,
        planes,
        output_dim: dataset::label_len(scenario.n_tx, scenario.users, scenario.n_rx),
        ..template.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    fn tiny_arch(dropout: f64) -> NetworkArch {
        NetworkArch {
            n_r: 2,
            n_t: 4,
            planes: 3,
            conv_layers: 1,
            filters: 2,
            kernel_x: 3,
            kernel_y: 3,
            fc_units: 6,
            dropout,
            output_dim: dataset::label_len(4, 1, 2),
            pool_x: 2,
            pool_y: 2,
        }
    }

    fn synthetic(arch: &NetworkArch, n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut r = rng::stream(seed, &[99]);
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f32> = (0..arch.input_len()).map(|_| r.random_range(-1.0..1.0)).collect();
                let y: Vec<f32> = (0..arch.output_dim).map(|k| 0.5 * x[k % x.len()] + 0.1).collect();
                Sample {
                    pattern: 0,
                    snr_db: 20.0,
                    x,
                    y,
                }
            })
            .collect();
        Dataset {
            n_r: arch.n_r,
            n_t: arch.n_t,
            planes: arch.planes,
            users: 1,
            paths: 2,
            samples,
        }
    }

    #[test]
    fn paper_overheads() {
        assert_eq!(overhead_fl(600_192, 50, 8), 480_153_600);
        let full = OverheadLedger {
            uplink: overhead_fl(1_190_016, 50, 8),
            downlink: 0,
            scheme: Scheme::FlFull,
        };
        assert_eq!(full.total(), 952_012_800);
        assert_eq!(full.blocks(), 952_013);
        assert_eq!(overhead_cl(128, 9, 8, 960_000), 5_292_480_000);
        assert_eq!(overhead_fl(600_192, 0, 8), 0);
        assert_eq!(overhead_cl(128, 9, 8, 0), 0);
    }

    #[test]
    fn aggregate_examples() {
        let cfg = TrainConfig {
            learning_rate: 0.5,
            ..Default::default()
        };
        let g = vec![1.0f32, -2.0, 0.5];
        let mut a = vec![1.0f32; 3];
        let mut va = vec![0.0; 3];
        aggregate(&mut a, &mut va, &[Some(g.clone()), Some(g.clone())], &cfg).unwrap();
        let mut b = vec![1.0f32; 3];
        let mut vb = vec![0.0; 3];
        aggregate(&mut b, &mut vb, &[Some(g.clone())], &cfg).unwrap();
        assert_eq!(a, b);

        let neg: Vec<f32> = g.iter().map(|v| -v).collect();
        let mut c = vec![1.0f32; 3];
        aggregate(&mut c, &mut vec![0.0; 3], &[Some(g.clone()), Some(neg)], &cfg).unwrap();
        assert_eq!(c, vec![1.0; 3]);

        let err = aggregate(&mut c, &mut vec![0.0; 3], &[Some(g), None], &cfg).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn local_gradient_examples() {
        let arch = tiny_arch(0.0);
        let model = Model::<f32>::init(&arch, 1).unwrap();
        let mut data = synthetic(&arch, 3, 1);
        let pred = neural::forward(&model, &data.samples[0].x, None, Mode::Infer).unwrap();
        data.samples[0].y = pred;
        let mask = DropoutMask::full(arch.fc_inputs());
        let g = local_gradient(&model, &data, &[0], &mask).unwrap();
        assert!(g.grad.iter().all(|&v| v == 0.0));
        let single = local_gradient(&model, &data, &[1], &mask).unwrap();
        let dup = local_gradient(&model, &data, &[1, 1], &mask).unwrap();
        assert_eq!(single.grad, dup.grad);
        let empty = Dataset { samples: vec![], ..data };
        assert!(matches!(local_gradient(&model, &empty, &[], &mask), Err(Error::Config(_))));
    }

    fn fl_config(rounds: usize, batch: usize) -> FlConfig {
        FlConfig {
            rounds,
            train: TrainConfig {
                learning_rate: 0.01,
                batch_size: batch,
                ..Default::default()
            },
            validation_fraction: 0.25,
            seed: 5,
            record_trajectory: true,
        }
    }

    #[test]
    fn fl_matches_centralized_for_one_user() {
        let arch = tiny_arch(0.0);
        let data = synthetic(&arch, 16, 2);
        let fl = train_fl(&arch, std::slice::from_ref(&data), &fl_config(10, 1000)).unwrap();
        let cl = train_cl(
            &arch,
            &data,
            &ClConfig {
                epochs: 10,
                train: fl_config(0, 1000).train,
                validation_fraction: 0.25,
                seed: 5,
                record_trajectory: true,
                users: 1,
            },
        )
        .unwrap();
        for (a, b) in fl.trajectory.iter().zip(&cl.trajectory) {
            let diff: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-6 * norm, "{diff} vs {norm}");
        }
        assert_eq!(fl.trajectory.len(), 10);
    }

    #[test]
    fn ledger_matches_closed_form() {
        let arch = tiny_arch(0.5);
        let data = vec![synthetic(&arch, 12, 3), synthetic(&arch, 12, 4)];
        let out = train_fl(&arch, &data, &fl_config(7, 4)).unwrap();
        let p = neural::param_count(&arch, 0.5);
        assert_eq!(out.ledger.total(), overhead_fl(p, 7, 2));
        assert_eq!(out.ledger.scheme, Scheme::FlDropout);
        let full = train_fl(&tiny_arch(0.0), &data, &fl_config(7, 4)).unwrap();
        let ratio = out.ledger.total() as f64 / full.ledger.total() as f64;
        assert!((ratio - p as f64 / neural::param_count(&arch, 1.0) as f64).abs() < 1e-12);
        let log = out.log.last().unwrap();
        assert_eq!(log.cum_blocks, out.ledger.blocks());
    }

    #[test]
    fn fl_learns_synthetic_map() {
        let arch = tiny_arch(0.5);
        let data = vec![synthetic(&arch, 40, 6), synthetic(&arch, 40, 7)];
        let mut cfg = fl_config(60, 16);
        cfg.train.learning_rate = 0.02;
        let out = train_fl(&arch, &data, &cfg).unwrap();
        assert!(out.log.last().unwrap().val_mse < out.log[0].val_mse);
    }

    #[test]
    fn training_log_header() {
        let mut buf = Vec::new();
        write_training_log(
            &[RoundLog {
                round: 1,
                val_mse: 0.5,
                uplink_symbols: 10,
                downlink_symbols: 10,
                cum_blocks: 1,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,val_mse,uplink_symbols,downlink_symbols,cum_blocks\n"));
    }
}
