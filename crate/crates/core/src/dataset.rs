//! Per-user training data: noisy channel tensors paired with the clean
//! model-based beamformers, plus the binary file format.

use std::f64::consts::PI;
use std::fs;
use std::path::Path as FsPath;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_paths, synthesize_all, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::rng::{self, label};
use crate::spim::{self, DesignOptions, SpatialPattern};

pub const MAGIC: &[u8; 8] = b"SPIMDS01";
const HEADER_LEN: usize = 8 + 6 * 4;
/// Realization redraws allowed when a bank has an unusable pattern.
const MAX_REDRAWS: u64 = 16;

/// Channel tensor with planes `Re H`, `Im H`, `arg H` and an optional
/// constant pattern plane, stored plane-major then row-major (`N_R x N_T`).
pub fn build_input(h: &CMatrix, pattern: Option<(usize, usize)>) -> Vec<f64> {
    let (rows, cols) = h.shape();
    let planes = if pattern.is_some() { 4 } else { 3 };
    let mut x = Vec::with_capacity(planes * rows * cols);
    for part in 0..3 {
        for r in 0..rows {
            for c in 0..cols {
                let z = h[(r, c)];
                x.push(match part {
                    0 => z.re,
                    1 => z.im,
                    _ => principal_angle(z),
                });
            }
        }
    }
    if let Some((index, count)) = pattern {
        let v = if count > 1 {
            index as f64 / (count - 1) as f64
        } else {
            0.0
        };
        x.extend(std::iter::repeat_n(v, rows * cols));
    }
    x
}

/// Argument in `(-pi, pi]`.
fn principal_angle(z: Complex64) -> f64 {
    let a = z.arg();
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn label_len(n_t: usize, users: usize, n_r: usize) -> usize {
    2 * n_t * users + n_r
}

/// `[vec Re F; vec Im F; arg w]` with `F = F_RF F_BB` stacked column by column.
pub fn build_label(analog: &CMatrix, baseband: &CMatrix, w: &CVector) -> Vec<f64> {
    let f = analog * baseband;
    let mut y = Vec::with_capacity(2 * f.len() + w.len());
    y.extend(f.iter().map(|z| z.re));
    y.extend(f.iter().map(|z| z.im));
    y.extend(w.iter().map(|&z| principal_angle(z)));
    y
}

/// Inverse of [`build_label`]; the combiner gets modulus `1/sqrt(N_R)`.
pub fn decode_label<T: Copy + Into<f64>>(y: &[T], n_t: usize, users: usize, n_r: usize) -> Result<(CMatrix, CVector)> {
    if y.len() != label_len(n_t, users, n_r) {
        return Err(Error::Shape {
            layer: "label".into(),
            expected: label_len(n_t, users, n_r),
            actual: y.len(),
        });
    }
    let k = n_t * users;
    let f = CMatrix::from_fn(n_t, users, |r, c| {
        let i = c * n_t + r;
        Complex64::new(y[i].into(), y[k + i].into())
    });
    let modulus = 1.0 / (n_r as f64).sqrt();
    let w = CVector::from_iterator(n_r, y[2 * k..].iter().map(|&a| Complex64::from_polar(modulus, a.into())));
    Ok((f, w))
}

/// Add circular Gaussian noise with per-entry variance
/// `||H||_F^2 / (N_R N_T 10^(snr/10))`. An infinite SNR returns `H`.
pub fn corrupt<R: Rng + ?Sized>(h: &CMatrix, snr_db: f64, rng: &mut R) -> CMatrix {
    if snr_db == f64::INFINITY {
        return h.clone();
    }
    let var = h.norm_squared() / (h.len() as f64 * 10f64.powf(snr_db / 10.0));
    let s = (var / 2.0).sqrt();
    h.map(|z| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        z + Complex64::new(s * re, s * im)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Channel realizations per user.
    pub realizations: usize,
    /// Noisy copies per realization and level.
    pub copies: usize,
    /// Training SNR levels in dB.
    pub snr_levels: Vec<f64>,
    /// Path gains used for the channel draws; `None` draws exponential gains.
    pub gains: Option<Vec<f64>>,
    /// 4 appends the pattern-index plane; 3 trains on `fixed_pattern` only.
    pub input_planes: usize,
    pub fixed_pattern: usize,
    pub validation_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            realizations: 200,
            copies: 200,
            snr_levels: vec![20.0, 25.0, 30.0],
            gains: Some(vec![0.5, 0.5]),
            input_planes: 4,
            fixed_pattern: 0,
            validation_fraction: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self, scenario: &ScenarioConfig) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.realizations == 0 || self.copies == 0 {
            return fail("realizations and copies must be at least 1".into());
        }
        if self.snr_levels.is_empty() || self.snr_levels.iter().any(|s| s.is_nan()) {
            return fail("snr_levels must be a nonempty list of numbers".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!("validation_fraction must be in (0, 1), got {}", self.validation_fraction));
        }
        match self.input_planes {
            3 => {
                let count = spim::pattern_count(scenario.paths, scenario.users)?;
                if self.fixed_pattern >= count {
                    return fail(format!("fixed_pattern {} out of range for {count} patterns", self.fixed_pattern));
                }
            }
            4 => {}
            other => return fail(format!("input_planes must be 3 or 4, got {other}")),
        }
        if let Some(g) = &self.gains {
            if g.len() != scenario.paths {
                return fail(format!("expected {} gains, got {}", scenario.paths, g.len()));
            }
        }
        Ok(())
    }

    /// Samples per user.
    pub fn samples_per_user(&self) -> usize {
        self.snr_levels.len() * self.realizations * self.copies
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// 0-based pattern index.
    pub pattern: u32,
    pub snr_db: f32,
    pub x: Vec<f32>,
    pub y: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_r: usize,
    pub n_t: usize,
    pub planes: usize,
    pub users: usize,
    pub paths: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn empty(scenario: &ScenarioConfig, planes: usize) -> Self {
        Self {
            n_r: scenario.n_rx,
            n_t: scenario.n_tx,
            planes,
            users: scenario.users,
            paths: scenario.paths,
            samples: Vec::new(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.planes * self.n_r * self.n_t
    }

    pub fn label_len(&self) -> usize {
        label_len(self.n_t, self.users, self.n_r)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = self.header_only();
        out.samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        out
    }

    fn header_only(&self) -> Dataset {
        Dataset {
            n_r: self.n_r,
            n_t: self.n_t,
            planes: self.planes,
            users: self.users,
            paths: self.paths,
            samples: Vec::new(),
        }
    }

    /// Concatenate datasets with identical headers.
    pub fn pooled(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Config("no datasets to pool".into()))?;
        let mut out = first.header_only();
        for p in parts {
            if p.header_only() != out.header_only() {
                return Err(Error::Config("datasets have different dimensions".into()));
            }
            out.samples.extend(p.samples.iter().cloned());
        }
        Ok(out)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.samples.len() * self.record_len());
        buf.extend_from_slice(MAGIC);
        for v in [self.n_r, self.n_t, self.planes, self.users, self.paths, self.samples.len()] {
            let v = u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} does not fit the u32 header")))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.samples {
            if s.x.len() != self.input_len() || s.y.len() != self.label_len() {
                return Err(Error::Shape {
                    layer: "sample".into(),
                    expected: self.input_len() + self.label_len(),
                    actual: s.x.len() + s.y.len(),
                });
            }
            buf.extend_from_slice(&s.pattern.to_le_bytes());
            buf.extend_from_slice(&s.snr_db.to_le_bytes());
            for v in s.x.iter().chain(&s.y) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    fn record_len(&self) -> usize {
        8 + 4 * (self.input_len() + self.label_len())
    }

    pub fn load(path: &FsPath) -> Result<Dataset> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let format = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(format(
                bytes.len(),
                format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..8] != MAGIC {
            return Err(format(0, "bad magic, not a dataset file".into()));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let names = ["n_r", "n_t", "planes", "users", "paths"];
        for (i, name) in names.iter().enumerate() {
            if field(i) == 0 {
                return Err(format(8 + 4 * i, format!("{name} must be positive")));
            }
        }
        let mut ds = Dataset {
            n_r: field(0),
            n_t: field(1),
            planes: field(2),
            users: field(3),
            paths: field(4),
            samples: Vec::new(),
        };
        if ds.planes != 3 && ds.planes != 4 {
            return Err(format(16, format!("planes must be 3 or 4, got {}", ds.planes)));
        }
        let count = field(5);
        let record = ds.record_len();
        let expected = count
            .checked_mul(record)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| format(28, "sample count overflows".into()))?;
        if bytes.len() != expected {
            return Err(format(
                bytes.len().min(expected),
                format!("expected {expected} bytes for {count} samples, found {}", bytes.len()),
            ));
        }
        let patterns = spim::pattern_count(ds.paths, ds.users).map_err(|e| format(24, e.to_string()))?;
        let floats = |start: usize, n: usize| -> Vec<f32> {
            bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        ds.samples.reserve(count);
        for k in 0..count {
            let at = HEADER_LEN + k * record;
            let pattern = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if pattern as usize >= patterns {
                return Err(format(at, format!("pattern index {pattern} out of range for {patterns} patterns")));
            }
            let snr_db = f32::from_le_bytes(bytes[at + 4..at + 8].try_into().expect("4 bytes"));
            let x = floats(at + 8, ds.input_len());
            let y = floats(at + 8 + 4 * ds.input_len(), ds.label_len());
            ds.samples.push(Sample { pattern, snr_db, x, y });
        }
        Ok(ds)
    }
}

/// File name used for user `u`'s local dataset.
pub fn user_file_name(user: usize) -> String {
    format!("user_{user}.spimds")
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// One realization's clean multi-user channels and its bank. Redraws the
/// geometry when any pattern is unusable.
pub fn realization(
    scenario: &ScenarioConfig,
    options: &DesignOptions,
    config: &DatasetConfig,
    seed: u64,
    user: usize,
    index: usize,
) -> Result<(Vec<CMatrix>, spim::BeamformerBank)> {
    for attempt in 0..MAX_REDRAWS {
        let key = [label::DATASET, user as u64, index as u64, attempt];
        let paths = draw_paths(scenario, config.gains.as_deref(), &mut rng::stream(seed, &key))?;
        let channels = synthesize_all(&paths, scenario);
        let bank = spim::build_bank(scenario, &channels, &options.with_seed(rng::derive(seed, &key)))?;
        if bank.excluded.is_empty() {
            return Ok((channels, bank));
        }
        log::warn!("user {user} realization {index}: redrawing after {} unusable patterns", bank.excluded.len());
    }
    Err(Error::Evaluation(format!(
        "user {user} realization {index}: no fully usable bank after {MAX_REDRAWS} draws"
    )))
}

/// Local dataset of `user`: for each realization, design the bank on clean
/// channels, then emit `copies` noisy inputs per SNR level with clean labels.
pub fn generate_local(
    user: usize,
    scenario: &ScenarioConfig,
    options: &DesignOptions,
    config: &DatasetConfig,
    seed: u64,
) -> Result<Dataset> {
    scenario.validate()?;
    config.validate(scenario)?;
    if user >= scenario.users {
        return Err(Error::Config(format!("user {user} out of range")));
    }
    let count = spim::pattern_count(scenario.paths, scenario.users)?;
    let chunks: Vec<Vec<Sample>> = (0..config.realizations)
        .into_par_iter()
        .map(|r| {
            let (channels, bank) = realization(scenario, options, config, seed, user, r)?;
            let mut noise = rng::stream(seed, &[label::CORRUPTION, user as u64, r as u64]);
            let mut picker = rng::stream(seed, &[label::PATTERN, user as u64, r as u64]);
            let mut out = Vec::with_capacity(config.snr_levels.len() * config.copies);
            for &level in &config.snr_levels {
                for _ in 0..config.copies {
                    let index = if config.input_planes == 4 {
                        picker.random_range(0..count)
                    } else {
                        config.fixed_pattern
                    };
                    let design = bank.pattern(index).expect("bank is complete");
                    let noisy = corrupt(&channels[user], level, &mut noise);
                    let plane = (config.input_planes == 4).then_some((index, count));
                    out.push(Sample {
                        pattern: index as u32,
                        snr_db: level as f32,
                        x: to_f32(&build_input(&noisy, plane)),
                        y: to_f32(&build_label(&design.analog, &design.baseband, &design.combiners[user])),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut ds = Dataset::empty(scenario, config.input_planes);
    ds.samples = chunks.into_iter().flatten().collect();
    Ok(ds)
}

/// Seeded train/validation split of `len` samples: the first
/// `round(fraction * len)` entries of a permutation go to validation.
/// Both index lists are returned sorted.
pub fn split(seed: u64, len: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, &[label::SPLIT, len as u64]));
    let n_val = ((fraction * len as f64).round() as usize).min(len);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn pattern_of(sample: &Sample, paths: usize, users: usize) -> SpatialPattern {
    SpatialPattern::from_index(sample.pattern as usize, paths, users)
}
