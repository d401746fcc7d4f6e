//! SINR, spectral efficiency, and Monte Carlo sweeps.

use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_paths, steering_vector, synthesize_all, PathSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::rng::{self, label};
use crate::spim::{self, BeamformerBank, DesignOptions, SpatialPattern, StreamNormalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "spim-mo")]
    SpimMo,
    #[serde(rename = "spim-fl")]
    SpimFl,
    #[serde(rename = "wang")]
    Wang,
    #[serde(rename = "mmwave")]
    MmWave,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SpimMo => "spim-mo",
            Method::SpimFl => "spim-fl",
            Method::Wang => "wang",
            Method::MmWave => "mmwave",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spim-mo" => Ok(Method::SpimMo),
            "spim-fl" => Ok(Method::SpimFl),
            "wang" => Ok(Method::Wang),
            "mmwave" => Ok(Method::MmWave),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub method: Method,
    /// `sinr[k][u]` for the `k`-th evaluated pattern.
    pub sinr: Vec<Vec<f64>>,
    pub patterns: Vec<usize>,
    /// Sum rate of each evaluated pattern.
    pub pattern_se: Vec<f64>,
    pub index_bits: f64,
    pub total: f64,
}

/// SINR of user `u` for the full precoder `f = F_RF F_BB` and combiner `w`.
pub fn sinr_with_precoder(u: usize, h: &CMatrix, f: &CMatrix, w: &CVector, noise_var: f64) -> f64 {
    let g = w.adjoint() * h * f;
    let signal = g[(0, u)].norm_sqr();
    let interference: f64 = (0..f.ncols()).filter(|&v| v != u).map(|v| g[(0, v)].norm_sqr()).sum();
    signal / (interference + noise_var * w.norm_squared())
}

pub fn sinr(u: usize, h: &CMatrix, analog: &CMatrix, baseband: &CMatrix, w: &CVector, noise_var: f64) -> f64 {
    sinr_with_precoder(u, h, &(analog * baseband), w, noise_var)
}

/// Per-user SINR for one pattern's precoder and combiners.
pub fn pattern_sinrs(channels: &[CMatrix], f: &CMatrix, combiners: &[CVector], noise_var: f64) -> Vec<f64> {
    (0..channels.len())
        .map(|u| sinr_with_precoder(u, &channels[u], f, &combiners[u], noise_var))
        .collect()
}

pub fn index_bits(paths: usize, users: usize) -> f64 {
    users as f64 * (paths as f64).log2()
}

fn report(method: Method, patterns: Vec<usize>, sinr: Vec<Vec<f64>>, index_bits: f64) -> Result<RateReport> {
    if sinr.is_empty() {
        return Err(Error::Evaluation(format!("{}: no usable spatial patterns", method.as_str())));
    }
    let pattern_se: Vec<f64> = sinr
        .iter()
        .map(|s| s.iter().map(|&x| (1.0 + x).log2()).sum())
        .collect();
    let total = index_bits + pairwise_sum(&pattern_se) / pattern_se.len() as f64;
    Ok(RateReport {
        method,
        sinr,
        patterns,
        pattern_se,
        index_bits,
        total,
    })
}

fn bank_report(method: Method, bank: &BeamformerBank, channels: &[CMatrix], noise_var: f64, bits: f64) -> Result<RateReport> {
    let sinr = bank
        .patterns
        .iter()
        .map(|d| pattern_sinrs(channels, &d.precoder(), &d.combiners, noise_var))
        .collect();
    let patterns = bank.patterns.iter().map(|d| d.pattern.index).collect();
    report(method, patterns, sinr, bits)
}

/// Index bits (optional) plus the pattern-averaged sum rate of the bank.
pub fn spim_rate(bank: &BeamformerBank, channels: &[CMatrix], noise_var: f64, include_index_bits: bool) -> Result<RateReport> {
    let bits = if include_index_bits {
        index_bits(bank.paths, channels.len())
    } else {
        0.0
    };
    bank_report(Method::SpimMo, bank, channels, noise_var, bits)
}

/// Strongest-path baseline: the analog fits see only each user's strongest
/// path, the zero-forcing and the rate use the true channels.
pub fn mmwave_rate(
    scenario: &ScenarioConfig,
    channels: &[CMatrix],
    paths: &PathSet,
    options: &DesignOptions,
    noise_var: f64,
) -> Result<RateReport> {
    let strongest = paths.strongest_paths();
    let design_channels = synthesize_all(&strongest, scenario);
    let users = spim::design_users(&design_channels, 1, noise_var, options)?;
    let bank = spim::assemble_bank(channels, users, 1, options.normalization)?;
    bank_report(Method::MmWave, &bank, channels, noise_var, 0.0)
}

/// Steering-codebook baseline with one baseband precoder, zero-forcing at
/// the strongest-path pattern and reused for every pattern after a power
/// rescale.
pub fn wang_rate(
    scenario: &ScenarioConfig,
    channels: &[CMatrix],
    paths: &PathSet,
    noise_var: f64,
    include_index_bits: bool,
    normalization: StreamNormalization,
) -> Result<RateReport> {
    let users = scenario.users;
    let m = scenario.paths;
    let mut precoders = Vec::with_capacity(users);
    let mut combiners = Vec::with_capacity(users);
    for user_paths in &paths.users {
        let mut f = CMatrix::zeros(scenario.n_tx, m);
        let mut w = CMatrix::zeros(scenario.n_rx, m);
        for (k, p) in user_paths.iter().enumerate() {
            f.set_column(k, &steering_vector(scenario.n_tx, p.aod));
            w.set_column(k, &steering_vector(scenario.n_rx, p.aoa));
        }
        precoders.push(f);
        combiners.push(w);
    }
    let f_refs: Vec<&CMatrix> = precoders.iter().collect();
    let w_refs: Vec<&CMatrix> = combiners.iter().collect();

    let strongest: Vec<usize> = (0..users).map(|u| paths.strongest(u)).collect();
    let fixed_pattern = SpatialPattern::from_choice(&strongest, m);
    let (analog, w) = spim::select_pattern(&f_refs, &w_refs, &fixed_pattern);
    let h_eff = spim::effective_channel(channels, &w, &analog);
    let fixed = spim::baseband_zf(&h_eff, &analog, normalization)
        .map_err(|e| Error::Evaluation(format!("fixed baseband for pattern {fixed_pattern}: {e}")))?
        .baseband;

    let mut sinr = Vec::new();
    let mut indices = Vec::new();
    for pattern in spim::enumerate_patterns(m, users)? {
        let (analog, w) = spim::select_pattern(&f_refs, &w_refs, &pattern);
        let mut f = &analog * &fixed;
        let power = f.norm_squared();
        if !(power > 0.0) {
            continue;
        }
        f *= Complex64::new((users as f64 / power).sqrt(), 0.0);
        sinr.push(pattern_sinrs(channels, &f, &w, noise_var));
        indices.push(pattern.index);
    }
    let bits = if include_index_bits { index_bits(m, users) } else { 0.0 };
    report(Method::Wang, indices, sinr, bits)
}

/// Beamformers predicted from channels by a learned model.
pub trait BeamPredictor: Sync {
    /// Full precoder `F = F_RF F_BB` (`N_T x U`) and one combiner per user
    /// for the given pattern.
    fn predict(&self, channels: &[CMatrix], pattern: &SpatialPattern) -> Result<(CMatrix, Vec<CVector>)>;
}

/// Rate of predicted beamformers over all patterns, with the precoder scaled
/// to power `U`.
pub fn predicted_rate(
    predictor: &dyn BeamPredictor,
    channels: &[CMatrix],
    paths: usize,
    noise_var: f64,
    include_index_bits: bool,
) -> Result<RateReport> {
    let users = channels.len();
    let mut sinr = Vec::new();
    let mut indices = Vec::new();
    for pattern in spim::enumerate_patterns(paths, users)? {
        let (mut f, w) = predictor.predict(channels, &pattern)?;
        let power = f.norm_squared();
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::Evaluation(format!("predicted precoder for pattern {pattern} has no power")));
        }
        f *= Complex64::new((users as f64 / power).sqrt(), 0.0);
        sinr.push(pattern_sinrs(channels, &f, &w, noise_var));
        indices.push(pattern.index);
    }
    let bits = if include_index_bits { index_bits(paths, users) } else { 0.0 };
    report(Method::SpimFl, indices, sinr, bits)
}

/// Pairwise (cascade) summation in input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Snr,
    Gamma1,
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(SweepKind::Snr),
            "gamma1" => Ok(SweepKind::Gamma1),
            other => Err(Error::Config(format!("unknown sweep kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// SNR values in dB or `gamma1` values.
    pub grid: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Path gains for an SNR sweep.
    pub gains: Vec<f64>,
    /// Operating SNR in dB for a `gamma1` sweep.
    pub snr_db: f64,
    pub include_index_bits: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub method: &'static str,
    pub mean_se: f64,
    pub std_se: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Rates of all requested methods on one channel draw.
pub fn evaluate_trial(
    scenario: &ScenarioConfig,
    options: &DesignOptions,
    paths: &PathSet,
    methods: &[Method],
    include_index_bits: bool,
    predictor: Option<&dyn BeamPredictor>,
) -> Result<Vec<f64>> {
    let channels = synthesize_all(paths, scenario);
    let sigma = scenario.noise_var;
    let needs_bank = methods.contains(&Method::SpimMo);
    let bank = if needs_bank {
        Some(spim::build_bank(scenario, &channels, options)?)
    } else {
        None
    };
    methods
        .iter()
        .map(|&method| {
            let r = match method {
                Method::SpimMo => spim_rate(bank.as_ref().expect("bank built"), &channels, sigma, include_index_bits)?,
                Method::MmWave => mmwave_rate(scenario, &channels, paths, options, sigma)?,
                Method::Wang => wang_rate(scenario, &channels, paths, sigma, include_index_bits, options.normalization)?,
                Method::SpimFl => {
                    let p = predictor.ok_or_else(|| Error::Config("spim-fl needs a trained model".into()))?;
                    predicted_rate(p, &channels, scenario.paths, sigma, include_index_bits)?
                }
            };
            Ok(r.total)
        })
        .collect()
}

fn point_scenario(scenario: &ScenarioConfig, spec: &SweepSpec, x: f64) -> Result<(ScenarioConfig, Vec<f64>)> {
    match spec.kind {
        SweepKind::Snr => Ok((scenario.clone().with_snr_db(x), spec.gains.clone())),
        SweepKind::Gamma1 => {
            if scenario.paths != 2 {
                return Err(Error::Config("a gamma1 sweep needs exactly 2 paths".into()));
            }
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("gamma1 = {x} outside [0, 1]")));
            }
            Ok((scenario.clone().with_snr_db(spec.snr_db), vec![x, 1.0 - x]))
        }
    }
}

/// Monte Carlo sweep. Trial `t` uses the same path geometry at every grid
/// point; only the swept quantity changes. Output order is grid-major, then
/// method order of `spec.methods`.
pub fn sweep(
    scenario: &ScenarioConfig,
    options: &DesignOptions,
    spec: &SweepSpec,
    predictor: Option<&dyn BeamPredictor>,
) -> Result<Vec<SweepRow>> {
    scenario.validate()?;
    options.altmin.validate()?;
    if spec.grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if spec.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let points: Vec<(ScenarioConfig, Vec<f64>)> = spec
        .grid
        .iter()
        .map(|&x| point_scenario(scenario, spec, x))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let (cfg, gains) = &points[g];
            let mut stream = rng::stream(spec.seed, &[label::TRIAL, t as u64]);
            let paths = draw_paths(cfg, Some(gains), &mut stream)?;
            let trial_options = options.with_seed(rng::derive(spec.seed, &[label::TRIAL, t as u64]));
            evaluate_trial(cfg, &trial_options, &paths, &spec.methods, spec.include_index_bits, predictor)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(points.len() * spec.methods.len());
    for (g, &x) in spec.grid.iter().enumerate() {
        let block = &results[g * spec.trials..(g + 1) * spec.trials];
        for (k, &method) in spec.methods.iter().enumerate() {
            let values: Vec<f64> = block.iter().map(|r| r[k]).collect();
            let (mean_se, std_se) = mean_std(&values);
            rows.push(SweepRow {
                x,
                method: method.as_str(),
                mean_se,
                std_se,
                trials: spec.trials,
                seed: spec.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean SE of `method` at each grid value, in grid order.
pub fn curve(rows: &[SweepRow], method: Method) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.method == method.as_str())
        .map(|r| (r.x, r.mean_se))
        .collect()
}

/// First `x` where `b - a` changes sign, by linear interpolation between
/// grid points. `None` if the curves do not cross.
pub fn crossing(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<f64> {
    let diff: Vec<(f64, f64)> = a.iter().zip(b).map(|(p, q)| (p.0, q.1 - p.1)).collect();
    for w in diff.windows(2) {
        let (x0, d0) = w[0];
        let (x1, d1) = w[1];
        if d0 == 0.0 {
            return Some(x0);
        }
        if d0.signum() != d1.signum() {
            return Some(x0 + (x1 - x0) * d0 / (d0 - d1));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Path;
    use crate::manifold::AltMinConfig;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn desk() -> ScenarioConfig {
        ScenarioConfig {
            n_tx: 32,
            n_rx: 4,
            users: 2,
            paths: 2,
            noise_var: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn scalar_sinr() {
        let h = CMatrix::from_element(1, 1, c(3.0));
        let f = CMatrix::from_element(1, 1, c(1.0));
        let w = CVector::from_element(1, c(1.0));
        assert!((sinr(0, &h, &f, &f, &w, 0.5) - 9.0 / 0.5).abs() < 1e-12);
        assert!(sinr(0, &h, &f, &f, &w, 1e300) < 1e-290);
        assert!(sinr(0, &h, &f, &f, &w, 1e-12) > 1e6);
    }

    #[test]
    fn designed_bank_is_interference_free() {
        let cfg = desk();
        let paths = draw_paths(&cfg, Some(&[0.5, 0.5]), &mut rng::stream(3, &[])).unwrap();
        let channels = synthesize_all(&paths, &cfg);
        let bank = spim::build_bank(&cfg, &channels, &DesignOptions::default()).unwrap();
        for d in &bank.patterns {
            let f = d.precoder();
            for u in 0..cfg.users {
                let g = d.combiners[u].adjoint() * &channels[u] * &f;
                let signal = g[(0, u)].norm_sqr();
                let interference: f64 = (0..cfg.users).filter(|&v| v != u).map(|v| g[(0, v)].norm_sqr()).sum();
                assert!(interference <= 1e-12 * signal);
            }
        }
    }

    #[test]
    fn index_bits_scale_with_users() {
        assert_eq!(index_bits(2, 8), 8.0);
        assert_eq!(index_bits(1, 8), 0.0);
    }

    #[test]
    fn single_path_spim_equals_mmwave() {
        let cfg = ScenarioConfig { paths: 1, ..desk() };
        for seed in 0..3 {
            let paths = draw_paths(&cfg, None, &mut rng::stream(seed, &[])).unwrap();
            let channels = synthesize_all(&paths, &cfg);
            let options = DesignOptions::default().with_seed(seed);
            let bank = spim::build_bank(&cfg, &channels, &options).unwrap();
            let spim = spim_rate(&bank, &channels, cfg.noise_var, true).unwrap();
            let mm = mmwave_rate(&cfg, &channels, &paths, &options, cfg.noise_var).unwrap();
            assert_eq!(spim.index_bits, 0.0);
            assert_eq!(spim.total, mm.total);
        }
    }

    #[test]
    fn mmwave_ties_pick_first_path() {
        let cfg = desk();
        let paths = draw_paths(&cfg, Some(&[0.5, 0.5]), &mut rng::stream(4, &[])).unwrap();
        for u in 0..cfg.users {
            assert_eq!(paths.strongest(u), 0);
        }
    }

    #[test]
    fn mmwave_with_dead_second_path_matches_single_path_design() {
        let cfg = desk();
        let paths = draw_paths(&cfg, Some(&[1.0, 0.0]), &mut rng::stream(5, &[])).unwrap();
        let channels = synthesize_all(&paths, &cfg);
        let options = DesignOptions::default().with_seed(5);
        let mm = mmwave_rate(&cfg, &channels, &paths, &options, cfg.noise_var).unwrap();
        let single = ScenarioConfig { paths: 1, ..cfg.clone() };
        let restricted = synthesize_all(&paths.restricted(&[0, 0]), &single);
        let bank = spim::build_bank(&single, &restricted, &options).unwrap();
        let forced = spim_rate(&bank, &channels, cfg.noise_var, false).unwrap();
        assert_eq!(mm.total, forced.total);
    }

    #[test]
    fn wang_single_path_is_steering_zf() {
        let cfg = ScenarioConfig { paths: 1, ..desk() };
        let paths = draw_paths(&cfg, None, &mut rng::stream(6, &[])).unwrap();
        let channels = synthesize_all(&paths, &cfg);
        let r = wang_rate(&cfg, &channels, &paths, cfg.noise_var, true, StreamNormalization::PerStream).unwrap();
        // steering vectors plus ZF: interference-free, so the rate is the
        // sum of log(1 + |g_u|^2 / sigma^2 ||w||^2) with unit-power streams
        let mut f = CMatrix::zeros(cfg.n_tx, 2);
        let mut w = Vec::new();
        for u in 0..2 {
            f.set_column(u, &steering_vector(cfg.n_tx, paths.users[u][0].aod));
            w.push(steering_vector(cfg.n_rx, paths.users[u][0].aoa));
        }
        let h_eff = spim::effective_channel(&channels, &w, &f);
        let zf = spim::baseband_zf(&h_eff, &f, StreamNormalization::PerStream).unwrap();
        let oracle: f64 = pattern_sinrs(&channels, &(&f * &zf.baseband), &w, cfg.noise_var)
            .iter()
            .map(|s| (1.0 + s).log2())
            .sum();
        assert!((r.total - oracle).abs() < 1e-12);
        assert_eq!(r.index_bits, 0.0);
    }

    /// Two well-separated paths, one user, large arrays: the SPIM advantage
    /// changes sign near `gamma1 = 4 gamma2`.
    #[test]
    fn analytic_crossing_single_user() {
        let cfg = ScenarioConfig {
            n_tx: 64,
            n_rx: 16,
            users: 1,
            paths: 2,
            ..Default::default()
        }
        .with_snr_db(30.0);
        let geometry = PathSet {
            users: vec![vec![
                Path { aoa: 40.0, aod: 45.0, gain: 0.0 },
                Path { aoa: 110.0, aod: 100.0, gain: 0.0 },
            ]],
        };
        let options = DesignOptions {
            altmin: AltMinConfig::default(),
            ..Default::default()
        };
        let advantage = |g1: f64| {
            let paths = geometry.with_gains(&[g1, 1.0 - g1]);
            let channels = synthesize_all(&paths, &cfg);
            let bank = spim::build_bank(&cfg, &channels, &options).unwrap();
            let s = spim_rate(&bank, &channels, cfg.noise_var, true).unwrap().total;
            let m = mmwave_rate(&cfg, &channels, &paths, &options, cfg.noise_var).unwrap().total;
            s - m
        };
        assert!(advantage(0.75) > 0.0);
        assert!(advantage(0.85) < 0.0);
    }

    #[test]
    fn pairwise_mean_and_std() {
        let v: Vec<f64> = (1..=20).map(|x| x as f64).collect();
        let (m, s) = mean_std(&v);
        assert_eq!(m, 10.5);
        let oracle = (v.iter().map(|x| (x - 10.5f64).powi(2)).sum::<f64>() / 19.0).sqrt();
        assert!((s - oracle).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn crossing_interpolates() {
        let a = vec![(0.0, 1.0), (1.0, 1.0)];
        let b = vec![(0.0, 2.0), (1.0, 0.0)];
        assert_eq!(crossing(&a, &b), Some(0.5));
        assert_eq!(crossing(&a, &a.iter().map(|p| (p.0, 3.0)).collect::<Vec<_>>()), None);
    }

    #[test]
    fn sweep_is_reproducible() {
        let spec = SweepSpec {
            kind: SweepKind::Snr,
            grid: vec![0.0, 10.0],
            trials: 1,
            methods: vec![Method::SpimMo, Method::Wang, Method::MmWave],
            gains: vec![0.5, 0.5],
            snr_db: 20.0,
            include_index_bits: true,
            seed: 9,
        };
        let cfg = desk();
        let a = sweep(&cfg, &DesignOptions::default(), &spec, None).unwrap();
        let b = sweep(&cfg, &DesignOptions::default(), &spec, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let mut buf = Vec::new();
        write_sweep_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,method,mean_se,std_se,trials,seed\n"));
    }

    #[test]
    fn sweep_rejects_bad_specs() {
        let mut spec = SweepSpec {
            kind: SweepKind::Gamma1,
            grid: vec![],
            trials: 1,
            methods: vec![Method::SpimMo],
            gains: vec![0.5, 0.5],
            snr_db: 20.0,
            include_index_bits: true,
            seed: 0,
        };
        assert_eq!(sweep(&desk(), &DesignOptions::default(), &spec, None).unwrap_err().exit_code(), 2);
        spec.grid = vec![0.5];
        spec.methods = vec![Method::SpimFl];
        assert!(sweep(&desk(), &DesignOptions::default(), &spec, None).is_err());
    }
}
