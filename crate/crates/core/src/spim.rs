//! Spatial patterns and the per-pattern hybrid beamformer bank.
//!
//! Each user gets `M` analog precoder columns and `M` analog combiner columns
//! from the alternating-minimization fits. A spatial pattern picks one column
//! per user; the baseband precoder for that pattern zero-forces the resulting
//! `U x U` effective channel.

use std::fmt;

use itertools::Itertools;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::manifold::{self, AltMinConfig, CombinerSolution, PrecoderSolution};
use crate::rng::{self, label};

/// Largest pattern count the bank will enumerate.
pub const MAX_PATTERNS: usize = 1 << 20;

/// Largest `M` for which combiner columns are paired by exhaustive search.
const MAX_PAIRING_PATHS: usize = 8;

/// One joint path choice, `choice[u]` in `0..M` (0-based). `index` is the
/// mixed-radix rank with user 0 most significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpatialPattern {
    pub index: usize,
    pub choice: Vec<usize>,
}

impl SpatialPattern {
    pub fn from_index(index: usize, paths: usize, users: usize) -> Self {
        let mut choice = vec![0; users];
        let mut rest = index;
        for u in (0..users).rev() {
            choice[u] = rest % paths;
            rest /= paths;
        }
        Self { index, choice }
    }

    pub fn from_choice(choice: &[usize], paths: usize) -> Self {
        let index = choice.iter().fold(0, |acc, &c| acc * paths + c);
        Self {
            index,
            choice: choice.to_vec(),
        }
    }
}

/// Prints the 1-based tuple, e.g. `(2,1)`.
impl fmt::Display for SpatialPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.choice.iter().map(|c| c + 1).join(","))
    }
}

pub fn pattern_count(paths: usize, users: usize) -> Result<usize> {
    if paths == 0 || users == 0 {
        return Err(Error::Config("paths and users must be at least 1".into()));
    }
    let mut count: usize = 1;
    for _ in 0..users {
        count = count
            .checked_mul(paths)
            .filter(|&c| c <= MAX_PATTERNS)
            .ok_or_else(|| Error::Config(format!("paths^users exceeds the limit of {MAX_PATTERNS} patterns")))?;
    }
    Ok(count)
}

pub fn enumerate_patterns(paths: usize, users: usize) -> Result<Vec<SpatialPattern>> {
    let count = pattern_count(paths, users)?;
    Ok((0..count)
        .map(|i| SpatialPattern::from_index(i, paths, users))
        .collect())
}

/// A length-`M` one-hot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionVector {
    pub b: Vec<f64>,
}

impl SelectionVector {
    pub fn new(paths: usize, selected: usize) -> Result<Self> {
        if selected >= paths {
            return Err(Error::InvalidInput(format!("path {selected} out of range for M = {paths}")));
        }
        let mut b = vec![0.0; paths];
        b[selected] = 1.0;
        Ok(Self { b })
    }

    pub fn apply(&self, x: &CMatrix) -> CVector {
        let b = CVector::from_iterator(self.b.len(), self.b.iter().map(|&v| Complex64::new(v, 0.0)));
        x * b
    }
}

/// Which unconstrained beamformers the analog fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignTarget {
    /// The `M` leading right singular vectors and their MMSE combiners, so
    /// each analog column tracks one path.
    #[default]
    Modes,
    /// The dominant right singular vector and its MMSE combiner only.
    Dominant,
}

/// How the zero-forcing baseband is scaled before the global power fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamNormalization {
    /// Unit-norm columns (one per stream); keeps `H_eff F_BB` diagonal.
    #[default]
    PerStream,
    /// Unit-norm rows (one per RF chain).
    PerRfChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignOptions {
    pub altmin: AltMinConfig,
    pub target: DesignTarget,
    pub normalization: StreamNormalization,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            altmin: AltMinConfig::default(),
            target: DesignTarget::Modes,
            normalization: StreamNormalization::PerStream,
        }
    }
}

impl DesignOptions {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            altmin: self.altmin.with_seed(seed),
            ..self.clone()
        }
    }
}

/// Per-user analog fits: `M` precoder columns and `M` combiner columns,
/// with column `m` of each serving the same path.
#[derive(Debug, Clone)]
pub struct UserDesign {
    pub precoder: PrecoderSolution,
    pub combiner: CombinerSolution,
}

impl UserDesign {
    pub fn precoder_columns(&self) -> &CMatrix {
        self.precoder.analog.matrix()
    }

    pub fn combiner_columns(&self) -> &CMatrix {
        self.combiner.analog.matrix()
    }
}

#[derive(Debug, Clone)]
pub struct PatternDesign {
    pub pattern: SpatialPattern,
    /// `N_T x U` analog precoder.
    pub analog: CMatrix,
    /// `U x U` normalized baseband precoder.
    pub baseband: CMatrix,
    /// One analog combiner per user.
    pub combiners: Vec<CVector>,
    /// `||H_eff H_eff^-1 - I||_F` before normalization.
    pub zf_residual: f64,
    pub condition: f64,
}

impl PatternDesign {
    pub fn precoder(&self) -> CMatrix {
        &self.analog * &self.baseband
    }

    pub fn power(&self) -> f64 {
        self.precoder().norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct BeamformerBank {
    pub paths: usize,
    pub users: Vec<UserDesign>,
    /// Usable patterns in index order.
    pub patterns: Vec<PatternDesign>,
    /// Indices of patterns whose effective channel could not be inverted.
    pub excluded: Vec<usize>,
}

impl BeamformerBank {
    pub fn pattern(&self, index: usize) -> Option<&PatternDesign> {
        self.patterns
            .binary_search_by_key(&index, |p| p.pattern.index)
            .ok()
            .map(|k| &self.patterns[k])
    }
}

/// Copy column `choice[u]` of user `u`'s analog precoder and combiner.
pub fn select_pattern(
    precoders: &[&CMatrix],
    combiners: &[&CMatrix],
    pattern: &SpatialPattern,
) -> (CMatrix, Vec<CVector>) {
    let n_t = precoders[0].nrows();
    let mut analog = CMatrix::zeros(n_t, pattern.choice.len());
    let mut w = Vec::with_capacity(pattern.choice.len());
    for (u, &m) in pattern.choice.iter().enumerate() {
        analog.set_column(u, &precoders[u].column(m));
        w.push(combiners[u].column(m).into_owned());
    }
    (analog, w)
}

/// Row `u` is `w_u^H H_u F_RF`.
pub fn effective_channel(channels: &[CMatrix], combiners: &[CVector], analog: &CMatrix) -> CMatrix {
    let users = channels.len();
    let mut h_eff = CMatrix::zeros(users, analog.ncols());
    for u in 0..users {
        let row = combiners[u].adjoint() * &channels[u] * analog;
        h_eff.set_row(u, &row);
    }
    h_eff
}

#[derive(Debug, Clone)]
pub struct ZeroForcing {
    pub baseband: CMatrix,
    pub residual: f64,
    pub condition: f64,
}

/// `F_BB = H_eff^-1`, normalized per `normalization`, then scaled so that
/// `||F_RF F_BB||_F^2 = U`.
pub fn baseband_zf(h_eff: &CMatrix, analog: &CMatrix, normalization: StreamNormalization) -> Result<ZeroForcing> {
    let users = h_eff.nrows();
    let condition = linalg::condition_number(h_eff)?;
    let inv = linalg::inverse(h_eff, "effective channel")?;
    let residual = (h_eff * &inv - CMatrix::identity(users, users)).norm();
    let mut fbb = inv;
    match normalization {
        StreamNormalization::PerStream => {
            for mut col in fbb.column_iter_mut() {
                let n = col.norm();
                col /= Complex64::new(n, 0.0);
            }
        }
        StreamNormalization::PerRfChain => {
            for mut row in fbb.row_iter_mut() {
                let n = row.norm();
                row /= Complex64::new(n, 0.0);
            }
        }
    }
    let power = (analog * &fbb).norm_squared();
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Singular {
            context: "precoder power",
            condition,
            pattern: None,
        });
    }
    fbb *= Complex64::new((users as f64 / power).sqrt(), 0.0);
    Ok(ZeroForcing {
        baseband: fbb,
        residual,
        condition,
    })
}

fn check_channels(channels: &[CMatrix], scenario: &ScenarioConfig) -> Result<()> {
    if channels.len() != scenario.users {
        return Err(Error::InvalidInput(format!(
            "expected {} channels, got {}",
            scenario.users,
            channels.len()
        )));
    }
    for (u, h) in channels.iter().enumerate() {
        if h.nrows() != scenario.n_rx || h.ncols() != scenario.n_tx {
            return Err(Error::InvalidInput(format!(
                "channel {u} is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                scenario.n_rx,
                scenario.n_tx
            )));
        }
        if linalg::frob_norm(h) == 0.0 {
            return Err(Error::InvalidInput(format!("channel {u} is zero")));
        }
    }
    Ok(())
}

/// Reorder combiner columns so that column `m` maximizes the summed gain
/// `sum_m |w_m^H H f_m|^2` against precoder column `m`.
fn pair_columns(h: &CMatrix, precoder: &PrecoderSolution, combiner: &mut CombinerSolution) {
    let m = precoder.analog.ncols();
    if m == 1 || m > MAX_PAIRING_PATHS {
        return;
    }
    let cross = combiner.analog.matrix().adjoint() * h * precoder.analog.matrix();
    let gain = |perm: &[usize]| -> f64 { (0..m).map(|k| cross[(perm[k], k)].norm_sqr()).sum() };
    let mut best: Vec<usize> = (0..m).collect();
    let mut best_gain = gain(&best);
    for perm in (0..m).permutations(m) {
        let g = gain(&perm);
        if g > best_gain {
            best_gain = g;
            best = perm;
        }
    }
    if best.iter().enumerate().all(|(k, &p)| k == p) {
        return;
    }
    let old_x = combiner.analog.matrix().clone();
    let old_b = combiner.baseband.clone();
    let mut x = old_x.clone();
    let mut b = old_b.clone();
    for (k, &p) in best.iter().enumerate() {
        x.set_column(k, &old_x.column(p));
        b.set_row(k, &old_b.row(p));
    }
    combiner.analog = manifold::UnitModulusMatrix::from_phases_of(&x);
    combiner.baseband = b;
}

/// Fit the per-user analog precoder and combiner columns.
pub fn design_user(h: &CMatrix, paths: usize, noise_var: f64, options: &DesignOptions, user: usize) -> Result<UserDesign> {
    let k = match options.target {
        DesignTarget::Modes => paths,
        DesignTarget::Dominant => 1,
    };
    let target = manifold::optimal_precoders(h, k)?;
    let seed = options.altmin.seed;
    let precoder = manifold::alt_min_precoder(
        &target,
        paths,
        &options
            .altmin
            .with_seed(rng::derive(seed, &[label::PRECODER_INIT, user as u64])),
    )?;
    let streams = precoder.analog.matrix() * &precoder.baseband;
    let w_target = manifold::mmse_combiners(h, &streams, noise_var)?;
    let lambda = manifold::covariance_lambda_y(h, precoder.analog.matrix(), &precoder.baseband, noise_var);
    let combiner_config = options
        .altmin
        .with_seed(rng::derive(seed, &[label::COMBINER_INIT, user as u64]));
    // the matched response of each analog precoder column points at its path
    let matched = h * precoder.analog.matrix();
    let mut combiner = if matched.iter().all(|z| z.norm() > 0.0) {
        manifold::alt_min_combiner_hinted(&w_target, &lambda, &matched, &combiner_config)?
    } else {
        manifold::alt_min_combiner(&w_target, &lambda, paths, &combiner_config)?
    };
    pair_columns(h, &precoder, &mut combiner);
    Ok(UserDesign { precoder, combiner })
}

pub fn design_users(
    channels: &[CMatrix],
    paths: usize,
    noise_var: f64,
    options: &DesignOptions,
) -> Result<Vec<UserDesign>> {
    channels
        .par_iter()
        .enumerate()
        .map(|(u, h)| design_user(h, paths, noise_var, options, u))
        .collect()
}

/// Design one pattern's baseband against `channels`.
pub fn design_pattern(
    channels: &[CMatrix],
    users: &[UserDesign],
    pattern: &SpatialPattern,
    normalization: StreamNormalization,
) -> Result<PatternDesign> {
    let precoders: Vec<&CMatrix> = users.iter().map(|d| d.precoder_columns()).collect();
    let combiners: Vec<&CMatrix> = users.iter().map(|d| d.combiner_columns()).collect();
    let (analog, w) = select_pattern(&precoders, &combiners, pattern);
    let h_eff = effective_channel(channels, &w, &analog);
    let zf = baseband_zf(&h_eff, &analog, normalization).map_err(|e| e.with_pattern(pattern.index))?;
    Ok(PatternDesign {
        pattern: pattern.clone(),
        analog,
        baseband: zf.baseband,
        combiners: w,
        zf_residual: zf.residual,
        condition: zf.condition,
    })
}

/// Zero-force every pattern against `channels` using the given analog fits.
/// Patterns with a singular effective channel are excluded with a warning.
pub fn assemble_bank(
    channels: &[CMatrix],
    users: Vec<UserDesign>,
    paths: usize,
    normalization: StreamNormalization,
) -> Result<BeamformerBank> {
    let patterns = enumerate_patterns(paths, channels.len())?;
    let results: Vec<Result<PatternDesign>> = patterns
        .par_iter()
        .map(|p| design_pattern(channels, &users, p, normalization))
        .collect();
    let mut designed = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for (p, r) in patterns.iter().zip(results) {
        match r {
            Ok(d) => designed.push(d),
            Err(e @ Error::Singular { .. }) => {
                log::warn!("excluding pattern {}: {e}", p);
                excluded.push(p.index);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BeamformerBank {
        paths,
        users,
        patterns: designed,
        excluded,
    })
}

/// Full model-based design: per-user analog fits, then per-pattern
/// zero-forcing.
pub fn build_bank(scenario: &ScenarioConfig, channels: &[CMatrix], options: &DesignOptions) -> Result<BeamformerBank> {
    scenario.validate()?;
    check_channels(channels, scenario)?;
    let users = design_users(channels, scenario.paths, scenario.noise_var, options)?;
    assemble_bank(channels, users, scenario.paths, options.normalization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_paths, synthesize_all};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_cmatrix(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn desk_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_tx: 32,
            n_rx: 4,
            users: 2,
            paths: 2,
            noise_var: 0.01,
            ..Default::default()
        }
    }

    fn tuples(p: &[SpatialPattern]) -> Vec<Vec<usize>> {
        p.iter().map(|p| p.choice.iter().map(|c| c + 1).collect()).collect()
    }

    #[test]
    fn enumerates_mixed_radix() {
        let p = enumerate_patterns(2, 2).unwrap();
        assert_eq!(tuples(&p), vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]);
        assert_eq!(p[2].to_string(), "(2,1)");
        let single = enumerate_patterns(1, 5).unwrap();
        assert_eq!(tuples(&single), vec![vec![1; 5]]);
        assert_eq!(enumerate_patterns(2, 8).unwrap().len(), 256);
        for p in enumerate_patterns(3, 4).unwrap() {
            assert_eq!(SpatialPattern::from_choice(&p.choice, 3), p);
        }
    }

    #[test]
    fn pattern_guard_is_config_error() {
        let err = enumerate_patterns(2, 21).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(enumerate_patterns(2, 20).is_ok());
        assert!(enumerate_patterns(0, 2).is_err());
    }

    #[test]
    fn selection_copies_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = random_cmatrix(6, 2, &mut rng);
        let f2 = random_cmatrix(6, 2, &mut rng);
        let w1 = random_cmatrix(3, 2, &mut rng);
        let w2 = random_cmatrix(3, 2, &mut rng);
        let pattern = SpatialPattern::from_choice(&[1, 0], 2);
        let (analog, w) = select_pattern(&[&f1, &f2], &[&w1, &w2], &pattern);
        assert_eq!(analog.column(0), f1.column(1));
        assert_eq!(analog.column(1), f2.column(0));
        assert_eq!(w[0], w1.column(1).into_owned());
        assert_eq!(w[1], w2.column(0).into_owned());

        let m1 = random_cmatrix(6, 1, &mut rng);
        let m2 = random_cmatrix(6, 1, &mut rng);
        let (analog, _) = select_pattern(&[&m1, &m2], &[&w1, &w2], &SpatialPattern::from_choice(&[0, 0], 1));
        assert_eq!(analog.column(0), m1.column(0));
        assert_eq!(analog.column(1), m2.column(0));
    }

    #[test]
    fn selection_vector_matches_column_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cmatrix(8, 4, &mut rng);
        for m in 0..4 {
            let b = SelectionVector::new(4, m).unwrap();
            assert_eq!(b.b.iter().filter(|&&v| v == 1.0).count(), 1);
            // exact: one-hot products add zeros only
            assert_eq!(b.apply(&x), x.column(m).into_owned());
        }
        assert!(SelectionVector::new(2, 2).is_err());
    }

    #[test]
    fn effective_channel_examples() {
        let h = vec![CMatrix::from_element(1, 1, c(2.0, 0.0))];
        let w = vec![CVector::from_element(1, c(1.0, 0.0))];
        let f = CMatrix::from_element(1, 1, c(1.0, 0.0));
        assert_eq!(effective_channel(&h, &w, &f)[(0, 0)], c(2.0, 0.0));

        let zeros = vec![CMatrix::zeros(3, 4), CMatrix::zeros(3, 4)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = vec![random_cmatrix(3, 1, &mut rng).column(0).into_owned(); 2];
        let f = random_cmatrix(4, 2, &mut rng);
        assert_eq!(effective_channel(&zeros, &w, &f), CMatrix::zeros(2, 2));
    }

    #[test]
    fn effective_channel_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = vec![random_cmatrix(3, 5, &mut rng), random_cmatrix(3, 5, &mut rng)];
        let w = vec![
            random_cmatrix(3, 1, &mut rng).column(0).into_owned(),
            random_cmatrix(3, 1, &mut rng).column(0).into_owned(),
        ];
        let f = random_cmatrix(5, 2, &mut rng);
        let fast = effective_channel(&h, &w, &f);
        for u in 0..2 {
            for v in 0..2 {
                let mut acc = c(0.0, 0.0);
                for r in 0..3 {
                    for t in 0..5 {
                        acc += w[u][r].conj() * h[u][(r, t)] * f[(t, v)];
                    }
                }
                assert!((fast[(u, v)] - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zf_identity_and_diagonal() {
        let analog = CMatrix::identity(2, 2);
        let zf = baseband_zf(&CMatrix::identity(2, 2), &analog, StreamNormalization::PerRfChain).unwrap();
        let scale = zf.baseband[(0, 0)];
        assert!((zf.baseband.clone() - CMatrix::identity(2, 2) * scale).norm() < 1e-14);

        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(2.0, 0.0), c(4.0, 0.0)]));
        for norm in [StreamNormalization::PerRfChain, StreamNormalization::PerStream] {
            let zf = baseband_zf(&d, &analog, norm).unwrap();
            // unit rows, then the global scalar: ||I||^2 = 2 already
            assert!((zf.baseband.clone() - CMatrix::identity(2, 2)).norm() < 1e-14);
            assert!(zf.residual < 1e-14);
        }
    }

    #[test]
    fn zf_rows_proportional_to_inverse() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.2, 0.0), c(1.0, 0.0)]);
        let exact = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(-0.5, 0.0), c(-0.2, 0.0), c(1.0, 0.0)]) / c(0.9, 0.0);
        let analog = CMatrix::identity(2, 2);
        let zf = baseband_zf(&h, &analog, StreamNormalization::PerRfChain).unwrap();
        for r in 0..2 {
            let ratio = zf.baseband[(r, 0)] / exact[(r, 0)];
            for k in 0..2 {
                assert!((zf.baseband[(r, k)] - exact[(r, k)] * ratio).norm() < 1e-10);
            }
        }
        assert!((zf.baseband.norm_squared() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn per_stream_keeps_interference_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_cmatrix(3, 3, &mut rng);
        let analog = random_cmatrix(8, 3, &mut rng);
        let zf = baseband_zf(&h, &analog, StreamNormalization::PerStream).unwrap();
        let g = &h * &zf.baseband;
        for r in 0..3 {
            for k in 0..3 {
                if r != k {
                    assert!(g[(r, k)].norm() < 1e-12 * g[(r, r)].norm());
                }
            }
        }
        assert!(((&analog * &zf.baseband).norm_squared() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn singular_effective_channel_reports_pattern() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        let err = baseband_zf(&h, &CMatrix::identity(2, 2), StreamNormalization::PerStream)
            .map_err(|e| e.with_pattern(3))
            .unwrap_err();
        match err {
            Error::Singular { pattern, .. } => assert_eq!(pattern, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn desk_bank(seed: u64) -> (ScenarioConfig, Vec<CMatrix>, BeamformerBank) {
        let cfg = desk_scenario();
        let paths = draw_paths(&cfg, Some(&[0.5, 0.5]), &mut rng::stream(seed, &[label::TRIAL])).unwrap();
        let channels = synthesize_all(&paths, &cfg);
        let bank = build_bank(&cfg, &channels, &DesignOptions::default().with_seed(seed)).unwrap();
        (cfg, channels, bank)
    }

    #[test]
    fn bank_invariants() {
        for seed in 0..3 {
            let (cfg, _, bank) = desk_bank(seed);
            assert_eq!(bank.patterns.len() + bank.excluded.len(), 4);
            for d in &bank.patterns {
                assert!((d.power() - cfg.users as f64).abs() < 1e-8);
                assert!(d.zf_residual < 1e-8);
                let n_t = cfg.n_tx as f64;
                assert!(d.analog.iter().all(|z| (z.norm() - 1.0 / n_t.sqrt()).abs() < 1e-12));
                let n_r = cfg.n_rx as f64;
                assert!(d.combiners.iter().flatten().all(|z| (z.norm() - 1.0 / n_r.sqrt()).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn bank_is_deterministic() {
        let (_, _, a) = desk_bank(7);
        let (_, _, b) = desk_bank(7);
        for (x, y) in a.patterns.iter().zip(&b.patterns) {
            assert_eq!(x.analog, y.analog);
            assert_eq!(x.baseband, y.baseband);
            assert_eq!(x.combiners, y.combiners);
        }
    }

    #[test]
    fn single_path_bank_has_one_pattern() {
        let cfg = ScenarioConfig {
            paths: 1,
            ..desk_scenario()
        };
        let paths = draw_paths(&cfg, None, &mut rng::stream(1, &[])).unwrap();
        let channels = synthesize_all(&paths, &cfg);
        let bank = build_bank(&cfg, &channels, &DesignOptions::default()).unwrap();
        assert_eq!(bank.patterns.len(), 1);
        assert_eq!(bank.patterns[0].pattern.choice, vec![0, 0]);
    }

    #[test]
    fn paired_columns_follow_paths() {
        // each precoder column should pair with the combiner column of the same path
        let (cfg, channels, bank) = desk_bank(11);
        for (u, d) in bank.users.iter().enumerate() {
            let cross = d.combiner_columns().adjoint() * &channels[u] * d.precoder_columns();
            for m in 0..cfg.paths {
                let own = cross[(m, m)].norm_sqr();
                for k in 0..cfg.paths {
                    if k != m {
                        assert!(own >= cross[(k, m)].norm_sqr());
                    }
                }
            }
        }
    }
}
