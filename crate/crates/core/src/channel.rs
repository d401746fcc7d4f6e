//! Clustered mmWave channels for a uniform linear array with sectorized
//! user geometry.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Base-station antennas.
    pub n_tx: usize,
    /// Antennas per user.
    pub n_rx: usize,
    pub users: usize,
    /// Propagation paths per user.
    pub paths: usize,
    /// Noise variance (linear). The operating SNR is `1 / noise_var`.
    pub noise_var: f64,
    /// Angular domain in degrees.
    pub theta_min: f64,
    pub theta_max: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tx: 128,
            n_rx: 9,
            users: 8,
            paths: 2,
            noise_var: 0.01,
            theta_min: 30.0,
            theta_max: 150.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.users == 0 {
            return fail("users must be at least 1".into());
        }
        if self.paths == 0 {
            return fail("paths must be at least 1".into());
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return fail("antenna counts must be positive".into());
        }
        if self.users * self.paths > self.n_tx {
            return fail(format!(
                "users*paths = {} exceeds n_tx = {}",
                self.users * self.paths,
                self.n_tx
            ));
        }
        if !(self.theta_min < self.theta_max) {
            return fail(format!(
                "theta_min ({}) must be below theta_max ({})",
                self.theta_min, self.theta_max
            ));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return fail(format!("noise_var must be positive, got {}", self.noise_var));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        -10.0 * self.noise_var.log10()
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = 10f64.powf(-snr_db / 10.0);
        self
    }
}

/// Half-open angular interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub lo: f64,
    pub hi: f64,
}

impl Sector {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.lo && angle <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Angle of arrival at the user array, degrees.
    pub aoa: f64,
    /// Angle of departure from the base-station array, degrees.
    pub aod: f64,
    pub gain: f64,
}

/// Per-user path geometry, `users[u][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub users: Vec<Vec<Path>>,
}

impl PathSet {
    /// Index of the path with the largest gain; ties go to the lowest index.
    pub fn strongest(&self, user: usize) -> usize {
        let paths = &self.users[user];
        let mut best = 0;
        for (m, p) in paths.iter().enumerate().skip(1) {
            if p.gain > paths[best].gain {
                best = m;
            }
        }
        best
    }

    /// The same geometry keeping only the given path of each user.
    pub fn restricted(&self, choice: &[usize]) -> PathSet {
        PathSet {
            users: self
                .users
                .iter()
                .zip(choice)
                .map(|(paths, &m)| vec![paths[m]])
                .collect(),
        }
    }

    pub fn strongest_paths(&self) -> PathSet {
        let choice: Vec<usize> = (0..self.users.len()).map(|u| self.strongest(u)).collect();
        self.restricted(&choice)
    }

    pub fn with_gains(&self, gains: &[f64]) -> PathSet {
        PathSet {
            users: self
                .users
                .iter()
                .map(|paths| {
                    paths
                        .iter()
                        .zip(gains)
                        .map(|(p, &g)| Path { gain: g, ..*p })
                        .collect()
                })
                .collect(),
        }
    }
}

/// ULA response: element `n` is `exp(-j pi n sin(angle)) / sqrt(N)`.
pub fn steering_vector(n: usize, angle_deg: f64) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    let s = angle_deg.to_radians().sin();
    CVector::from_iterator(
        n,
        (0..n).map(|k| Complex64::from_polar(scale, -std::f64::consts::PI * k as f64 * s)),
    )
}

/// Equal-width contiguous sectors of `[theta_min, theta_max]`, one per user.
/// Arrival and departure angles use the same partition.
pub fn partition_sectors(config: &ScenarioConfig) -> (Vec<Sector>, Vec<Sector>) {
    let width = (config.theta_max - config.theta_min) / config.users as f64;
    let sectors: Vec<Sector> = (0..config.users)
        .map(|u| {
            let lo = config.theta_min + width * u as f64;
            let hi = if u + 1 == config.users {
                config.theta_max
            } else {
                config.theta_min + width * (u + 1) as f64
            };
            Sector { lo, hi }
        })
        .collect();
    (sectors.clone(), sectors)
}

/// Draw per-user path angles uniformly within each user's sector.
///
/// With `gains` supplied every user gets the same gain vector; otherwise the
/// gains are i.i.d. exponential with mean `1 / paths`. Angles are drawn
/// before gains, so the geometry for a given stream is the same either way.
pub fn draw_paths<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    gains: Option<&[f64]>,
    rng: &mut R,
) -> Result<PathSet> {
    if let Some(g) = gains {
        if g.len() != config.paths {
            return Err(Error::Config(format!(
                "expected {} path gains, got {}",
                config.paths,
                g.len()
            )));
        }
        if g.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("path gains must be >= 0, got {g:?}")));
        }
    }
    let (aoa_sectors, aod_sectors) = partition_sectors(config);
    let mut users = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let mut paths = Vec::with_capacity(config.paths);
        for _ in 0..config.paths {
            let aoa = rng.random_range(aoa_sectors[u].lo..aoa_sectors[u].hi);
            let aod = rng.random_range(aod_sectors[u].lo..aod_sectors[u].hi);
            paths.push(Path { aoa, aod, gain: 0.0 });
        }
        users.push(paths);
    }
    for paths in users.iter_mut() {
        for (m, p) in paths.iter_mut().enumerate() {
            p.gain = match gains {
                Some(g) => g[m],
                None => {
                    let e: f64 = Exp1.sample(rng);
                    e / config.paths as f64
                }
            };
        }
    }
    Ok(PathSet { users })
}

/// `H_u = sum_m sqrt(gain_m) a_R(aoa_m) a_T(aod_m)^H`, an `n_rx x n_tx` matrix.
pub fn synthesize_channel(paths: &PathSet, user: usize, config: &ScenarioConfig) -> CMatrix {
    let mut h = CMatrix::zeros(config.n_rx, config.n_tx);
    for p in &paths.users[user] {
        let a_r = steering_vector(config.n_rx, p.aoa);
        let a_t = steering_vector(config.n_tx, p.aod);
        h += (a_r * a_t.adjoint()) * Complex64::new(p.gain.sqrt(), 0.0);
    }
    h
}

pub fn synthesize_all(paths: &PathSet, config: &ScenarioConfig) -> Vec<CMatrix> {
    (0..paths.users.len())
        .map(|u| synthesize_channel(paths, u, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob_norm, svd_thin};
    use crate::rng;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_vector_examples() {
        let v = steering_vector(4, 0.0);
        assert!(v.iter().all(|&z| close(z, Complex64::new(0.5, 0.0))));

        let v = steering_vector(2, 90.0);
        let r = 1.0 / 2f64.sqrt();
        assert!(close(v[0], Complex64::new(r, 0.0)) && close(v[1], Complex64::new(-r, 0.0)));

        let v = steering_vector(4, 30.0);
        let expected = [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, -0.5),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, 0.5),
        ];
        for (z, e) in v.iter().zip(expected) {
            assert!(close(*z, e), "{z} vs {e}");
        }
    }

    #[test]
    fn sectors() {
        let mut cfg = ScenarioConfig {
            users: 2,
            ..Default::default()
        };
        let (aoa, aod) = partition_sectors(&cfg);
        assert_eq!(aoa, vec![Sector { lo: 30.0, hi: 90.0 }, Sector { lo: 90.0, hi: 150.0 }]);
        assert_eq!(aoa, aod);

        cfg.users = 8;
        let (aoa, _) = partition_sectors(&cfg);
        assert_eq!(aoa[0], Sector { lo: 30.0, hi: 45.0 });
        assert!(aoa.iter().all(|s| (s.hi - s.lo - 15.0).abs() < 1e-12));
        assert_eq!(aoa[7].hi, 150.0);

        cfg.users = 1;
        let (aoa, _) = partition_sectors(&cfg);
        assert_eq!(aoa, vec![Sector { lo: 30.0, hi: 150.0 }]);
    }

    #[test]
    fn fixed_gains_are_shared_across_users() {
        let cfg = ScenarioConfig::default();
        let mut rng = rng::stream(3, &[]);
        let paths = draw_paths(&cfg, Some(&[0.5, 0.5]), &mut rng).unwrap();
        assert!(paths.users.iter().flatten().all(|p| p.gain == 0.5));
        let paths = draw_paths(&cfg, Some(&[0.8, 0.2]), &mut rng).unwrap();
        assert!(paths.users.iter().all(|p| p[0].gain == 0.8 && p[1].gain == 0.2));
    }

    #[test]
    fn angles_stay_in_their_sector() {
        let cfg = ScenarioConfig::default();
        let paths = draw_paths(&cfg, None, &mut rng::stream(9, &[])).unwrap();
        let (aoa, aod) = partition_sectors(&cfg);
        for (u, ps) in paths.users.iter().enumerate() {
            for p in ps {
                assert!(aoa[u].contains(p.aoa) && aod[u].contains(p.aod));
                assert!(p.gain >= 0.0);
            }
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = draw_paths(&cfg, None, &mut rng::stream(1, &[4])).unwrap();
        let b = draw_paths(&cfg, None, &mut rng::stream(1, &[4])).unwrap();
        assert_eq!(a, b);
        let ha = synthesize_all(&a, &cfg);
        let hb = synthesize_all(&b, &cfg);
        assert_eq!(ha, hb);
    }

    #[test]
    fn wrong_gain_count_is_a_config_error() {
        let cfg = ScenarioConfig::default();
        let err = draw_paths(&cfg, Some(&[1.0]), &mut rng::stream(0, &[])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_unit_path_norm() {
        let cfg = ScenarioConfig {
            n_tx: 16,
            n_rx: 4,
            users: 1,
            paths: 1,
            ..Default::default()
        };
        let paths = draw_paths(&cfg, Some(&[1.0]), &mut rng::stream(2, &[])).unwrap();
        let h = synthesize_channel(&paths, 0, &cfg);
        let p = paths.users[0][0];
        let expected = steering_vector(4, p.aoa).norm() * steering_vector(16, p.aod).norm();
        assert!((frob_norm(&h) - expected).abs() < 1e-12);
        let s = svd_thin(&h).unwrap().s;
        assert!(s[1] < 1e-9 * s[0]);
    }

    #[test]
    fn zero_gains_give_zero_channel() {
        let cfg = ScenarioConfig::default();
        let paths = draw_paths(&cfg, Some(&[0.0, 0.0]), &mut rng::stream(2, &[])).unwrap();
        assert_eq!(frob_norm(&synthesize_channel(&paths, 3, &cfg)), 0.0);
    }

    #[test]
    fn outer_product_sum_matches_steering_matrix_form() {
        let cfg = ScenarioConfig {
            n_tx: 12,
            n_rx: 3,
            users: 2,
            paths: 3,
            ..Default::default()
        };
        let paths = draw_paths(&cfg, None, &mut rng::stream(8, &[])).unwrap();
        for u in 0..cfg.users {
            let ps = &paths.users[u];
            let mut a_r = CMatrix::zeros(cfg.n_rx, ps.len());
            let mut a_t = CMatrix::zeros(cfg.n_tx, ps.len());
            let mut sigma = CMatrix::zeros(ps.len(), ps.len());
            for (m, p) in ps.iter().enumerate() {
                a_r.set_column(m, &steering_vector(cfg.n_rx, p.aoa));
                a_t.set_column(m, &steering_vector(cfg.n_tx, p.aod));
                sigma[(m, m)] = Complex64::new(p.gain.sqrt(), 0.0);
            }
            let h = a_r * sigma * a_t.adjoint();
            assert!(frob_norm(&(h - synthesize_channel(&paths, u, &cfg))) < 1e-12);
        }
    }

    #[test]
    fn strongest_path_ties_go_to_first() {
        let p = |g| Path {
            aoa: 40.0,
            aod: 40.0,
            gain: g,
        };
        let set = PathSet {
            users: vec![vec![p(0.5), p(0.5)], vec![p(0.2), p(0.8)]],
        };
        assert_eq!(set.strongest(0), 0);
        assert_eq!(set.strongest(1), 1);
    }

    #[test]
    fn config_validation() {
        let ok = ScenarioConfig::default();
        assert!(ok.validate().is_ok());
        let bad = ScenarioConfig { users: 0, ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig {
            users: 65,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig {
            theta_min: 150.0,
            theta_max: 30.0,
            ..ok
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn steering_vectors_have_unit_norm(n in 1usize..200, angle in -360.0f64..360.0) {
            prop_assert!((steering_vector(n, angle).norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn channel_rank_is_bounded_by_paths(seed in 0u64..500, paths in 1usize..4) {
            let cfg = ScenarioConfig { n_tx: 16, n_rx: 6, users: 2, paths, ..Default::default() };
            let set = draw_paths(&cfg, None, &mut rng::stream(seed, &[])).unwrap();
            let s = svd_thin(&synthesize_channel(&set, 1, &cfg)).unwrap().s;
            let rank = s.iter().filter(|&&x| x > 1e-9 * s[0]).count();
            prop_assert!(rank <= paths);
        }
    }
}
