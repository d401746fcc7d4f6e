//! Constant-modulus least squares on the product of complex circles.
//!
//! Both hybrid-design problems have the same shape: given a target `T`
//! (`N x K`) and an optional Hermitian positive definite weight `L`, find an
//! analog matrix `X` (`N x M`, every entry of modulus `1/sqrt(N)`) and an
//! unconstrained baseband `B` (`M x K`) minimizing
//!
//! ```text
//! tr((T - X B)^H L (T - X B))
//! ```
//!
//! The solver alternates the closed-form weighted least-squares baseband
//! `B = (X^H L X)^-1 X^H L T` with a Riemannian conjugate-gradient pass over
//! `X`. The precoder problem uses `L = I`; the combiner problem uses the
//! received-signal covariance.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::rng;

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const MAX_RETRACTION_HALVINGS: usize = 30;
const RESET_FACTOR: usize = 10;
const MAX_EXTRAPOLATION: f64 = 4.0;
/// Objective values below this are treated as an exact fit.
const EXACT_FIT: f64 = 1e-26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AltMinConfig {
    pub max_outer_iters: usize,
    pub max_cg_iters: usize,
    pub grad_tol: f64,
    pub obj_rel_tol: f64,
    /// Random-phase starts; the lowest residual wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AltMinConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            max_cg_iters: 40,
            grad_tol: 1e-6,
            obj_rel_tol: 1e-8,
            restarts: 4,
            seed: 0,
        }
    }
}

impl AltMinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.obj_rel_tol > 0.0) {
            return Err(Error::Config("alt-min tolerances must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A matrix whose entries all have the same modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitModulusMatrix {
    modulus: f64,
    data: CMatrix,
}

impl UnitModulusMatrix {
    /// Entry modulus `1/sqrt(rows)`, i.i.d. uniform phases.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let modulus = 1.0 / (rows as f64).sqrt();
        let data = CMatrix::from_fn(rows, cols, |_, _| {
            Complex64::from_polar(modulus, rng.random_range(0.0..std::f64::consts::TAU))
        });
        Self { modulus, data }
    }

    /// Keep only the phases of `m`, setting every modulus to `1/sqrt(rows)`.
    /// Zero entries map to phase zero.
    pub fn from_phases_of(m: &CMatrix) -> Self {
        let modulus = 1.0 / (m.nrows() as f64).sqrt();
        let data = m.map(|z| Complex64::from_polar(modulus, if z.norm() > 0.0 { z.arg() } else { 0.0 }));
        Self { modulus, data }
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn column(&self, j: usize) -> CVector {
        self.data.column(j).into_owned()
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Largest deviation of any entry's modulus from the nominal one.
    pub fn modulus_error(&self) -> f64 {
        self.data
            .iter()
            .map(|z| (z.norm() - self.modulus).abs())
            .fold(0.0, f64::max)
    }
}

/// Hybrid factorization `X B` of a target.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub analog: UnitModulusMatrix,
    pub baseband: CMatrix,
    /// Objective value (squared, weighted for combiners) before any power
    /// normalization of the baseband.
    pub residual: f64,
    /// Objective after the initial baseband fit and after every outer iteration.
    pub history: Vec<f64>,
}

pub type PrecoderSolution = HybridSolution;
pub type CombinerSolution = HybridSolution;

/// Project `v` onto the tangent space at `x`: subtract the radial part
/// `Re{v o conj(x^)} o x^` with `x^ = x / |x|` elementwise.
pub fn riemannian_grad(x: &CMatrix, euclid_grad: &CMatrix) -> CMatrix {
    CMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let xi = x[(i, j)];
        let unit = xi / xi.norm();
        let g = euclid_grad[(i, j)];
        g - unit * (g * unit.conj()).re
    })
}

/// `y = modulus (x + step) / |x + step|` elementwise.
pub fn retract(x: &CMatrix, step: &CMatrix, modulus: f64) -> Result<CMatrix> {
    let mut y = x + step;
    for (entry, z) in y.iter_mut().enumerate() {
        let n = z.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateRetraction { entry, attempts: 0 });
        }
        *z *= modulus / n;
    }
    Ok(y)
}

/// Dominant right singular vector of `h`, phase-fixed so that its
/// largest-magnitude entry is real and positive.
pub fn optimal_precoder(h: &CMatrix) -> Result<CVector> {
    Ok(optimal_precoders(h, 1)?.column(0).into_owned())
}

/// The `k` leading right singular vectors of `h` as columns, each phase-fixed.
pub fn optimal_precoders(h: &CMatrix, k: usize) -> Result<CMatrix> {
    if linalg::frob_norm(h) == 0.0 {
        return Err(Error::InvalidInput("zero channel has no optimal precoder".into()));
    }
    let svd = linalg::svd_thin(h)?;
    if k > svd.v.ncols() {
        return Err(Error::InvalidInput(format!(
            "requested {k} singular vectors from a {}x{} channel",
            h.nrows(),
            h.ncols()
        )));
    }
    let mut out = CMatrix::zeros(h.ncols(), k);
    for j in 0..k {
        let mut v = svd.v.column(j).into_owned();
        linalg::fix_phase(&mut v);
        out.set_column(j, &v);
    }
    Ok(out)
}

/// MMSE receive vector for a single stream sent on `f`:
/// `w = H f / (f^H H^H H f + noise_var)`.
pub fn mmse_combiner(h: &CMatrix, f: &CVector, noise_var: f64) -> CVector {
    let hf = h * f;
    let denom = hf.norm_squared() + noise_var;
    hf / Complex64::new(denom, 0.0)
}

/// MMSE receive matrix for streams sent on the columns of `f`:
/// `W = H F (F^H H^H H F + noise_var I)^-1`. Reduces to [`mmse_combiner`]
/// for a single column.
pub fn mmse_combiners(h: &CMatrix, f: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    let hf = h * f;
    let k = f.ncols();
    let gram = hf.adjoint() * &hf + CMatrix::identity(k, k) * Complex64::new(noise_var, 0.0);
    // W^H = gram^-1 (HF)^H, gram Hermitian
    let w_h = linalg::solve_hermitian_many(&gram, &hf.adjoint())?;
    Ok(w_h.adjoint())
}

/// Received-signal covariance `H X B B^H X^H H^H + noise_var I`.
pub fn covariance_lambda_y(h: &CMatrix, analog: &CMatrix, baseband: &CMatrix, noise_var: f64) -> CMatrix {
    let s = h * analog * baseband;
    let n = h.nrows();
    let mut lambda = &s * s.adjoint() + CMatrix::identity(n, n) * Complex64::new(noise_var, 0.0);
    // exact Hermitian symmetry
    for i in 0..n {
        lambda[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (lambda[(i, j)] + lambda[(j, i)].conj()) * 0.5;
            lambda[(i, j)] = avg;
            lambda[(j, i)] = avg.conj();
        }
    }
    lambda
}

/// The weighted least-squares objective for a fixed target, evaluated in
/// whitened coordinates `L^H (T - X B)` where `L L^H` is the weight.
struct Fit {
    whitened_target: CMatrix,
    /// `L^H`, or `None` for the identity weight.
    whitener: Option<CMatrix>,
    /// `L`, the adjoint of `whitener`.
    colorer: Option<CMatrix>,
}

/// Result of fitting the baseband for a fixed analog matrix.
struct BasebandFit {
    baseband: CMatrix,
    /// Whitened residual `L^H (T - X B)`.
    residual: CMatrix,
    cost: f64,
}

impl Fit {
    fn new(target: &CMatrix, weight: Option<&CMatrix>) -> Result<Self> {
        match weight {
            None => Ok(Self {
                whitened_target: target.clone(),
                whitener: None,
                colorer: None,
            }),
            Some(w) => {
                let chol = w.clone().cholesky().ok_or(Error::Singular {
                    context: "combiner weight",
                    condition: f64::INFINITY,
                    pattern: None,
                })?;
                let l = chol.l();
                let l_h = l.adjoint();
                Ok(Self {
                    whitened_target: &l_h * target,
                    whitener: Some(l_h),
                    colorer: Some(l),
                })
            }
        }
    }

    fn whiten(&self, x: &CMatrix) -> CMatrix {
        match &self.whitener {
            Some(w) => w * x,
            None => x.clone(),
        }
    }

    /// Minimum-norm least-squares baseband. The residual is formed by
    /// projection so it stays accurate when the analog columns are nearly
    /// collinear.
    fn baseband(&self, x: &CMatrix) -> Result<BasebandFit> {
        let wx = self.whiten(x);
        let svd = wx.clone().svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let s = &svd.singular_values;
        let tol = 1e-12 * s.max();
        let coeffs = u.adjoint() * &self.whitened_target;
        let mut scaled = coeffs.clone();
        for (i, &si) in s.iter().enumerate() {
            let f = if si > tol { 1.0 / si } else { 0.0 };
            scaled.row_mut(i).iter_mut().for_each(|z| *z *= f);
        }
        let baseband = v_t.adjoint() * scaled;
        let mut kept = u.clone();
        for (i, &si) in s.iter().enumerate() {
            if si <= tol {
                kept.column_mut(i).fill(linalg::ZERO);
            }
        }
        let residual = &self.whitened_target - &kept * (kept.adjoint() * &self.whitened_target);
        if !linalg::is_finite(&baseband) {
            return Err(Error::InvalidInput("non-finite baseband fit".into()));
        }
        let cost = residual.norm_squared();
        Ok(BasebandFit {
            baseband,
            residual,
            cost,
        })
    }

    /// Objective for an explicit baseband (no refit).
    #[cfg(test)]
    fn cost(&self, x: &CMatrix, b: &CMatrix) -> f64 {
        (&self.whitened_target - self.whiten(x) * b).norm_squared()
    }

    /// Euclidean gradient of the objective in `X` at the fitted baseband,
    /// `-2 L r B^H`.
    fn euclid_grad(&self, fitted: &BasebandFit) -> CMatrix {
        let lr = match &self.colorer {
            Some(l) => l * &fitted.residual,
            None => fitted.residual.clone(),
        };
        lr * fitted.baseband.adjoint() * Complex64::new(-2.0, 0.0)
    }
}

/// Retract `x + alpha d`, halving `alpha` on a degenerate entry.
fn retract_recovering(x: &CMatrix, d: &CMatrix, alpha: f64, modulus: f64) -> Result<(CMatrix, f64)> {
    let mut alpha = alpha;
    for attempt in 0..=MAX_RETRACTION_HALVINGS {
        match retract(x, &(d * Complex64::new(alpha, 0.0)), modulus) {
            Ok(y) => return Ok((y, alpha)),
            Err(Error::DegenerateRetraction { entry, .. }) if attempt == MAX_RETRACTION_HALVINGS => {
                return Err(Error::DegenerateRetraction {
                    entry,
                    attempts: attempt,
                })
            }
            Err(Error::DegenerateRetraction { .. }) => alpha *= 0.5,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

/// Try the minimizer of the quadratic through `f(0)`, `f'(0)` and
/// `f(alpha)`; keep it only if it lowers the cost.
#[allow(clippy::too_many_arguments)]
fn refine_step(
    fit: &Fit,
    x: &CMatrix,
    dir: &CMatrix,
    f0: f64,
    slope: f64,
    alpha: f64,
    candidate: CMatrix,
    refit: BasebandFit,
    modulus: f64,
) -> Result<(CMatrix, BasebandFit)> {
    let curvature = refit.cost - f0 - slope * alpha;
    if curvature <= 0.0 {
        return Ok((candidate, refit));
    }
    let guess = (-slope * alpha * alpha / (2.0 * curvature)).min(MAX_EXTRAPOLATION * alpha);
    if !guess.is_finite() || (guess - alpha).abs() <= 1e-3 * alpha {
        return Ok((candidate, refit));
    }
    let Ok((other, _)) = retract_recovering(x, dir, guess, modulus) else {
        return Ok((candidate, refit));
    };
    let other_fit = fit.baseband(&other)?;
    if other_fit.cost < refit.cost {
        Ok((other, other_fit))
    } else {
        Ok((candidate, refit))
    }
}

/// One pass of Riemannian conjugate gradient over the analog matrix. The
/// baseband is re-fitted at every trial point, so each accepted step is a
/// baseband update followed by an analog update. Returns the Riemannian
/// gradient norm at the starting point.
fn conjugate_gradient(
    fit: &Fit,
    x: &mut CMatrix,
    current: &mut BasebandFit,
    modulus: f64,
    config: &AltMinConfig,
) -> Result<f64> {
    let dim = x.len();
    let mut grad = riemannian_grad(x, &fit.euclid_grad(current));
    let mut grad_sq = grad.norm_squared();
    let start_norm = grad_sq.sqrt();
    let mut dir = -grad.clone();

    for iter in 0..config.max_cg_iters {
        if grad_sq.sqrt() < config.grad_tol || current.cost < EXACT_FIT {
            break;
        }
        let mut slope = linalg::real_inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -grad.clone();
            slope = -grad_sq;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let (candidate, used) = retract_recovering(x, &dir, alpha, modulus)?;
            alpha = used;
            let refit = fit.baseband(&candidate)?;
            if refit.cost <= current.cost + ARMIJO_C * alpha * slope {
                accepted = Some(refine_step(fit, x, &dir, current.cost, slope, alpha, candidate, refit, modulus)?);
                break;
            }
            alpha *= ARMIJO_SHRINK;
        }
        let Some((next, next_fit)) = accepted else {
            break;
        };

        let next_grad = riemannian_grad(&next, &fit.euclid_grad(&next_fit));
        let old_grad_t = riemannian_grad(&next, &grad);
        let dir_t = riemannian_grad(&next, &dir);
        let next_sq = next_grad.norm_squared();
        let restart = (iter + 1) % (RESET_FACTOR * dim) == 0;
        let beta = if restart || grad_sq == 0.0 {
            0.0
        } else {
            (linalg::real_inner(&next_grad, &(&next_grad - &old_grad_t)) / grad_sq).max(0.0)
        };
        dir = -next_grad.clone() + dir_t * Complex64::new(beta, 0.0);

        *x = next;
        *current = next_fit;
        grad = next_grad;
        grad_sq = next_sq;
    }
    Ok(start_norm)
}

fn alternate(fit: &Fit, init: UnitModulusMatrix, config: &AltMinConfig) -> Result<HybridSolution> {
    config.validate()?;
    let modulus = init.modulus;
    let mut x = init.data;
    let mut current = fit.baseband(&x)?;
    let mut history = vec![current.cost];

    for _ in 0..config.max_outer_iters {
        if current.cost < EXACT_FIT {
            break;
        }
        let before = current.cost;
        let grad_norm = conjugate_gradient(fit, &mut x, &mut current, modulus, config)?;
        history.push(current.cost);
        let rel = (before - current.cost) / before.max(f64::MIN_POSITIVE);
        if grad_norm < config.grad_tol || rel < config.obj_rel_tol {
            break;
        }
    }

    Ok(HybridSolution {
        analog: UnitModulusMatrix { modulus, data: x },
        baseband: current.baseband,
        residual: current.cost,
        history,
    })
}

fn check_target(target: &CMatrix, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one analog column".into()));
    }
    if target.nrows() == 0 || target.ncols() == 0 || !linalg::is_finite(target) {
        return Err(Error::InvalidInput("target must be a finite, non-empty matrix".into()));
    }
    Ok(())
}

/// Fit `target ~ X B` with `M` unit-modulus columns from random-phase starts
/// seeded by `config.seed`, then scale `B` so that `||X B||_F^2 = M`.
pub fn alt_min_precoder(target: &CMatrix, m: usize, config: &AltMinConfig) -> Result<PrecoderSolution> {
    check_target(target, m)?;
    best_of_starts(target.nrows(), m, config, None, |init| alt_min_precoder_from(target, init, config))
}

/// Run `solve` from `config.restarts` seeded random starts and keep the
/// lowest residual; ties keep the earlier start.
fn best_of_starts(
    rows: usize,
    cols: usize,
    config: &AltMinConfig,
    hint: Option<UnitModulusMatrix>,
    mut solve: impl FnMut(UnitModulusMatrix) -> Result<HybridSolution>,
) -> Result<HybridSolution> {
    config.validate()?;
    let mut best: Option<HybridSolution> = None;
    let random = (0..config.restarts)
        .map(|r| UnitModulusMatrix::random(rows, cols, &mut rng::stream(config.seed, &[r as u64])));
    for init in hint.into_iter().chain(random) {
        let sol = solve(init)?;
        if best.as_ref().is_none_or(|b| sol.residual < b.residual) {
            best = Some(sol);
        }
        if best.as_ref().is_some_and(|b| b.residual < EXACT_FIT) {
            break;
        }
    }
    Ok(best.expect("at least one start"))
}

pub fn alt_min_precoder_from(
    target: &CMatrix,
    init: UnitModulusMatrix,
    config: &AltMinConfig,
) -> Result<PrecoderSolution> {
    check_target(target, init.ncols())?;
    let fit = Fit::new(target, None)?;
    let mut sol = alternate(&fit, init, config)?;
    let m = sol.analog.ncols() as f64;
    let power = linalg::frob_norm(&(sol.analog.matrix() * &sol.baseband));
    if power > 0.0 {
        sol.baseband *= Complex64::new(m.sqrt() / power, 0.0);
    }
    Ok(sol)
}

fn check_weight(lambda: &CMatrix, n: usize) -> Result<()> {
    if lambda.nrows() != n || lambda.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "weight must be {n}x{n}, got {}x{}",
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    let condition = linalg::condition_number(lambda)?;
    if condition > linalg::MAX_CONDITION || lambda.clone().cholesky().is_none() {
        return Err(Error::Singular {
            context: "combiner weight",
            condition,
            pattern: None,
        });
    }
    Ok(())
}

/// Weighted fit of the unconstrained combiner(s) `target` with `M` analog
/// columns of modulus `1/sqrt(N_R)`, from random starts.
pub fn alt_min_combiner(
    target: &CMatrix,
    lambda: &CMatrix,
    m: usize,
    config: &AltMinConfig,
) -> Result<CombinerSolution> {
    check_target(target, m)?;
    best_of_starts(target.nrows(), m, config, None, |init| alt_min_combiner_from(target, lambda, init, config))
}

/// As [`alt_min_combiner`], with one extra start taken from the phases of
/// `hint` (`N_R x M`), tried before the random ones.
pub fn alt_min_combiner_hinted(
    target: &CMatrix,
    lambda: &CMatrix,
    hint: &CMatrix,
    config: &AltMinConfig,
) -> Result<CombinerSolution> {
    let m = hint.ncols();
    check_target(target, m)?;
    if hint.nrows() != target.nrows() || hint.iter().any(|z| z.norm() == 0.0) {
        return Err(Error::InvalidInput("combiner hint must be nonzero entrywise and match the target rows".into()));
    }
    let start = UnitModulusMatrix::from_phases_of(hint);
    best_of_starts(target.nrows(), m, config, Some(start), |init| alt_min_combiner_from(target, lambda, init, config))
}

pub fn alt_min_combiner_from(
    target: &CMatrix,
    lambda: &CMatrix,
    init: UnitModulusMatrix,
    config: &AltMinConfig,
) -> Result<CombinerSolution> {
    check_target(target, init.ncols())?;
    check_weight(lambda, target.nrows())?;
    let fit = Fit::new(target, Some(lambda))?;
    alternate(&fit, init, config)
}

/// Column vector helper.
pub fn as_column(v: &CVector) -> CMatrix {
    CMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Hermitian eigenvalues, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let eig = a.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(f64::total_cmp);
    vals
}
