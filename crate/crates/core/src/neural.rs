//! Convolutional regression network: `[conv -> norm -> ReLU] x N_CL`,
//! adaptive average pooling, a fully connected layer with input-feature
//! dropout, and a linear output layer. Forward and backward passes are
//! written out by hand and are generic over `f32` / `f64`.

use std::fs;
use std::path::Path as FsPath;

use num_traits::{Float, FromPrimitive};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, label};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPIMNN01";
const NORM_EPS: f64 = 1e-5;
/// Samples per work item in a batch; fixes the reduction tree.
const CHUNK: usize = 8;

pub trait Scalar: Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static {}
impl<T: Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static> Scalar for T {}

fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkArch {
    pub n_r: usize,
    pub n_t: usize,
    /// Input planes `C`.
    pub planes: usize,
    pub conv_layers: usize,
    pub filters: usize,
    /// Kernel extent along the `N_R` axis.
    pub kernel_x: usize,
    /// Kernel extent along the `N_T` axis.
    pub kernel_y: usize,
    pub fc_units: usize,
    /// Probability that an FC input feature is dropped in a training step.
    pub dropout: f64,
    pub output_dim: usize,
    pub pool_x: usize,
    pub pool_y: usize,
}

impl NetworkArch {
    /// Layer sizes of the reference model for the given input and output.
    pub fn paper(n_r: usize, n_t: usize, planes: usize, output_dim: usize) -> Self {
        Self {
            n_r,
            n_t,
            planes,
            conv_layers: 3,
            filters: 128,
            kernel_x: 3,
            kernel_y: 3,
            fc_units: 1024,
            dropout: 0.5,
            output_dim,
            pool_x: 3,
            pool_y: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let dims = [
            self.n_r,
            self.n_t,
            self.planes,
            self.conv_layers,
            self.filters,
            self.kernel_x,
            self.kernel_y,
            self.fc_units,
            self.output_dim,
            self.pool_x,
            self.pool_y,
        ];
        if dims.contains(&0) {
            return fail(format!("network dimensions must be positive: {self:?}"));
        }
        if self.kernel_x.is_multiple_of(2) || self.kernel_y.is_multiple_of(2) {
            return fail("kernel sizes must be odd".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.pool_x > self.n_r || self.pool_y > self.n_t {
            return fail(format!(
                "pool target {}x{} exceeds the {}x{} feature map",
                self.pool_x, self.pool_y, self.n_r, self.n_t
            ));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.planes * self.n_r * self.n_t
    }

    /// Width of the FC input (pooled features).
    pub fn fc_inputs(&self) -> usize {
        self.filters * self.pool_x * self.pool_y
    }

    /// FC input features kept in a training step with the given drop
    /// probability.
    pub fn kept_features(&self, dropout: f64) -> usize {
        let f = self.fc_inputs();
        (((1.0 - dropout) * f as f64).round() as usize).clamp(1, f)
    }

    fn conv_inputs(&self, layer: usize) -> usize {
        if layer == 0 {
            self.planes
        } else {
            self.filters
        }
    }
}

/// Parameters counted for transmission:
/// `N_CL C N_SF W_x W_y + round(keep N_SF W_x W_y) N_FCL`.
pub fn param_count(arch: &NetworkArch, keep_fraction: f64) -> u64 {
    let conv = arch.conv_layers * arch.planes * arch.filters * arch.kernel_x * arch.kernel_y;
    let kept = (keep_fraction * (arch.filters * arch.kernel_x * arch.kernel_y) as f64).round() as usize;
    (conv + kept * arch.fc_units) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Where each layer's weights live in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub total: usize,
    conv_w: Vec<usize>,
    conv_b: Vec<usize>,
    gamma: Vec<usize>,
    beta: Vec<usize>,
    fc_w: usize,
    fc_b: usize,
    out_w: usize,
    out_b: usize,
}

impl Layout {
    pub fn new(arch: &NetworkArch) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let slot = Slot { name, offset, shape };
            offset += slot.len();
            slots.push(slot);
            offset - slots.last().expect("pushed").len()
        };
        let (mut conv_w, mut conv_b, mut gamma, mut beta) = (vec![], vec![], vec![], vec![]);
        for l in 0..arch.conv_layers {
            let shape = vec![arch.filters, arch.conv_inputs(l), arch.kernel_x, arch.kernel_y];
            conv_w.push(push(format!("conv{l}.weight"), shape));
            conv_b.push(push(format!("conv{l}.bias"), vec![arch.filters]));
            gamma.push(push(format!("norm{l}.scale"), vec![arch.filters]));
            beta.push(push(format!("norm{l}.shift"), vec![arch.filters]));
        }
        let fc_w = push("fc.weight".into(), vec![arch.fc_units, arch.fc_inputs()]);
        let fc_b = push("fc.bias".into(), vec![arch.fc_units]);
        let out_w = push("out.weight".into(), vec![arch.output_dim, arch.fc_units]);
        let out_b = push("out.bias".into(), vec![arch.output_dim]);
        Self {
            slots,
            total: offset,
            conv_w,
            conv_b,
            gamma,
            beta,
            fc_w,
            fc_b,
            out_w,
            out_b,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Flat indices of the FC weights that read input feature `feature`.
    pub fn fc_column(&self, arch: &NetworkArch, feature: usize) -> impl Iterator<Item = usize> {
        let base = self.fc_w + feature;
        let stride = arch.fc_inputs();
        (0..arch.fc_units).map(move |o| base + o * stride)
    }
}

/// Per-round mask over FC input features. Kept features are scaled by
/// `F_in / kept` so inference needs no rescaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub round: u64,
    pub seed: u64,
}

impl DropoutMask {
    pub fn full(features: usize) -> Self {
        Self {
            keep: vec![true; features],
            round: 0,
            seed: 0,
        }
    }

    /// Keeps exactly `arch.kept_features(dropout)` features chosen uniformly
    /// by the stream keyed on `(seed, round)`.
    pub fn draw(arch: &NetworkArch, dropout: f64, seed: u64, round: u64) -> Self {
        let features = arch.fc_inputs();
        let kept = arch.kept_features(dropout);
        let mut keep = vec![false; features];
        if dropout == 0.0 {
            keep.fill(true);
        } else {
            let mut stream = rng::stream(seed, &[label::MASK, round]);
            for i in sample(&mut stream, features, kept) {
                keep[i] = true;
            }
        }
        Self { keep, round, seed }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn scale(&self) -> f64 {
        self.keep.len() as f64 / self.kept() as f64
    }

    pub fn digest(&self) -> [u8; 32] {
        let bytes: Vec<u8> = self.keep.iter().map(|&k| k as u8).collect();
        Sha256::digest(&bytes).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Network parameters plus the normalization layers' running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub arch: NetworkArch,
    pub layout: Layout,
    pub theta: Vec<T>,
    pub running_mean: Vec<Vec<T>>,
    pub running_var: Vec<Vec<T>>,
}

impl<T: Scalar> Model<T> {
    /// All parameters zero, normalization scale zero, unit running variance.
    pub fn zeros(arch: &NetworkArch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        Ok(Self {
            arch: arch.clone(),
            theta: vec![T::zero(); layout.total],
            running_mean: vec![vec![T::zero(); arch.filters]; arch.conv_layers],
            running_var: vec![vec![T::one(); arch.filters]; arch.conv_layers],
            layout,
        })
    }

    /// He-normal weights, zero biases, unit normalization scale.
    pub fn init(arch: &NetworkArch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let mut stream = rng::stream(seed, &[label::PARAM_INIT]);
        let layout = m.layout.clone();
        for slot in &layout.slots {
            let fan_in: usize = slot.shape[1..].iter().product();
            let name = slot.name.as_str();
            let std = if name.ends_with(".weight") {
                let gain = if name == "out.weight" || name == "fc.weight" { 1.0 } else { 2.0 };
                (gain / fan_in.max(1) as f64).sqrt()
            } else {
                0.0
            };
            for v in &mut m.theta[slot.range()] {
                *v = if name.ends_with(".scale") {
                    T::one()
                } else if std > 0.0 {
                    cast(Normal::new(0.0, std).expect("valid std").sample(&mut stream))
                } else {
                    T::zero()
                };
            }
        }
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| cast(x.to_f64().expect("finite"))).collect() };
        Model {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            theta: conv(&self.theta),
            running_mean: self.running_mean.iter().map(|v| conv(v)).collect(),
            running_var: self.running_var.iter().map(|v| conv(v)).collect(),
        }
    }
}

/// Per-layer channel sums of pre-normalization activations, for updating
/// the running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub sum: Vec<Vec<T>>,
    pub sum_sq: Vec<Vec<T>>,
    pub count: usize,
}

impl<T: Scalar> Moments<T> {
    fn zeros(arch: &NetworkArch) -> Self {
        Self {
            sum: vec![vec![T::zero(); arch.filters]; arch.conv_layers],
            sum_sq: vec![vec![T::zero(); arch.filters]; arch.conv_layers],
            count: 0,
        }
    }

    pub fn add(&mut self, other: &Moments<T>) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        }
        self.count += other.count;
    }
}

struct Cache<T> {
    /// Input of each conv layer.
    inputs: Vec<Vec<T>>,
    /// Normalized, pre-activation values of each layer.
    normalized: Vec<Vec<T>>,
    /// `(z - mean) / std` of each layer.
    standardized: Vec<Vec<T>>,
    fc_in: Vec<T>,
    hidden: Vec<T>,
    output: Vec<T>,
    moments: Moments<T>,
}

fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

fn check_len(layer: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            layer: layer.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn conv_forward<T: Scalar>(arch: &NetworkArch, w: &[T], b: &[T], input: &[T], cin: usize) -> Vec<T> {
    let (h, wd, kx, ky) = (arch.n_r, arch.n_t, arch.kernel_x, arch.kernel_y);
    let (px, py) = (kx / 2, ky / 2);
    let mut out = vec![T::zero(); arch.filters * h * wd];
    for o in 0..arch.filters {
        for r in 0..h {
            for c in 0..wd {
                let mut acc = b[o];
                for i in 0..cin {
                    for dx in 0..kx {
                        let Some(rr) = (r + dx).checked_sub(px).filter(|&v| v < h) else {
                            continue;
                        };
                        for dy in 0..ky {
                            let Some(cc) = (c + dy).checked_sub(py).filter(|&v| v < wd) else {
                                continue;
                            };
                            acc = acc + w[((o * cin + i) * kx + dx) * ky + dy] * input[(i * h + rr) * wd + cc];
                        }
                    }
                }
                out[(o * h + r) * wd + c] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    arch: &NetworkArch,
    w: &[T],
    input: &[T],
    cin: usize,
    dz: &[T],
    dw: &mut [T],
    db: &mut [T],
    dinput: Option<&mut Vec<T>>,
) {
    let (h, wd, kx, ky) = (arch.n_r, arch.n_t, arch.kernel_x, arch.kernel_y);
    let (px, py) = (kx / 2, ky / 2);
    let mut din = dinput;
    for o in 0..arch.filters {
        for r in 0..h {
            for c in 0..wd {
                let g = dz[(o * h + r) * wd + c];
                if g == T::zero() {
                    continue;
                }
                db[o] = db[o] + g;
                for i in 0..cin {
                    for dx in 0..kx {
                        let Some(rr) = (r + dx).checked_sub(px).filter(|&v| v < h) else {
                            continue;
                        };
                        for dy in 0..ky {
                            let Some(cc) = (c + dy).checked_sub(py).filter(|&v| v < wd) else {
                                continue;
                            };
                            let wi = ((o * cin + i) * kx + dx) * ky + dy;
                            let xi = (i * h + rr) * wd + cc;
                            dw[wi] = dw[wi] + g * input[xi];
                            if let Some(d) = din.as_deref_mut() {
                                d[xi] = d[xi] + g * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn run<T: Scalar>(model: &Model<T>, x: &[T], mask: Option<&DropoutMask>) -> Result<Cache<T>> {
    let arch = &model.arch;
    let lay = &model.layout;
    let th = &model.theta;
    check_len("input", arch.input_len(), x.len())?;
    if let Some(m) = mask {
        check_len("dropout mask", arch.fc_inputs(), m.keep.len())?;
    }
    let plane = arch.n_r * arch.n_t;
    let eps: T = cast(NORM_EPS);
    let mut moments = Moments::zeros(arch);
    moments.count = plane;
    let mut inputs = Vec::with_capacity(arch.conv_layers);
    let mut normalized = Vec::with_capacity(arch.conv_layers);
    let mut standardized = Vec::with_capacity(arch.conv_layers);
    let mut a = x.to_vec();
    for l in 0..arch.conv_layers {
        let cin = arch.conv_inputs(l);
        let wlen = arch.filters * cin * arch.kernel_x * arch.kernel_y;
        let w = &th[lay.conv_w[l]..lay.conv_w[l] + wlen];
        let b = &th[lay.conv_b[l]..lay.conv_b[l] + arch.filters];
        let z = conv_forward(arch, w, b, &a, cin);
        let mut s = vec![T::zero(); z.len()];
        let mut n = vec![T::zero(); z.len()];
        for o in 0..arch.filters {
            let mean = model.running_mean[l][o];
            let inv = T::one() / (model.running_var[l][o] + eps).sqrt();
            let g = th[lay.gamma[l] + o];
            let be = th[lay.beta[l] + o];
            for k in o * plane..(o + 1) * plane {
                moments.sum[l][o] = moments.sum[l][o] + z[k];
                moments.sum_sq[l][o] = moments.sum_sq[l][o] + z[k] * z[k];
                s[k] = (z[k] - mean) * inv;
                n[k] = g * s[k] + be;
            }
        }
        inputs.push(std::mem::replace(&mut a, n.iter().map(|&v| v.max(T::zero())).collect()));
        normalized.push(n);
        standardized.push(s);
    }

    let mut pooled = vec![T::zero(); arch.fc_inputs()];
    for f in 0..arch.filters {
        for i in 0..arch.pool_x {
            let (r0, r1) = pool_bounds(i, arch.n_r, arch.pool_x);
            for j in 0..arch.pool_y {
                let (c0, c1) = pool_bounds(j, arch.n_t, arch.pool_y);
                let mut acc = T::zero();
                for r in r0..r1 {
                    for c in c0..c1 {
                        acc = acc + a[(f * arch.n_r + r) * arch.n_t + c];
                    }
                }
                pooled[(f * arch.pool_x + i) * arch.pool_y + j] = acc / cast(((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }

    let fc_in: Vec<T> = match mask {
        Some(m) => {
            let scale: T = cast(m.scale());
            pooled
                .iter()
                .zip(&m.keep)
                .map(|(&p, &k)| if k { p * scale } else { T::zero() })
                .collect()
        }
        None => pooled.clone(),
    };
    let fin = arch.fc_inputs();
    let hidden: Vec<T> = (0..arch.fc_units)
        .map(|o| {
            let row = &th[lay.fc_w + o * fin..lay.fc_w + (o + 1) * fin];
            row.iter().zip(&fc_in).fold(th[lay.fc_b + o], |acc, (&w, &v)| acc + w * v)
        })
        .collect();
    let output: Vec<T> = (0..arch.output_dim)
        .map(|o| {
            let row = &th[lay.out_w + o * arch.fc_units..lay.out_w + (o + 1) * arch.fc_units];
            row.iter().zip(&hidden).fold(th[lay.out_b + o], |acc, (&w, &v)| acc + w * v)
        })
        .collect();
    Ok(Cache {
        inputs,
        normalized,
        standardized,
        fc_in,
        hidden,
        output,
        moments,
    })
}

/// Network output. The mask applies in training mode only; inference uses
/// every feature unscaled.
pub fn forward<T: Scalar>(model: &Model<T>, x: &[T], mask: Option<&DropoutMask>, mode: Mode) -> Result<Vec<T>> {
    let mask = match mode {
        Mode::Train => mask,
        Mode::Infer => None,
    };
    Ok(run(model, x, mask)?.output)
}

pub fn loss_mse<T: Scalar>(pred: &[T], label: &[T]) -> T {
    let n: T = cast(pred.len() as f64);
    pred.iter()
        .zip(label)
        .fold(T::zero(), |acc, (&p, &y)| acc + (p - y) * (p - y))
        / n
}

/// Gradient of the squared-error loss of one sample, its loss, and the
/// sample's normalization moments.
pub fn backward<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    label: &[T],
    mask: Option<&DropoutMask>,
) -> Result<(Vec<T>, T, Moments<T>)> {
    let arch = &model.arch;
    let lay = &model.layout;
    let th = &model.theta;
    check_len("label", arch.output_dim, label.len())?;
    let cache = run(model, x, mask)?;
    let mut grad = vec![T::zero(); lay.total];
    let two_over_n: T = cast(2.0 / arch.output_dim as f64);
    let dout: Vec<T> = cache
        .output
        .iter()
        .zip(label)
        .map(|(&p, &y)| (p - y) * two_over_n)
        .collect();

    let nh = arch.fc_units;
    let mut dh = vec![T::zero(); nh];
    for (o, &g) in dout.iter().enumerate() {
        grad[lay.out_b + o] = g;
        for k in 0..nh {
            grad[lay.out_w + o * nh + k] = g * cache.hidden[k];
            dh[k] = dh[k] + g * th[lay.out_w + o * nh + k];
        }
    }

    let fin = arch.fc_inputs();
    let mut dfc_in = vec![T::zero(); fin];
    for (o, &g) in dh.iter().enumerate() {
        grad[lay.fc_b + o] = g;
        for k in 0..fin {
            grad[lay.fc_w + o * fin + k] = g * cache.fc_in[k];
            dfc_in[k] = dfc_in[k] + g * th[lay.fc_w + o * fin + k];
        }
    }
    let dpooled: Vec<T> = match mask {
        Some(m) => {
            let scale: T = cast(m.scale());
            dfc_in
                .iter()
                .zip(&m.keep)
                .map(|(&d, &k)| if k { d * scale } else { T::zero() })
                .collect()
        }
        None => dfc_in,
    };

    let plane = arch.n_r * arch.n_t;
    let mut da = vec![T::zero(); arch.filters * plane];
    for f in 0..arch.filters {
        for i in 0..arch.pool_x {
            let (r0, r1) = pool_bounds(i, arch.n_r, arch.pool_x);
            for j in 0..arch.pool_y {
                let (c0, c1) = pool_bounds(j, arch.n_t, arch.pool_y);
                let share = dpooled[(f * arch.pool_x + i) * arch.pool_y + j] / cast(((r1 - r0) * (c1 - c0)) as f64);
                for r in r0..r1 {
                    for c in c0..c1 {
                        let k = (f * arch.n_r + r) * arch.n_t + c;
                        da[k] = da[k] + share;
                    }
                }
            }
        }
    }

    let eps: T = cast(NORM_EPS);
    for l in (0..arch.conv_layers).rev() {
        let n = &cache.normalized[l];
        let s = &cache.standardized[l];
        let mut dz = vec![T::zero(); n.len()];
        for o in 0..arch.filters {
            let inv = T::one() / (model.running_var[l][o] + eps).sqrt();
            let g = th[lay.gamma[l] + o];
            let (mut dg, mut dbeta) = (T::zero(), T::zero());
            for k in o * plane..(o + 1) * plane {
                let dn = if n[k] > T::zero() { da[k] } else { T::zero() };
                dg = dg + dn * s[k];
                dbeta = dbeta + dn;
                dz[k] = dn * g * inv;
            }
            grad[lay.gamma[l] + o] = dg;
            grad[lay.beta[l] + o] = dbeta;
        }
        let cin = arch.conv_inputs(l);
        let wlen = arch.filters * cin * arch.kernel_x * arch.kernel_y;
        let (wo, bo) = (lay.conv_w[l], lay.conv_b[l]);
        let mut dw = vec![T::zero(); wlen];
        let mut db = vec![T::zero(); arch.filters];
        let mut dinput = (l > 0).then(|| vec![T::zero(); cin * plane]);
        conv_backward(arch, &th[wo..wo + wlen], &cache.inputs[l], cin, &dz, &mut dw, &mut db, dinput.as_mut());
        grad[wo..wo + wlen].copy_from_slice(&dw);
        grad[bo..bo + arch.filters].copy_from_slice(&db);
        if let Some(d) = dinput {
            da = d;
        }
    }
    let loss = loss_mse(&cache.output, label);
    Ok((grad, loss, cache.moments))
}

/// Mean gradient, mean loss and summed moments over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub grad: Vec<T>,
    pub loss: T,
    pub moments: Moments<T>,
    pub samples: usize,
}

/// Per-sample gradients are computed in parallel over fixed chunks and
/// reduced in chunk order, so the result does not depend on thread count.
pub fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    batch: &[(&[T], &[T])],
    mask: Option<&DropoutMask>,
) -> Result<BatchGradient<T>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let partials: Vec<(Vec<T>, T, Moments<T>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); model.layout.total];
            let mut loss = T::zero();
            let mut moments = Moments::zeros(&model.arch);
            for (x, y) in chunk {
                let (g, l, m) = backward(model, x, y, mask)?;
                grad.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b);
                loss = loss + l;
                moments.add(&m);
            }
            Ok((grad, loss, moments))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![T::zero(); model.layout.total];
    let mut loss = T::zero();
    let mut moments = Moments::zeros(&model.arch);
    for (g, l, m) in &partials {
        grad.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        loss = loss + *l;
        moments.add(m);
    }
    let n: T = cast(batch.len() as f64);
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok(BatchGradient {
        grad,
        loss: loss / n,
        moments,
        samples: batch.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Weight of the newest batch moments in the running statistics.
    pub stats_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 128,
            stats_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stats_momentum) {
            return Err(Error::Config("stats_momentum must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `v' = momentum v + g`, `theta' = theta - eta v'`.
pub fn sgd_momentum_step<T: Scalar>(theta: &mut [T], velocity: &mut [T], grad: &[T], config: &TrainConfig) {
    let mu: T = cast(config.momentum);
    let eta: T = cast(config.learning_rate);
    for ((t, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *t = *t - eta * *v;
    }
}

/// Blend batch moments into the running statistics.
pub fn update_stats<T: Scalar>(model: &mut Model<T>, moments: &Moments<T>, rho: f64) {
    if moments.count == 0 || rho == 0.0 {
        return;
    }
    let rho: T = cast(rho);
    let n: T = cast(moments.count as f64);
    for l in 0..model.arch.conv_layers {
        for o in 0..model.arch.filters {
            let mean = moments.sum[l][o] / n;
            let var = (moments.sum_sq[l][o] / n - mean * mean).max(T::zero());
            let m = &mut model.running_mean[l][o];
            *m = (T::one() - rho) * *m + rho * mean;
            let v = &mut model.running_var[l][o];
            *v = (T::one() - rho) * *v + rho * var;
        }
    }
}

fn arch_fields(arch: &NetworkArch) -> [u32; 12] {
    [
        arch.n_r as u32,
        arch.n_t as u32,
        arch.planes as u32,
        arch.conv_layers as u32,
        arch.filters as u32,
        arch.kernel_x as u32,
        arch.kernel_y as u32,
        arch.fc_units as u32,
        (arch.dropout as f32).to_bits(),
        arch.output_dim as u32,
        arch.pool_x as u32,
        arch.pool_y as u32,
    ]
}

/// Checkpoint: magic, 12 u32 arch fields (dropout as f32 bits), u32
/// parameter count, then parameters, velocity and the running statistics
/// (means then variances, layer by layer) as little-endian f32.
pub fn save_checkpoint(model: &Model<f32>, velocity: &[f32], path: &FsPath) -> Result<()> {
    check_len("velocity", model.theta.len(), velocity.len())?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in arch_fields(&model.arch) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(model.theta.len() as u32).to_le_bytes());
    let stats = model.running_mean.iter().chain(&model.running_var).flatten();
    for v in model.theta.iter().chain(velocity).chain(stats) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &FsPath) -> Result<(Model<f32>, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let format = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    let header = 8 + 13 * 4;
    if bytes.len() < header {
        return Err(format(bytes.len(), format!("header needs {header} bytes, file has {}", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format(0, "bad magic, not a checkpoint".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    let arch = NetworkArch {
        n_r: field(0) as usize,
        n_t: field(1) as usize,
        planes: field(2) as usize,
        conv_layers: field(3) as usize,
        filters: field(4) as usize,
        kernel_x: field(5) as usize,
        kernel_y: field(6) as usize,
        fc_units: field(7) as usize,
        dropout: f32::from_bits(field(8)) as f64,
        output_dim: field(9) as usize,
        pool_x: field(10) as usize,
        pool_y: field(11) as usize,
    };
    arch.validate().map_err(|e| format(8, e.to_string()))?;
    let mut model = Model::<f32>::zeros(&arch)?;
    let p = field(12) as usize;
    if p != model.theta.len() {
        return Err(format(
            56,
            format!("parameter count {p} does not match the architecture ({})", model.theta.len()),
        ));
    }
    let stats = 2 * arch.conv_layers * arch.filters;
    let expected = header + 4 * (2 * p + stats);
    if bytes.len() != expected {
        return Err(format(
            bytes.len().min(expected),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    model.theta.copy_from_slice(&values[..p]);
    let velocity = values[p..2 * p].to_vec();
    let mut rest = values[2 * p..].chunks_exact(arch.filters);
    for l in 0..arch.conv_layers {
        model.running_mean[l] = rest.next().expect("sized").to_vec();
    }
    for l in 0..arch.conv_layers {
        model.running_var[l] = rest.next().expect("sized").to_vec();
    }
    Ok((model, velocity))
}
