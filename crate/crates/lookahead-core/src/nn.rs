//! Minimal dense-network core: batched forward passes, an explicit
//! reverse-mode gradient for each fixed topology, Gaussian output heads
//! with a smooth log-std clamp, bounded tanh-Gaussian sampling, and Adam.
//!
//! There is no general autodiff graph. Every loss used in the crate
//! supplies the gradient of the loss with respect to the network output
//! and the layers are differentiated by hand; correctness is pinned by
//! finite-difference checks.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn deriv_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// Weight matrix, shape [outputs, inputs].
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// Fully connected network with explicit parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

/// Layer dimensions and activation tags; the checkpoint shape header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub layers: Vec<(usize, usize, Activation)>,
}

impl DenseNet {
    /// MLP with the given hidden sizes, hidden activation, and an
    /// identity output layer. Weights and biases start uniform in
    /// +-1/sqrt(fan_in).
    pub fn mlp<R: Rng>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-scale..scale)
            });
            let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-scale..scale));
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                hidden_act
            };
            layers.push(Layer { w, b, act });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            layers: self
                .layers
                .iter()
                .map(|l| (l.w.ncols(), l.w.nrows(), l.act))
                .collect(),
        }
    }

    /// Flat parameter vector: per layer, row-major weights then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = flat[off];
                off += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[off];
                off += 1;
            }
        }
    }

    /// Rebuilds a network from its shape header and flat parameters.
    pub fn from_shape(shape: &NetShape, flat: &[f64]) -> Self {
        let mut layers = Vec::with_capacity(shape.layers.len());
        for &(inp, out, act) in &shape.layers {
            layers.push(Layer {
                w: Array2::zeros((out, inp)),
                b: Array1::zeros(out),
                act,
            });
        }
        let mut net = Self { layers };
        net.set_params_flat(flat);
        net
    }

    /// Batched forward pass: rows of `x` are inputs.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        for l in &self.layers {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            a = z.mapv(|v| l.act.apply(v));
        }
        a
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let x2 = x.clone().insert_axis(Axis(0));
        Ok(self.forward_batch(&x2).index_axis_move(Axis(0), 0))
    }

    /// Forward pass that keeps every layer activation for the backward
    /// pass. `acts[0]` is the input, `acts[L]` the output.
    pub fn forward_cache(&self, x: &Array2<f64>) -> ForwardCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let mut z = acts.last().unwrap().dot(&l.w.t());
            z += &l.b;
            acts.push(z.mapv(|v| l.act.apply(v)));
        }
        ForwardCache { acts }
    }

    /// Reverse-mode pass. `dl_dout` holds the loss gradient at the
    /// network output for every row of the cached batch; returns
    /// parameter gradients (summed over the batch) and the loss gradient
    /// at the input.
    pub fn backward(&self, cache: &ForwardCache, dl_dout: &Array2<f64>) -> (GradBuf, Array2<f64>) {
        let mut grads = GradBuf::zeros_like(self);
        let mut dl_da = dl_dout.clone();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let out = &cache.acts[idx + 1];
            let dz = &dl_da * &out.mapv(|a| l.act.deriv_from_output(a));
            grads.dw[idx] = dz.t().dot(&cache.acts[idx]);
            grads.db[idx] = dz.sum_axis(Axis(0));
            dl_da = dz.dot(&l.w);
        }
        (grads, dl_da)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

/// Per-layer parameter gradients mirroring a [`DenseNet`].
#[derive(Debug, Clone)]
pub struct GradBuf {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl GradBuf {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            dw: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            db: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &GradBuf) {
        for (a, b) in self.dw.iter_mut().zip(other.dw.iter()) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(other.db.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.dw.iter_mut() {
            *a *= s;
        }
        for a in self.db.iter_mut() {
            *a *= s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.dw.iter().zip(self.db.iter()) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Gradient of a scalar loss with respect to every parameter and the
/// input, for a loss expressed at the network output. The closure
/// receives the output and returns the loss value and its gradient at
/// the output.
pub fn grad_scalar<F>(net: &DenseNet, x: &Array1<f64>, loss: F) -> (f64, GradBuf, Array1<f64>)
where
    F: FnOnce(&Array1<f64>) -> (f64, Array1<f64>),
{
    let x2 = x.clone().insert_axis(Axis(0));
    let cache = net.forward_cache(&x2);
    let out = cache.output().index_axis(Axis(0), 0).to_owned();
    let (value, dl_dout) = loss(&out);
    let dl2 = dl_dout.insert_axis(Axis(0));
    let (grads, dl_dx) = net.backward(&cache, &dl2);
    (value, grads, dl_dx.index_axis_move(Axis(0), 0))
}

/// Adam with bias correction over the flat parameter layout of one net.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `net` in place from summed-or-averaged gradients.
    pub fn step(&mut self, net: &mut DenseNet, grads: &GradBuf) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut off = 0;
        let upd = |p: &mut f64, g: f64, m: &mut [f64], v: &mut [f64], off: usize| {
            m[off] = self.beta1 * m[off] + (1.0 - self.beta1) * g;
            v[off] = self.beta2 * v[off] + (1.0 - self.beta2) * g * g;
            let m_hat = m[off] / bc1;
            let v_hat = v[off] / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        };
        for (l, (dw, db)) in net
            .layers
            .iter_mut()
            .zip(grads.dw.iter().zip(grads.db.iter()))
        {
            for (p, &g) in l.w.iter_mut().zip(dw.iter()) {
                upd(p, g, &mut self.m, &mut self.v, off);
                off += 1;
            }
            for (p, &g) in l.b.iter_mut().zip(db.iter()) {
                upd(p, g, &mut self.m, &mut self.v, off);
                off += 1;
            }
        }
        debug_assert_eq!(off, self.m.len());
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 - tanh(u)^2), stable for large |u|.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Smooth log-std bound. Raw head outputs are squashed into
/// (min, max) by a pair of softplus hinges, so the bound is respected
/// everywhere while staying differentiable (a hard clamp would zero the
/// gradient at the rails).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianHead {
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for GaussianHead {
    fn default() -> Self {
        Self {
            log_std_min: -10.0,
            log_std_max: 2.0,
        }
    }
}

impl GaussianHead {
    /// Returns the bounded log-std and its derivative w.r.t. the raw
    /// head output. The squash `x - softplus(x - max) + softplus(min - x)`
    /// is near-identity in the interior and approaches each bound
    /// strictly from inside.
    pub fn clamp(&self, raw: f64) -> (f64, f64) {
        debug_assert!(self.log_std_max - self.log_std_min > 4.0);
        let y = raw - softplus(raw - self.log_std_max) + softplus(self.log_std_min - raw);
        // true derivative lies in (0,1); rounding can graze the rails
        let dy = (1.0 - sigmoid(raw - self.log_std_max) - sigmoid(self.log_std_min - raw))
            .clamp(0.0, 1.0);
        (y, dy)
    }

    pub fn clamp_batch(&self, raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut val = raw.clone();
        let mut der = raw.clone();
        for (v, d) in val.iter_mut().zip(der.iter_mut()) {
            let (y, dy) = self.clamp(*v);
            *v = y;
            *d = dy;
        }
        (val, der)
    }
}

/// A reparameterized batch of bounded tanh-Gaussian samples together
/// with everything the actor update needs.
#[derive(Debug, Clone)]
pub struct TanhGaussianSample {
    /// Standard normal draws, shape [batch, dim].
    pub z: Array2<f64>,
    /// Pre-squash values mean + std*z.
    pub u: Array2<f64>,
    /// Actions scaled into bounds.
    pub action: Array2<f64>,
    /// Per-row log densities of the actions.
    pub log_prob: Array1<f64>,
}

/// Tanh-squashed diagonal Gaussian scaled to per-dimension bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundedTanhGaussian {
    pub lo: Array1<f64>,
    pub hi: Array1<f64>,
}

impl BoundedTanhGaussian {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a < b));
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn center(&self, d: usize) -> f64 {
        0.5 * (self.lo[d] + self.hi[d])
    }

    fn half(&self, d: usize) -> f64 {
        0.5 * (self.hi[d] - self.lo[d])
    }

    /// Draws actions `center + half * tanh(mean + std*z)` with fresh
    /// standard-normal noise; log densities include the tanh and scale
    /// change-of-variable corrections.
    pub fn sample_batch<R: Rng>(
        &self,
        mean: &Array2<f64>,
        log_std: &Array2<f64>,
        rng: &mut R,
    ) -> TanhGaussianSample {
        let z = Array2::from_shape_fn(mean.dim(), |_| rng.sample::<f64, _>(StandardNormal));
        self.apply_noise(mean, log_std, z)
    }

    /// Deterministic variant with externally supplied noise.
    pub fn apply_noise(
        &self,
        mean: &Array2<f64>,
        log_std: &Array2<f64>,
        z: Array2<f64>,
    ) -> TanhGaussianSample {
        let (b, d) = mean.dim();
        let mut u = mean.clone();
        for ((r, c), v) in u.indexed_iter_mut() {
            *v += log_std[[r, c]].exp() * z[[r, c]];
        }
        let mut action = Array2::zeros((b, d));
        let mut log_prob = Array1::zeros(b);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        for r in 0..b {
            let mut lp = 0.0;
            for c in 0..d {
                let uu = u[[r, c]];
                action[[r, c]] = self.center(c) + self.half(c) * uu.tanh();
                lp += -log_std[[r, c]] - half_ln_2pi - 0.5 * z[[r, c]] * z[[r, c]];
                lp -= log_one_minus_tanh_sq(uu);
                lp -= self.half(c).ln();
            }
            log_prob[r] = lp;
        }
        TanhGaussianSample {
            z,
            u,
            action,
            log_prob,
        }
    }

    /// The deterministic (mean) action: `center + half * tanh(mean)`.
    pub fn mean_action(&self, mean: &Array2<f64>) -> Array2<f64> {
        let mut out = mean.clone();
        for ((_, c), v) in out.indexed_iter_mut() {
            *v = self.center(c) + self.half(c) * v.tanh();
        }
        out
    }

    /// Log density of externally given actions (used by the
    /// behavior-cloning regularizer). Actions are pulled back through
    /// the inverse tanh with a small margin to stay finite.
    pub fn log_prob_of(
        &self,
        mean: &Array2<f64>,
        log_std: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> (Array1<f64>, Array2<f64>) {
        let (b, d) = mean.dim();
        let mut u = Array2::zeros((b, d));
        let mut log_prob = Array1::zeros(b);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        for r in 0..b {
            let mut lp = 0.0;
            for c in 0..d {
                let unit =
                    ((actions[[r, c]] - self.center(c)) / self.half(c)).clamp(-0.999_999, 0.999_999);
                let uu = unit.atanh();
                u[[r, c]] = uu;
                let std = log_std[[r, c]].exp();
                let zz = (uu - mean[[r, c]]) / std;
                lp += -log_std[[r, c]] - half_ln_2pi - 0.5 * zz * zz;
                lp -= log_one_minus_tanh_sq(uu);
                lp -= self.half(c).ln();
            }
            log_prob[r] = lp;
        }
        (log_prob, u)
    }
}

/// Central finite differences of a scalar function of a parameter
/// vector; the independent oracle for every gradient check.
pub fn central_difference<F>(params: &[f64], mut f: F, h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work);
        work[i] = orig - h;
        let down = f(&work);
        work[i] = orig;
        grads.push((up - down) / (2.0 * h));
    }
    grads
}

/// Relative error used by the gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-6)
}
