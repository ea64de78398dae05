//! Feed-forward network engine with hand-derived layer-local backward rules,
//! batch normalization and Adam.
//!
//! Each layer is `linear → [batch norm] → activation`. A linear layer that
//! feeds batch norm carries no bias; the batch-norm shift plays that role.

mod adam;
mod gradcheck;

pub use adam::AdamConfig;
pub use gradcheck::{grad_check, grad_check_against, GradCheckOptions, GradCheckReport};

use crate::dist::RngStream;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Exp,
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Exp => z.exp(),
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Exp => a,
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Exp => "exp",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "exp" => Ok(Activation::Exp),
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width_in: usize,
    pub width_out: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

/// A whole network as written in an architecture table: hidden widths
/// followed by the head width, e.g. `"37/24/1"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// Layer widths; the last entry is the head width.
    pub units: Vec<usize>,
    #[serde(default = "default_hidden_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "default_head")]
    pub head: Activation,
    /// Normalize the head's pre-activation too (representation encoders).
    #[serde(default)]
    pub head_batch_norm: bool,
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

fn default_head() -> Activation {
    Activation::Sigmoid
}

impl NetSpec {
    pub fn new(units: &[usize], batch_norm: bool, head: Activation) -> Self {
        Self {
            units: units.to_vec(),
            activation: Activation::Relu,
            batch_norm,
            head,
            head_batch_norm: false,
        }
    }

    /// Parses the `"a/b/c"` notation.
    pub fn parse_units(units: &str) -> Result<Vec<usize>> {
        units
            .split('/')
            .map(|u| {
                u.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad layer width '{u}' in '{units}'")))
            })
            .collect()
    }

    pub fn output_width(&self) -> usize {
        self.units.last().copied().unwrap_or(0)
    }

    pub fn layer_specs(&self, input_width: usize) -> Result<Vec<LayerSpec>> {
        if self.units.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut specs = Vec::with_capacity(self.units.len());
        let mut width_in = input_width;
        for (i, &width_out) in self.units.iter().enumerate() {
            let is_head = i + 1 == self.units.len();
            specs.push(LayerSpec {
                width_in,
                width_out,
                activation: if is_head { self.head } else { self.activation },
                batch_norm: if is_head { self.head_batch_norm } else { self.batch_norm },
            });
            width_in = width_out;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    /// `[width_in, width_out]`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub bn: Option<BatchNorm>,
}

/// Gradient (or any per-parameter tensor set) with the same layout as a
/// network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl LayerGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.weight.as_slice().expect("standard layout")];
        for t in [&self.bias, &self.gamma, &self.beta].into_iter().flatten() {
            out.push(t.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.weight.as_slice_mut().expect("standard layout")];
        for t in [&mut self.bias, &mut self.gamma, &mut self.beta].into_iter().flatten() {
            out.push(t.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(LayerGrads::slices).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(LayerGrads::slices_mut).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        let rhs = other.slices();
        let mut lhs = self.slices_mut();
        if lhs.len() != rhs.len() || lhs.iter().zip(&rhs).any(|(l, r)| l.len() != r.len()) {
            return Err(Error::Config("gradient layouts differ".into()));
        }
        for (l, r) in lhs.iter_mut().zip(rhs) {
            l.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|g| g.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// pre-activation (after batch norm when present)
    z: Array2<f64>,
    bn: Option<BnCache>,
}

/// Activations recorded by [`Network::forward`], consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    mode: Mode,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`
    acts: Vec<Array2<f64>>,
    caches: Vec<LayerCache>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("at least the input is recorded")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.acts.pop().expect("at least the input is recorded")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }

    /// Sign pattern of every ReLU pre-activation; two passes with equal
    /// patterns lie on the same linear piece.
    pub(crate) fn relu_pattern(&self, specs: &[LayerSpec]) -> Vec<bool> {
        let mut out = Vec::new();
        for (cache, spec) in self.caches.iter().zip(specs) {
            if spec.activation == Activation::Relu {
                out.extend(cache.z.iter().map(|&z| z > 0.0));
            }
        }
        out
    }
}

/// Parameters, batch-norm running statistics and Adam state of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    adam: AdamConfig,
    first_moment: Gradients,
    second_moment: Gradients,
    step: u64,
}

impl Network {
    /// He-uniform initialization for ReLU layers, Xavier-uniform otherwise.
    pub fn new(specs: &[LayerSpec], rng: &mut RngStream) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, spec) in specs.iter().enumerate() {
            if spec.width_in == 0 || spec.width_out == 0 {
                return Err(Error::Config(format!("layer {i}: widths must be >= 1")));
            }
            if i > 0 && specs[i - 1].width_out != spec.width_in {
                return Err(Error::Config(format!(
                    "layer {i}: input width {} does not match previous output {}",
                    spec.width_in,
                    specs[i - 1].width_out
                )));
            }
            if spec.activation == Activation::Exp && i + 1 != specs.len() {
                return Err(Error::Config(format!("layer {i}: exp activation is only allowed on the output head")));
            }
        }
        let layers: Vec<Layer> = specs
            .iter()
            .map(|spec| {
                let limit = match spec.activation {
                    Activation::Relu => (6.0 / spec.width_in as f64).sqrt(),
                    _ => (6.0 / (spec.width_in + spec.width_out) as f64).sqrt(),
                };
                let weight = Array2::from_shape_fn((spec.width_in, spec.width_out), |_| {
                    limit * (2.0 * rng.uniform() - 1.0)
                });
                let bn = spec.batch_norm.then(|| BatchNorm {
                    gamma: Array1::ones(spec.width_out),
                    beta: Array1::zeros(spec.width_out),
                    running_mean: Array1::zeros(spec.width_out),
                    running_var: Array1::ones(spec.width_out),
                });
                Layer {
                    spec: *spec,
                    weight,
                    bias: (!spec.batch_norm).then(|| Array1::zeros(spec.width_out)),
                    bn,
                }
            })
            .collect();
        let mut net = Self {
            layers,
            adam: AdamConfig::default(),
            first_moment: Gradients { layers: vec![] },
            second_moment: Gradients { layers: vec![] },
            step: 0,
        };
        net.first_moment = net.zero_gradients();
        net.second_moment = net.zero_gradients();
        Ok(net)
    }

    pub fn from_spec(spec: &NetSpec, input_width: usize, rng: &mut RngStream) -> Result<Self> {
        Self::new(&spec.layer_specs(input_width)?, rng)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.width_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").spec.width_out
    }

    pub fn head(&self) -> Activation {
        self.layers.last().expect("non-empty").spec.activation
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam_config(&self) -> AdamConfig {
        self.adam
    }

    pub fn set_adam_config(&mut self, cfg: AdamConfig) {
        self.adam = cfg;
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: l.bias.as_ref().map(|b| Array1::zeros(b.len())),
                    gamma: l.bn.as_ref().map(|bn| Array1::zeros(bn.gamma.len())),
                    beta: l.bn.as_ref().map(|bn| Array1::zeros(bn.beta.len())),
                })
                .collect(),
        }
    }

    /// Current parameter values in the same layout as [`Gradients`].
    pub fn parameters(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                    gamma: l.bn.as_ref().map(|bn| bn.gamma.clone()),
                    beta: l.bn.as_ref().map(|bn| bn.beta.clone()),
                })
                .collect(),
        }
    }

    /// Overwrites every parameter; `params` must have this network's layout.
    pub fn set_parameters(&mut self, params: &Gradients) -> Result<()> {
        let src = params.slices();
        let mut dst = self.param_slices_mut();
        if src.len() != dst.len() || src.iter().zip(&dst).any(|(s, d)| s.len() != d.len()) {
            return Err(Error::Config("parameter layout does not match network".into()));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            d.copy_from_slice(s);
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            if let Some(b) = &mut l.bias {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().param_count()
    }

    /// Squared L2 norm of all trainable parameters.
    pub fn l2_norm_sq(&self) -> f64 {
        self.parameters()
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|p| p * p)
            .sum()
    }

    /// Adds the gradient of `lambda · ||params||²` to `grads`.
    pub fn add_l2_gradient(&self, grads: &mut Gradients, lambda: f64) -> Result<()> {
        if lambda == 0.0 {
            return Ok(());
        }
        let mut params = self.parameters();
        params.scale(2.0 * lambda);
        grads.add_assign(&params)
    }

    /// Runs the network on a batch.
    ///
    /// Train mode normalizes with batch statistics and rejects batches of one
    /// row when any layer uses batch norm; eval mode uses running statistics.
    /// Neither mode mutates the network; see [`Network::update_running_stats`].
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<ForwardPass> {
        if x.ncols() != self.input_width() {
            return Err(Error::Config(format!(
                "feature width {} does not match network input width {}",
                x.ncols(),
                self.input_width()
            )));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        if mode == Mode::Train && n < 2 && self.layers.iter().any(|l| l.bn.is_some()) {
            return Err(Error::Config(
                "train-mode batch norm needs at least 2 rows; use eval mode for single rows".into(),
            ));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("pushed above");
            let mut h = input.dot(&layer.weight);
            if let Some(b) = &layer.bias {
                h += b;
            }
            let (z, bn_cache) = match &layer.bn {
                None => (h, None),
                Some(bn) => {
                    let (mean, var, batch) = match mode {
                        Mode::Train => {
                            let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                            let centered = &h - &mean;
                            let var = (&centered * &centered).mean_axis(Axis(0)).expect("non-empty batch");
                            (mean, var, true)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), false),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = (&h - &mean) * &inv_std;
                    let z = &xhat * &bn.gamma + &bn.beta;
                    let cache = BnCache {
                        xhat,
                        inv_std,
                        batch_mean: batch.then(|| mean.clone()),
                        batch_var: batch.then(|| var.clone()),
                    };
                    (z, Some(cache))
                }
            };
            let act = layer.spec.activation;
            let a = z.mapv(|v| act.apply(v));
            if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("layer {idx}"),
                    format!("non-finite activation {bad} ({act})"),
                ));
            }
            caches.push(LayerCache { z, bn: bn_cache });
            acts.push(a);
        }
        Ok(ForwardPass { mode, acts, caches })
    }

    /// Eval-mode output.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval)?.into_output())
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) -> Result<()> {
        self.check_pass(pass)?;
        let n = pass.batch_size() as f64;
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            if let (Some(bn), Some(c)) = (&mut layer.bn, &cache.bn) {
                if let (Some(mean), Some(var)) = (&c.batch_mean, &c.batch_var) {
                    let unbiased = var * (n / (n - 1.0).max(1.0));
                    bn.running_mean = &bn.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                    bn.running_var = &bn.running_var * BN_MOMENTUM + &unbiased * (1.0 - BN_MOMENTUM);
                }
            }
        }
        Ok(())
    }

    fn check_pass(&self, pass: &ForwardPass) -> Result<()> {
        if pass.caches.len() != self.layers.len()
            || pass
                .acts
                .iter()
                .skip(1)
                .zip(&self.layers)
                .any(|(a, l)| a.ncols() != l.spec.width_out)
        {
            return Err(Error::State("forward pass was recorded on a different network".into()));
        }
        Ok(())
    }

    /// Backpropagates `upstream = dL/d(output)` through a train-mode pass.
    ///
    /// Returns the parameter gradients and `dL/d(input)`.
    pub fn backward(&self, pass: &ForwardPass, upstream: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        self.check_pass(pass)?;
        if pass.mode != Mode::Train {
            return Err(Error::State("backward needs a forward pass recorded in train mode".into()));
        }
        if upstream.dim() != pass.output().dim() {
            return Err(Error::Config(format!(
                "upstream gradient shape {:?} does not match output shape {:?}",
                upstream.dim(),
                pass.output().dim()
            )));
        }
        let n = pass.batch_size() as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let cache = &pass.caches[idx];
            let a = &pass.acts[idx + 1];
            let act = layer.spec.activation;
            // dL/dz
            Zip::from(&mut delta)
                .and(&cache.z)
                .and(a)
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));

            let (dh, gamma_grad, beta_grad) = match (&layer.bn, &cache.bn) {
                (Some(bn), Some(c)) => {
                    let dbeta = delta.sum_axis(Axis(0));
                    let dgamma = (&delta * &c.xhat).sum_axis(Axis(0));
                    let dxhat = &delta * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
                    let dh = (&dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &c.inv_std / n;
                    (dh, Some(dgamma), Some(dbeta))
                }
                _ => (delta, None, None),
            };
            let input = &pass.acts[idx];
            let weight_grad = input.t().dot(&dh).as_standard_layout().into_owned();
            let bias_grad = layer.bias.as_ref().map(|_| dh.sum_axis(Axis(0)));
            delta = dh.dot(&layer.weight.t());
            grads.push(LayerGrads {
                weight: weight_grad,
                bias: bias_grad,
                gamma: gamma_grad,
                beta: beta_grad,
            });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Bias-corrected Adam update `p ← p − lr · m̂ / (sqrt(v̂) + ε)`.
    ///
    /// A zero learning rate is rejected; callers freeze a network by not
    /// stepping it.
    pub fn adam_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !grads.is_finite() {
            return Err(Error::numeric("adam_step", "non-finite gradient"));
        }
        {
            let g = grads.slices();
            let shapes_match = g.len() == self.first_moment.slices().len()
                && g.iter().zip(self.first_moment.slices()).all(|(a, b)| a.len() == b.len());
            if !shapes_match {
                return Err(Error::Config("gradient layout does not match network".into()));
            }
        }
        self.step += 1;
        let cfg = self.adam;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut m = std::mem::replace(&mut self.first_moment, Gradients { layers: vec![] });
        let mut v = std::mem::replace(&mut self.second_moment, Gradients { layers: vec![] });
        {
            let mut params = self.param_slices_mut();
            let mut ms = m.slices_mut();
            let mut vs = v.slices_mut();
            for (((p, g), m), v) in params.iter_mut().zip(grads.slices()).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
        self.first_moment = m;
        self.second_moment = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
