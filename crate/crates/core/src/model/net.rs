//! Shared ELU trunk with linear heads, manual backprop and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// `y = W x + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform weights in `±gain·sqrt(3/fan_in)`, zero bias.
    fn kaiming_uniform(inputs: usize, outputs: usize, gain: f64, rng: &mut seed::Rng) -> Self {
        let bound = gain * (3.0 / inputs as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trunk layers (ELU after each) followed by `K` linear heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorNet {
    pub trunk: Vec<Dense>,
    /// K×m
    pub head_weight: Array2<f64>,
    /// K
    pub head_bias: Array1<f64>,
    pub step_count: u64,
}

/// Gradients with the same layout as [`ExplorNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub trunk: Vec<Dense>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

pub(crate) struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of trunk layer `l`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ExplorNet {
    pub fn new_zeroed(input_dim: usize, hidden: &[usize], heads: usize) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            trunk.push(Dense::zeros(prev, h));
            prev = h;
        }
        Self {
            trunk,
            head_weight: Array2::zeros((heads, prev)),
            head_bias: Array1::zeros(heads),
            step_count: 0,
        }
    }

    /// Kaiming-uniform fan-in trunk weights (gain √2), zero biases and zero
    /// heads, so an untrained net predicts 0.5 everywhere.
    pub fn init(input_dim: usize, hidden: &[usize], heads: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || heads == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "bad network shape: input {input_dim}, hidden {hidden:?}, heads {heads}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            trunk.push(Dense::kaiming_uniform(prev, h, 2f64.sqrt(), &mut rng));
            prev = h;
        }
        Ok(Self {
            trunk,
            head_weight: Array2::zeros((heads, prev)),
            head_bias: Array1::zeros(heads),
            step_count: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].weight.ncols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.head_weight.ncols()
    }

    pub fn heads(&self) -> usize {
        self.head_weight.nrows()
    }

    fn check_input(&self, z: ArrayView2<'_, f64>) -> Result<()> {
        if z.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: z.ncols() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite network input".into()));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, z: ArrayView2<'_, f64>) -> ForwardCache {
        let mut acts = vec![z.to_owned()];
        let mut pre = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let a = layer.apply(acts.last().expect("input present").view());
            acts.push(a.mapv(elu));
            pre.push(a);
        }
        let emb = acts.last().expect("trunk non-empty");
        let logits = emb.dot(&self.head_weight.t()) + &self.head_bias;
        ForwardCache { acts, pre, logits }
    }

    /// Embeddings (B×m) and head logits (B×K).
    pub fn forward(&self, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(z)?;
        let mut cache = self.forward_cached(z);
        let emb = cache.acts.pop().expect("trunk non-empty");
        Ok((emb, cache.logits))
    }

    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(z)?.1)
    }

    /// Logistic of every head logit.
    pub fn head_probabilities(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.logits(z)?.mapv(logistic))
    }

    /// Backpropagates `d_logits` (∂loss/∂logits, B×K) through a cached
    /// forward pass.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>) -> NetGrads {
        let emb = cache.acts.last().expect("trunk non-empty");
        let head_weight = d_logits.t().dot(emb).as_standard_layout().into_owned();
        let head_bias = d_logits.sum_axis(Axis(0));
        let mut d_act = d_logits.dot(&self.head_weight);
        let mut trunk = vec![Dense::zeros(0, 0); self.trunk.len()];
        for l in (0..self.trunk.len()).rev() {
            let mut d_pre = d_act;
            // For a ≤ 0, elu'(a) = e^a = elu(a) + 1, read off the cached activation.
            Zip::from(&mut d_pre)
                .and(&cache.pre[l])
                .and(&cache.acts[l + 1])
                .for_each(|d, &a, &h| {
                    if a <= 0.0 {
                        *d *= h + 1.0;
                    }
                });
            trunk[l] = Dense {
                weight: d_pre.t().dot(&cache.acts[l]).as_standard_layout().into_owned(),
                bias: d_pre.sum_axis(Axis(0)),
            };
            d_act = d_pre.dot(&self.trunk[l].weight);
        }
        NetGrads { trunk, head_weight, head_bias }
    }

    /// Named flat views of every parameter tensor, in a fixed order.
    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, d) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.{l}.weight"), d.weight.as_slice().expect("standard layout")));
            out.push((format!("trunk.{l}.bias"), d.bias.as_slice().expect("standard layout")));
        }
        out.push(("head.weight".into(), self.head_weight.as_slice().expect("standard layout")));
        out.push(("head.bias".into(), self.head_bias.as_slice().expect("standard layout")));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in &mut self.trunk {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_weight.as_slice_mut().expect("standard layout"));
        out.push(self.head_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, p) in self.params() {
            if let Some(i) = p.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "parameter {name}[{i}] became {} after step {}",
                    p[i], self.step_count
                )));
            }
        }
        Ok(())
    }
}

impl NetGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for d in &self.trunk {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        out.push(self.head_weight.as_slice().expect("standard layout"));
        out.push(self.head_bias.as_slice().expect("standard layout"));
        out
    }

    /// Fails on the first non-finite entry, naming its tensor.
    pub fn check_finite(&self, net: &ExplorNet) -> Result<()> {
        for ((name, _), g) in net.params().into_iter().zip(self.tensors()) {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("gradient of {name}[{i}] is {}", g[i])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every parameter, flattened in
/// [`ExplorNet::params`] order.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &ExplorNet, cfg: AdamConfig, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self { cfg, lr, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut ExplorNet, grads: &NetGrads) -> Result<()> {
        net.step_count += 1;
        let t = net.step_count as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for (((p, g), m), v) in net
            .params_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        net.check_finite()
    }
}

/// Uniform average of parameter snapshots.
pub(crate) fn average_params(snapshots: &[ExplorNet]) -> ExplorNet {
    let mut avg = snapshots[0].clone();
    let n = snapshots.len() as f64;
    let views: Vec<Vec<&[f64]>> = snapshots
        .iter()
        .map(|s| s.params().into_iter().map(|(_, p)| p).collect())
        .collect();
    for (i, dst) in avg.params_mut().into_iter().enumerate() {
        for (j, d) in dst.iter_mut().enumerate() {
            *d = views.iter().map(|v| v[i][j]).sum::<f64>() / n;
        }
    }
    avg.step_count = snapshots.last().map_or(0, |s| s.step_count);
    avg
}
