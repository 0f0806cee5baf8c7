//! A small multilayer perceptron with a sinusoidal time embedding, a
//! continuous output head and an optional grouped softmax head, together
//! with its hand-written reverse pass and an Adam optimizer.
//!
//! All parameters live in one flat `Vec<f64>`; each layer's weight matrix is
//! stored row-major as `fan_in × fan_out` so a batch forward is
//! `H · W + b`.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Highest angular frequency of the time embedding.
const MAX_TIME_FREQUENCY: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Width of the entity features (time embedding excluded).
    pub in_dim: usize,
    pub hidden_dim: usize,
    /// Number of linear layers, output layer included.
    pub depth: usize,
    pub out_cont_dim: usize,
    /// Classes per simplex group; 0 disables the categorical head.
    pub out_type_dim: usize,
    /// Number of independent simplex groups (one per point).
    pub type_groups: usize,
    pub time_embed_dim: usize,
}

impl NetConfig {
    pub fn new(in_dim: usize, out_cont_dim: usize, out_type_dim: usize, type_groups: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 128,
            depth: 6,
            out_cont_dim,
            out_type_dim,
            type_groups: if out_type_dim == 0 { 0 } else { type_groups },
            time_embed_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.in_dim == 0 || self.hidden_dim == 0 {
            return bad("in_dim and hidden_dim must be positive".into());
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return bad(format!("time_embed_dim must be positive and even, got {}", self.time_embed_dim));
        }
        if self.out_type_dim == 1 {
            return bad("out_type_dim must be 0 or >= 2".into());
        }
        if self.out_type_dim > 0 && self.type_groups == 0 {
            return bad("a categorical head needs at least one group".into());
        }
        if self.out_cont_dim + self.simplex_width() == 0 {
            return bad("network has no outputs".into());
        }
        Ok(())
    }

    pub fn simplex_width(&self) -> usize {
        self.out_type_dim * self.type_groups
    }

    pub fn out_dim(&self) -> usize {
        self.out_cont_dim + self.simplex_width()
    }

    fn layer_widths(&self) -> Vec<(usize, usize)> {
        let input = self.in_dim + self.time_embed_dim;
        if self.depth == 1 {
            return vec![(input, self.out_dim())];
        }
        let mut widths = vec![(input, self.hidden_dim)];
        widths.extend(std::iter::repeat_n((self.hidden_dim, self.hidden_dim), self.depth - 2));
        widths.push((self.hidden_dim, self.out_dim()));
        widths
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

impl LayerLayout {
    fn end(&self) -> usize {
        self.bias + self.fan_out
    }
}

fn layout_for(config: &NetConfig) -> (Vec<LayerLayout>, usize) {
    let mut offset = 0;
    let layers = config
        .layer_widths()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let layer = LayerLayout {
                fan_in,
                fan_out,
                weight: offset,
                bias: offset + fan_in * fan_out,
            };
            offset = layer.end();
            layer
        })
        .collect();
    (layers, offset)
}

/// Sinusoidal features `[sin(ω_k t), cos(ω_k t)]` with `ω_k` spaced
/// geometrically from 1 to [`MAX_TIME_FREQUENCY`].
pub fn time_embedding(t: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    for k in 0..half {
        let freq = if half > 1 {
            (MAX_TIME_FREQUENCY.ln() * k as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        out[k] = (freq * t).sin();
        out[half + k] = (freq * t).cos();
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Network outputs for a batch: one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub cont: Array2<f64>,
    /// `type_groups` consecutive blocks of `out_type_dim` probabilities, or
    /// zero columns without a categorical head.
    pub simplex: Array2<f64>,
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer.
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Array2<f64>>,
    pub output: Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: NetConfig,
    layers: Vec<LayerLayout>,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero weights and biases.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (layers, len) = layout_for(&config);
        Ok(Self {
            config,
            layers,
            params: vec![0.0; len],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut net.params[layer.weight..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                what: "network parameters",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weight(&self, layer: &LayerLayout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((layer.fan_in, layer.fan_out), &self.params[layer.weight..layer.bias])
            .expect("layout matches parameter buffer")
    }

    fn bias(&self, layer: &LayerLayout) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[layer.bias..layer.end()])
    }

    fn embed_inputs(&self, input: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
        let cfg = &self.config;
        if input.ncols() != cfg.in_dim {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: cfg.in_dim,
                got: input.ncols(),
            });
        }
        if t.len() != input.nrows() {
            return Err(Error::DimensionMismatch {
                what: "time batch",
                expected: input.nrows(),
                got: t.len(),
            });
        }
        if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::OutOfRange(format!("network time {bad} outside [0, 1]")));
        }
        let mut h = Array2::zeros((input.nrows(), cfg.in_dim + cfg.time_embed_dim));
        h.slice_mut(s![.., ..cfg.in_dim]).assign(&input);
        for (mut row, &tb) in h.axis_iter_mut(Axis(0)).zip(t) {
            let emb = row.slice_mut(s![cfg.in_dim..]);
            time_embedding(tb, cfg.time_embed_dim, emb.into_slice().expect("row-major buffer"));
        }
        Ok(h)
    }

    fn split_output(&self, out: Array2<f64>) -> Prediction {
        let cfg = &self.config;
        let cont = out.slice(s![.., ..cfg.out_cont_dim]).to_owned();
        let mut simplex = out.slice(s![.., cfg.out_cont_dim..]).to_owned();
        if cfg.out_type_dim > 0 {
            for mut row in simplex.axis_iter_mut(Axis(0)) {
                for group in row.as_slice_mut().expect("owned rows are contiguous").chunks_mut(cfg.out_type_dim) {
                    softmax_in_place(group);
                }
            }
        }
        Prediction { cont, simplex }
    }

    /// Batched forward pass, keeping what the reverse pass needs.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>, t: &[f64]) -> Result<ForwardTrace> {
        let mut h = self.embed_inputs(input, t)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&self.weight(layer));
            z += &self.bias(layer);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: idx });
            }
            layer_inputs.push(h);
            if idx == last {
                h = z;
            } else {
                h = z.mapv(silu);
                pre_activations.push(z);
            }
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            output: self.split_output(h),
        })
    }

    /// Batched forward pass without keeping intermediate activations.
    pub fn predict(&self, input: ArrayView2<'_, f64>, t: &[f64]) -> Result<Prediction> {
        Ok(self.forward_batch(input, t)?.output)
    }

    /// Single-entity forward pass.
    pub fn forward(&self, input: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("one row");
        let out = self.predict(view, &[t])?;
        Ok((out.cont.row(0).to_vec(), out.simplex.row(0).to_vec()))
    }

    /// Reverse pass: gradient of a scalar loss with respect to every
    /// parameter, given the loss gradient with respect to the continuous
    /// outputs and the simplex probabilities (not the logits).
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        d_cont: ArrayView2<'_, f64>,
        d_simplex: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let batch = trace.output.cont.nrows();
        if d_cont.dim() != (batch, cfg.out_cont_dim) {
            return Err(Error::DimensionMismatch {
                what: "continuous-head gradient",
                expected: batch * cfg.out_cont_dim,
                got: d_cont.len(),
            });
        }
        if d_simplex.dim() != (batch, cfg.simplex_width()) {
            return Err(Error::DimensionMismatch {
                what: "simplex-head gradient",
                expected: batch * cfg.simplex_width(),
                got: d_simplex.len(),
            });
        }

        let mut dz = Array2::zeros((batch, cfg.out_dim()));
        dz.slice_mut(s![.., ..cfg.out_cont_dim]).assign(&d_cont);
        if cfg.out_type_dim > 0 {
            let probs = &trace.output.simplex;
            for b in 0..batch {
                let p = probs.row(b);
                let g = d_simplex.row(b);
                let mut dl = dz.slice_mut(s![b, cfg.out_cont_dim..]);
                for grp in 0..cfg.type_groups {
                    let range = grp * cfg.out_type_dim..(grp + 1) * cfg.out_type_dim;
                    let dot: f64 = range.clone().map(|j| p[j] * g[j]).sum();
                    for j in range {
                        dl[j] = p[j] * (g[j] - dot);
                    }
                }
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let h = &trace.layer_inputs[idx];
            {
                let (w_part, rest) = grad[layer.weight..layer.end()].split_at_mut(layer.fan_in * layer.fan_out);
                let mut dw = ArrayViewMut2::from_shape((layer.fan_in, layer.fan_out), w_part)
                    .expect("layout matches gradient buffer");
                ndarray::linalg::general_mat_mul(1.0, &h.t(), &dz, 0.0, &mut dw);
                ArrayViewMut1::from(rest).assign(&dz.sum_axis(Axis(0)));
            }
            if grad[layer.weight..layer.end()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: idx });
            }
            if idx > 0 {
                let dh = dz.dot(&self.weight(layer).t());
                let z = &trace.pre_activations[idx - 1];
                dz = Array2::from_shape_fn(dh.raw_dim(), |ij| dh[ij] * silu_grad(z[ij]));
            }
        }
        Ok(grad)
    }

    /// Single-entity reverse pass.
    pub fn backward(&self, input: &[f64], t: f64, d_cont: &[f64], d_simplex: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("one row");
        let trace = self.forward_batch(view, &[t])?;
        let d_cont = ArrayView2::from_shape((1, d_cont.len()), d_cont).expect("one row");
        let d_simplex = ArrayView2::from_shape((1, d_simplex.len()), d_simplex).expect("one row");
        self.backward_batch(&trace, d_cont, d_simplex)
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in logits.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for (what, len) in [("adam parameters", params.len()), ("adam gradient", grad.len())] {
            if len != n {
                return Err(Error::DimensionMismatch { what, expected: n, got: len });
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for i in 0..n {
            let g = grad[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
        Ok(())
    }
}
