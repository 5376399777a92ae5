//! Small fully connected networks with hand-written backward passes.
//!
//! Batches are passed sample-major (`n × dim`) and kept feature-major
//! (`dim × n`) inside the cache, which turns every product into a row-axpy
//! over the batch axis.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{matmul_into, DenseMatrix};
use super::rng::RngState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the cached pre- and post-activation.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer. `weight` is `out × in`; `dropout` is the rate applied to
/// this layer's output and must be zero on the final layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    /// Rate applied to the raw network input.
    input_dropout: f64,
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("dropout rate {p} outside [0, 1)")))
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, input_dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        check_rate(input_dropout)?;
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!(
                    "layer {k}: bias length {} for output dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} takes {} inputs but layer {} produces {}",
                    layer.in_dim(),
                    k - 1,
                    layers[k - 1].out_dim()
                )));
            }
            if !layer.weight.all_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::domain(format!(
                    "layer {k} has non-finite parameters"
                )));
            }
            check_rate(layer.dropout)?;
        }
        if layers.last().is_some_and(|l| l.dropout != 0.0) {
            return Err(Error::config("final layer must not apply dropout"));
        }
        Ok(Self {
            layers,
            input_dropout,
        })
    }

    /// Randomly initialized network with layer widths `dims` (input first).
    /// Rectifier layers use He-uniform bounds, the rest Glorot-uniform;
    /// biases start at zero.
    pub fn init(
        dims: &[usize],
        activations: &[Activation],
        dropout: &[f64],
        rng: RngState,
    ) -> Result<Self> {
        let n_layers = dims.len().saturating_sub(1);
        if n_layers == 0 || activations.len() != n_layers || dropout.len() != n_layers {
            return Err(Error::shape(format!(
                "{} widths, {} activations, {} dropout rates",
                dims.len(),
                activations.len(),
                dropout.len()
            )));
        }
        let mut g = rng.generator();
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = match activations[k] {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::config(format!("init bound: {e}")))?;
            let values: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut g)).collect();
            layers.push(Layer {
                weight: DenseMatrix::from_vec(fan_out, fan_in, values)?,
                bias: vec![0.0; fan_out],
                activation: activations[k],
                dropout: dropout[k],
            });
        }
        Self::new(layers, 0.0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dropout(&self) -> f64 {
        self.input_dropout
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input to output.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    /// Dropout rate feeding layer `k` (`k = 0` is the raw input).
    fn site_rate(&self, k: usize) -> f64 {
        if k == 0 {
            self.input_dropout
        } else {
            self.layers[k - 1].dropout
        }
    }

    /// Copy with every active dropout site (nonzero rate) set to `p`.
    /// With `p = 0` the copy is fully deterministic.
    pub fn with_dropout_rate(&self, p: f64) -> Result<Self> {
        check_rate(p)?;
        let mut out = self.clone();
        if out.input_dropout > 0.0 {
            out.input_dropout = p;
        }
        for layer in &mut out.layers {
            if layer.dropout > 0.0 {
                layer.dropout = p;
            }
        }
        Ok(out)
    }

    /// Sum of squared weight-matrix entries; biases excluded.
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.sum_squares()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.values().len() + l.bias.len())
            .sum()
    }

    /// Parameters in layer order, each layer's weights then its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.values());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.values_mut();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Applies `params -= lr * grads` style updates through a closure per
    /// tensor, used by the optimizers.
    pub(crate) fn zip_tensors_mut(
        &mut self,
        grads: &MlpGrads,
        mut f: impl FnMut(usize, &mut [f64], &[f64]),
    ) {
        let mut slot = 0;
        for (l, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            f(slot, l.weight.values_mut(), gw.values());
            f(slot + 1, &mut l.bias, gb);
            slot += 2;
        }
    }
}

/// Gradients shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.out_dim()])
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.scale(s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Adds `2·coef·W` to the weight gradients (derivative of `coef·‖W‖²`).
    pub fn add_l2(&mut self, params: &MlpParams, coef: f64) {
        if coef == 0.0 {
            return;
        }
        for (g, l) in self.weights.iter_mut().zip(&params.layers) {
            for (gv, wv) in g.values_mut().iter_mut().zip(l.weight.values()) {
                *gv += 2.0 * coef * wv;
            }
        }
    }

    /// Tensor slices in the order used by [`MlpParams::zip_tensors_mut`].
    pub(crate) fn tensor_lens(&self) -> Vec<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.values().len(), b.len()])
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Layer input after dropout, feature-major `in × n`.
    input: DenseMatrix,
    /// Scaled keep-mask (0 or 1/(1−p)) applied to `input`, when dropout ran.
    mask: Option<DenseMatrix>,
    pre: DenseMatrix,
    post: DenseMatrix,
}

/// Everything `backward` needs to replay one stochastic forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    batch: usize,
    arch: Vec<usize>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// Keep-mask for `dim` units of one sample, scaled by `1/(1−p)`.
fn draw_mask(p: f64, dim: usize, rng: RngState, out: &mut [f64]) {
    let mut g = rng.generator();
    let keep = 1.0 / (1.0 - p);
    for o in out.iter_mut().take(dim) {
        let u: f64 = g.random();
        *o = if u < p { 0.0 } else { keep };
    }
}

/// Forward pass over a sample-major batch.
///
/// Sample `i` draws the mask for dropout site `k` from
/// `rng.derive(i).derive(k)`, so a sample's path does not depend on the rest
/// of the batch's contents, only on its position.
pub fn forward_batch(
    params: &MlpParams,
    inputs: &DenseMatrix,
    dropout_enabled: bool,
    rng: RngState,
) -> Result<(DenseMatrix, ForwardCache)> {
    if inputs.cols() != params.in_dim() {
        return Err(Error::shape(format!(
            "input dim {} for a network taking {}",
            inputs.cols(),
            params.in_dim()
        )));
    }
    if !inputs.all_finite() {
        return Err(Error::domain("non-finite network input"));
    }
    let n = inputs.rows();
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut current = inputs.transpose();
    for (k, layer) in params.layers.iter().enumerate() {
        let p = params.site_rate(k);
        let mask = if dropout_enabled && p > 0.0 {
            let dim = current.rows();
            // draw per sample, then lay out feature-major
            let mut per_sample = vec![0.0; dim];
            let mut mask = DenseMatrix::zeros(dim, n);
            for i in 0..n {
                draw_mask(
                    p,
                    dim,
                    rng.derive(i as u64).derive(k as u64),
                    &mut per_sample,
                );
                for (f, &m) in per_sample.iter().enumerate() {
                    mask.set(f, i, m);
                }
            }
            for (x, m) in current.values_mut().iter_mut().zip(mask.values()) {
                *x *= m;
            }
            Some(mask)
        } else {
            None
        };
        let mut pre = DenseMatrix::zeros(layer.out_dim(), n);
        matmul_into(&layer.weight, &current, &mut pre);
        for (j, &b) in layer.bias.iter().enumerate() {
            pre.row_mut(j).iter_mut().for_each(|v| *v += b);
        }
        let mut post = pre.clone();
        let act = layer.activation;
        post.values_mut()
            .iter_mut()
            .for_each(|v| *v = act.apply(*v));
        let next = post.clone();
        caches.push(LayerCache {
            input: current,
            mask,
            pre,
            post,
        });
        current = next;
    }
    let out = current.transpose();
    Ok((
        out,
        ForwardCache {
            layers: caches,
            batch: n,
            arch: params.arch(),
        },
    ))
}

/// Single-vector forward pass; equivalent to a batch of one.
pub fn mlp_forward(
    params: &MlpParams,
    input: &[f64],
    dropout_enabled: bool,
    rng: RngState,
) -> Result<(Vec<f64>, ForwardCache)> {
    let x = DenseMatrix::from_vec(1, input.len(), input.to_vec()).map_err(|e| match e {
        Error::Domain(_) => Error::domain("non-finite network input"),
        other => other,
    })?;
    let (y, cache) = forward_batch(params, &x, dropout_enabled, rng)?;
    Ok((y.into_values(), cache))
}

/// Backward pass for a cached batch. `upstream` is `n × out`; returns the
/// parameter gradients summed over the batch and the per-sample input
/// gradients (`n × in`).
pub fn backward_batch(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &DenseMatrix,
) -> Result<(MlpGrads, DenseMatrix)> {
    if cache.arch != params.arch() || cache.layers.len() != params.layers.len() {
        return Err(Error::shape(format!(
            "cache for architecture {:?} used with {:?}",
            cache.arch,
            params.arch()
        )));
    }
    if upstream.rows() != cache.batch || upstream.cols() != params.out_dim() {
        return Err(Error::shape(format!(
            "upstream gradient {}x{} for batch {} and output {}",
            upstream.rows(),
            upstream.cols(),
            cache.batch,
            params.out_dim()
        )));
    }
    let mut grads = MlpGrads::zeros_like(params);
    let mut d_post = upstream.transpose();
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let lc = &cache.layers[k];
        let act = layer.activation;
        let mut d_pre = d_post;
        for ((d, &pre), &post) in d_pre
            .values_mut()
            .iter_mut()
            .zip(lc.pre.values())
            .zip(lc.post.values())
        {
            *d *= act.derivative(pre, post);
        }
        for (j, gb) in grads.biases[k].iter_mut().enumerate() {
            *gb = d_pre.row(j).iter().fold(0.0, |acc, v| acc + v);
        }
        // dW = dPre · inputᵀ
        let input_t = lc.input.transpose();
        matmul_into(&d_pre, &input_t, &mut grads.weights[k]);
        // dInput = Wᵀ · dPre, accumulated row by row of W
        let mut d_in = DenseMatrix::zeros(layer.in_dim(), cache.batch);
        for j in 0..layer.out_dim() {
            let w_row = layer.weight.row(j);
            let g_row = d_pre.row(j);
            for (f, &w) in w_row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, &g) in d_in.row_mut(f).iter_mut().zip(g_row) {
                    *o += w * g;
                }
            }
        }
        if let Some(mask) = &lc.mask {
            for (d, &m) in d_in.values_mut().iter_mut().zip(mask.values()) {
                *d *= m;
            }
        }
        d_post = d_in;
    }
    Ok((grads, d_post.transpose()))
}

/// Single-vector backward pass matching [`mlp_forward`].
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream_grad: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    let up = DenseMatrix::from_vec(1, upstream_grad.len(), upstream_grad.to_vec())?;
    let (g, d) = backward_batch(params, cache, &up)?;
    Ok((g, d.into_values()))
}

/// Monte Carlo forward passes for inference.
///
/// Returns an `n × passes` matrix whose entry `(i, t)` is bitwise equal to
/// the output of `mlp_forward(params, inputs.row(i), true, pass_rng(i, t))`
/// for a single-output network. Layers before the first active dropout site
/// are deterministic, so they are evaluated once per sample and shared by
/// all passes.
pub fn mc_forward<F>(
    params: &MlpParams,
    inputs: &DenseMatrix,
    passes: usize,
    pass_rng: F,
) -> Result<DenseMatrix>
where
    F: Fn(usize, usize) -> RngState,
{
    if params.out_dim() != 1 {
        return Err(Error::shape(
            "Monte Carlo inference expects a scalar output",
        ));
    }
    if inputs.cols() != params.in_dim() {
        return Err(Error::shape(format!(
            "input dim {} for a network taking {}",
            inputs.cols(),
            params.in_dim()
        )));
    }
    if !inputs.all_finite() {
        return Err(Error::domain("non-finite network input"));
    }
    let n = inputs.rows();
    let n_layers = params.layers.len();
    let first_site = (0..n_layers)
        .find(|&k| params.site_rate(k) > 0.0)
        .unwrap_or(n_layers);
    // deterministic prefix, feature-major
    let mut current = inputs.transpose();
    for layer in &params.layers[..first_site] {
        current = apply_layer(layer, &current);
    }
    if first_site == n_layers {
        let mut out = DenseMatrix::zeros(n, passes);
        for i in 0..n {
            out.row_mut(i)
                .iter_mut()
                .for_each(|v| *v = current.get(0, i));
        }
        return Ok(out);
    }
    // replicate each sample column `passes` times: column i*passes + t
    let dim = current.rows();
    let cols = n * passes;
    let mut rep = DenseMatrix::zeros(dim, cols);
    for f in 0..dim {
        let src = current.row(f);
        let dst = rep.row_mut(f);
        for i in 0..n {
            dst[i * passes..(i + 1) * passes]
                .iter_mut()
                .for_each(|v| *v = src[i]);
        }
    }
    let mut current = rep;
    let mut mask = vec![0.0; 0];
    for k in first_site..n_layers {
        let p = params.site_rate(k);
        if p > 0.0 {
            let dim = current.rows();
            mask.resize(dim, 0.0);
            for i in 0..n {
                for t in 0..passes {
                    // the single-vector path is sample 0 of a batch of one
                    draw_mask(p, dim, pass_rng(i, t).derive(0).derive(k as u64), &mut mask);
                    let c = i * passes + t;
                    for (f, &m) in mask.iter().enumerate() {
                        let v = current.get(f, c);
                        current.set(f, c, v * m);
                    }
                }
            }
        }
        current = apply_layer(&params.layers[k], &current);
    }
    DenseMatrix::from_vec(n, passes, current.into_values())
}

/// Affine map plus activation on a feature-major batch.
fn apply_layer(layer: &Layer, input: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(layer.out_dim(), input.cols());
    matmul_into(&layer.weight, input, &mut out);
    let act = layer.activation;
    for (j, &b) in layer.bias.iter().enumerate() {
        out.row_mut(j)
            .iter_mut()
            .for_each(|v| *v = act.apply(*v + b));
    }
    out
}
