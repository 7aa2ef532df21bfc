use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative at pre-activation `v`; ReLU'(0) is 0.
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            c => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

/// Fully connected layer `act(W x + b)` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(shape_err("DenseLayer weight rank", &[2], &[weight.shape().len()]));
        }
        let out = weight.shape()[0];
        if bias.shape() != [out] {
            return Err(shape_err("DenseLayer bias", &[out], bias.shape()));
        }
        weight.ensure_finite("DenseLayer weight")?;
        bias.ensure_finite("DenseLayer bias")?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// He-style initialisation for ReLU layers, Xavier-style otherwise.
    pub fn random(input: usize, output: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let std = match activation {
            Activation::Relu => (2.0 / input as f64).sqrt(),
            Activation::Identity => (1.0 / input as f64).sqrt(),
        };
        let data = (0..input * output).map(|_| rng.normal() * std).collect();
        Self {
            weight: Tensor::matrix(output, input, data).expect("sized"),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(out, in)` shape of the weight matrix.
    pub fn dims(&self) -> (usize, usize) {
        (self.output_size(), self.input_size())
    }

    fn pre_activation(&self, input: &Tensor) -> Tensor {
        let batch = input.rows();
        let (out, inp) = self.dims();
        let mut z = Tensor::zeros(&[batch, out]);
        for row in z.data_mut().chunks_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        // z += X (batch x in) * W^T (in x out)
        gemm(batch, inp, out, input.data(), (inp, 1), self.weight.data(), (1, inp), 1.0, z.data_mut());
        z
    }
}

/// Gradients (or any parameter-shaped quantities) for each layer of a
/// [`Sequential`], in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerTensors>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTensors {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GradientSet {
    pub fn zeros_like(model: &Sequential) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerTensors {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.weight.shape()[0], l.weight.shape()[1]))
            .collect()
    }

    pub fn check_congruent(&self, other: &GradientSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(shape_err("GradientSet layers", &[self.layers.len()], &[other.layers.len()]));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            a.weight.check_same(&b.weight, "GradientSet weight")?;
            a.bias.check_same(&b.bias, "GradientSet bias")?;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &GradientSet, s: f64) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += s * y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &GradientSet) -> Result<GradientSet> {
        self.check_congruent(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                Ok(LayerTensors {
                    weight: a.weight.sub(&b.weight)?,
                    bias: a.bias.sub(&b.bias)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GradientSet { layers })
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.scale(s);
            l.bias.scale(s);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A stack of dense layers evaluated in order.
#[derive(Debug)]
pub struct Sequential {
    layers: Vec<DenseLayer>,
    // Bumped on every parameter mutation so caches from an earlier forward
    // pass are rejected by `backward`.
    version: u64,
}

impl Clone for Sequential {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            version: self.version,
        }
    }
}

impl PartialEq for Sequential {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer inputs and pre-activations recorded by [`Sequential::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
    pub pre_activations: Vec<Tensor>,
    version: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map(Tensor::rows).unwrap_or(0)
    }
}

impl Sequential {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(shape_err(
                    "Sequential layer chaining",
                    &[pair[0].output_size()],
                    &[pair[1].input_size()],
                ));
            }
        }
        Ok(Self {
            layers,
            version: fresh_version(),
        })
    }

    /// Random stack over `widths` (input width first); `hidden` activation on
    /// every layer except the last, which uses `last`.
    pub fn random(widths: &[usize], hidden: Activation, last: Activation, rng: &mut SeededRng) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                DenseLayer::random(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::new(layers).expect("widths chain")
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map(DenseLayer::input_size).unwrap_or(0)
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(DenseLayer::output_size).unwrap_or(0)
    }

    /// `(out, in)` per layer.
    pub fn shape_list(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(DenseLayer::dims).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, batch: &Tensor) -> Result<(ForwardCache, Tensor)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = self.check_batch(batch)?;
        for layer in &self.layers {
            let z = layer.pre_activation(&current);
            let mut a = z.clone();
            a.data_mut().iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok((
            ForwardCache {
                inputs,
                pre_activations: pre,
                version: self.version,
            },
            current,
        ))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut current = self.check_batch(batch)?;
        for layer in &self.layers {
            let mut z = layer.pre_activation(&current);
            z.data_mut().iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            current = z;
        }
        Ok(current)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let width = self.input_size();
        let ok = match batch.shape().len() {
            1 => batch.len() == width,
            2 => batch.cols() == width,
            _ => false,
        };
        if !ok || self.layers.is_empty() {
            return Err(shape_err("forward input", &[width], batch.shape()));
        }
        Tensor::matrix(batch.len() / width.max(1), width, batch.data().to_vec())
    }

    /// Parameter gradients for `loss_grad` (d loss / d output). Batch rows
    /// are summed; no normalisation is applied.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<GradientSet> {
        self.backward_full(cache, loss_grad).map(|(g, _)| g)
    }

    /// Like [`Sequential::backward`] but also returns d loss / d input.
    pub fn backward_full(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<(GradientSet, Tensor)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleActivations(format!(
                "cache has {} layers (version {}), model has {} (version {})",
                cache.inputs.len(),
                cache.version,
                self.layers.len(),
                self.version
            )));
        }
        let batch = cache.batch_size();
        let expected = [batch, self.output_size()];
        if loss_grad.shape() != expected {
            return Err(shape_err("backward loss gradient", &expected, loss_grad.shape()));
        }
        loss_grad.ensure_finite("backward loss gradient")?;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (out, inp) = layer.dims();
            let pre = &cache.pre_activations[i];
            let input = &cache.inputs[i];
            if pre.shape() != [batch, out] || input.shape() != [batch, inp] {
                return Err(Error::StaleActivations(format!("layer {i} cache shape mismatch")));
            }
            let mut delta = upstream;
            for (d, z) in delta.data_mut().iter_mut().zip(pre.data()) {
                *d *= layer.activation.derivative(*z);
            }
            let mut gw = Tensor::zeros(&[out, inp]);
            // dW = delta^T (out x batch) * X (batch x in)
            gemm(out, batch, inp, delta.data(), (1, out), input.data(), (inp, 1), 0.0, gw.data_mut());
            let mut gb = vec![0.0; out];
            for row in delta.data().chunks(out) {
                for (b, d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let mut down = Tensor::zeros(&[batch, inp]);
            // dX = delta (batch x out) * W (out x in)
            gemm(batch, out, inp, delta.data(), (out, 1), layer.weight.data(), (inp, 1), 0.0, down.data_mut());
            grads.push(LayerTensors {
                weight: gw,
                bias: Tensor::vector(gb),
            });
            upstream = down;
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, upstream))
    }

    /// Snapshot of all parameters in the [`GradientSet`] layout.
    pub fn params(&self) -> GradientSet {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerTensors {
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn set_params(&mut self, params: &GradientSet) -> Result<()> {
        params.check_congruent(&self.params())?;
        if !params.is_finite() {
            return Err(Error::NonFinite("set_params"));
        }
        for (l, p) in self.layers.iter_mut().zip(&params.layers) {
            l.weight = p.weight.clone();
            l.bias = p.bias.clone();
        }
        self.version = fresh_version();
        Ok(())
    }

    /// Apply `f(param, grad)` elementwise over every parameter.
    pub(crate) fn update_with(&mut self, grads: &GradientSet, mut f: impl FnMut(usize, &mut f64, f64)) -> Result<()> {
        grads.check_congruent(&self.params_shape_only())?;
        let mut idx = 0;
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, gv) in l.weight.data_mut().iter_mut().zip(g.weight.data()) {
                f(idx, p, *gv);
                idx += 1;
            }
            for (p, gv) in l.bias.data_mut().iter_mut().zip(g.bias.data()) {
                f(idx, p, *gv);
                idx += 1;
            }
        }
        self.version = fresh_version();
        Ok(())
    }

    fn params_shape_only(&self) -> GradientSet {
        GradientSet::zeros_like(self)
    }

    /// Keep only the first `n` layers.
    pub fn truncated(&self, n: usize) -> Result<Sequential> {
        Sequential::new(self.layers[..n.min(self.layers.len())].to_vec())
    }

    /// Concatenate two stacks.
    pub fn chain(&self, other: &Sequential) -> Result<Sequential> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Sequential::new(layers)
    }
}
