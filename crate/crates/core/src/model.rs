//! The global model broadcast to clients: an MLP encoder followed by an MLP
//! head whose first two layers form the leakage module.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, GradientSet, Sequential, Tensor};
use crate::rng::SeededRng;

/// Layer widths of the benign architecture.
///
/// Layout: `input -> encoder_hidden.. -> latent` (encoder, ReLU hidden,
/// identity output) then `latent -> leak_width -> head_width -> classes`
/// (ReLU, ReLU, identity).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub leak_width: usize,
    pub head_width: usize,
    pub classes: usize,
}

impl ModelArch {
    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.latent_dim);
        w
    }

    /// `(out, in)` of every layer in the benign model.
    pub fn shape_list(&self) -> Vec<(usize, usize)> {
        let mut widths = self.encoder_widths();
        widths.extend([self.leak_width, self.head_width, self.classes]);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_dim, self.latent_dim, self.leak_width, self.head_width, self.classes];
        if widths.iter().chain(&self.encoder_hidden).any(|&w| w == 0) {
            return Err(Error::InvalidArgument("all layer widths must be positive".into()));
        }
        if self.leak_width < 2 {
            return Err(Error::InvalidArgument("leak width k must be at least 2".into()));
        }
        Ok(())
    }
}

/// Full parameter set broadcast to the clients.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModel {
    net: Sequential,
    encoder_depth: usize,
}

impl GlobalModel {
    pub fn new(net: Sequential, encoder_depth: usize) -> Result<Self> {
        if encoder_depth == 0 || encoder_depth + 2 > net.layers().len() {
            return Err(Error::InvalidArgument(format!(
                "encoder depth {encoder_depth} incompatible with {} layers",
                net.layers().len()
            )));
        }
        Ok(Self { net, encoder_depth })
    }

    /// Randomly initialised benign model.
    pub fn benign(arch: &ModelArch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let encoder = Sequential::random(&arch.encoder_widths(), Activation::Relu, Activation::Identity, rng);
        let head = Sequential::random(
            &[arch.latent_dim, arch.leak_width, arch.head_width, arch.classes],
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Self::new(encoder.chain(&head)?, arch.encoder_depth())
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_depth
    }

    pub fn encoder(&self) -> Sequential {
        self.net.truncated(self.encoder_depth).expect("prefix of a valid stack")
    }

    /// Indices of the `(w1, b1)` and `(w2, b2)` layers.
    pub fn leak_layer_indices(&self) -> (usize, usize) {
        (self.encoder_depth, self.encoder_depth + 1)
    }

    pub fn shape_list(&self) -> Vec<(usize, usize)> {
        self.net.shape_list()
    }

    pub fn params(&self) -> GradientSet {
        self.net.params()
    }

    /// Extract the leak-layer `(grad_w1, grad_b1)` pair from a model-shaped set.
    pub fn leak_gradients<'a>(&self, set: &'a GradientSet) -> Result<(&'a Tensor, &'a Tensor)> {
        let expected = self.shape_list();
        if set.shapes() != expected {
            return Err(Error::Shape {
                context: "leak_gradients",
                expected: expected.iter().map(|s| s.0 * s.1).collect(),
                actual: set.shapes().iter().map(|s| s.0 * s.1).collect(),
            });
        }
        let l = &set.layers[self.encoder_depth];
        Ok((&l.weight, &l.bias))
    }

    /// Bin thresholds read back from the first leak layer (`h = -b1`).
    pub fn leak_thresholds(&self) -> Vec<f64> {
        let (l1, _) = self.leak_layer_indices();
        self.net.layers()[l1].bias().data().iter().map(|b| -b).collect()
    }

    pub fn check_input(&self, width: usize) -> Result<()> {
        if width != self.net.input_size() {
            return Err(shape_err("model input", &[self.net.input_size()], &[width]));
        }
        Ok(())
    }
}
