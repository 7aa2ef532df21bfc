//! Closed-form linear leakage.
//!
//! A two-layer module `z = W2 relu(W1 x + b1) + b2` is crafted so that every
//! row of `W1` averages the latent vector (the "brightness" feature) and the
//! biases cut the brightness distribution into equal-probability bins. The
//! difference of neighbouring rows of the aggregated `W1`/`b1` gradients then
//! isolates the samples of one bin; a bin holding a single sample yields that
//! sample exactly as a ratio.

use crate::error::{shape_err, Error, Result};
use crate::model::GlobalModel;
use crate::nn::{Activation, DenseLayer, Sequential, Tensor};

/// Mean of the latent entries, i.e. `v_h . x` with `v_h = (1/d) 1`.
pub fn brightness(lsr: &[f64]) -> Result<f64> {
    if lsr.is_empty() {
        return Err(Error::Empty("brightness of an empty vector"));
    }
    Ok(lsr.iter().sum::<f64>() / lsr.len() as f64)
}

/// Brightness of every row.
pub fn brightness_rows(lsrs: &Tensor) -> Result<Vec<f64>> {
    lsrs.iter_rows().map(brightness).collect()
}

/// Sorted brightness samples with interpolated inverse queries.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted_values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an empirical CDF needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EmpiricalCdf samples"));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted_values: values })
    }

    /// Fit to the brightness of each LSR row.
    pub fn fit(lsr_batch: &Tensor) -> Result<Self> {
        Self::from_values(brightness_rows(lsr_batch)?)
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Linear interpolation between order statistics at position `q (n - 1)`.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
        }
        let v = &self.sorted_values;
        let p = q * (v.len() - 1) as f64;
        let lo = p.floor() as usize;
        let frac = p - lo as f64;
        if lo + 1 >= v.len() {
            return Ok(v[v.len() - 1]);
        }
        Ok(v[lo] + frac * (v[lo + 1] - v[lo]))
    }

    pub fn is_degenerate(&self) -> bool {
        self.sorted_values.first() == self.sorted_values.last()
    }
}

/// Crafted `(w1, b1, w2, b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLeakModule {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl LinearLeakModule {
    pub fn k(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn o(&self) -> usize {
        self.w2.shape()[0]
    }

    /// Bin thresholds `h = -b1`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.b1.data().iter().map(|b| -b).collect()
    }

    /// The two dense layers; the second uses `second_activation`.
    pub fn layers(&self, second_activation: Activation) -> Result<(DenseLayer, DenseLayer)> {
        Ok((
            DenseLayer::new(self.w1.clone(), self.b1.clone(), Activation::Relu)?,
            DenseLayer::new(self.w2.clone(), self.b2.clone(), second_activation)?,
        ))
    }
}

/// Build the leakage module from the brightness CDF.
///
/// Thresholds sit at quantiles `i / (k + 1)`, `i = 1..=k`, which keeps the
/// top bin reachable; every entry of `w2` is `w2_row_value`.
pub fn craft_leak_module(cdf: &EmpiricalCdf, k: usize, d: usize, o: usize, w2_row_value: f64) -> Result<LinearLeakModule> {
    if k < 2 || d < 1 || o < 1 {
        return Err(Error::InvalidArgument(format!("need k >= 2, d >= 1, o >= 1 (got {k}, {d}, {o})")));
    }
    if !w2_row_value.is_finite() || w2_row_value == 0.0 {
        return Err(Error::InvalidArgument("w2 row value must be finite and nonzero".into()));
    }
    if cdf.is_degenerate() {
        return Err(Error::Degenerate("all brightness samples are equal; every bin would coincide".into()));
    }
    let thresholds = (1..=k)
        .map(|i| cdf.inverse(i as f64 / (k + 1) as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearLeakModule {
        w1: Tensor::filled(&[k, d], 1.0 / d as f64),
        b1: Tensor::vector(thresholds.iter().map(|h| -h).collect()),
        w2: Tensor::filled(&[o, k], w2_row_value),
        b2: Tensor::zeros(&[o]),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BinStatus {
    Empty,
    Recovered(Vec<f64>),
}

/// Per-bin output of the gradient-difference inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredBins {
    pub bins: Vec<BinStatus>,
}

impl RecoveredBins {
    pub fn k(&self) -> usize {
        self.bins.len()
    }

    /// `(bin index, lsr)` for every non-empty bin in ascending bin order.
    pub fn recovered(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.bins.iter().enumerate().filter_map(|(i, b)| match b {
            BinStatus::Recovered(v) => Some((i, v.as_slice())),
            BinStatus::Empty => None,
        })
    }

    pub fn recovered_count(&self) -> usize {
        self.recovered().count()
    }

    pub fn occupied_mask(&self) -> Vec<bool> {
        self.bins.iter().map(|b| matches!(b, BinStatus::Recovered(_))).collect()
    }
}

/// Relative tolerance below which a bias-gradient difference counts as zero.
pub const EMPTY_BIN_RELATIVE_TOL: f64 = 1e-9;

/// Invert aggregated leak-layer gradients bin by bin.
///
/// Bin `r` (0-based) uses rows `r` and `r + 1`; row `k` is taken as zero.
pub fn recover_lsrs(grad_w1: &Tensor, grad_b1: &Tensor) -> Result<RecoveredBins> {
    if grad_w1.shape().len() != 2 {
        return Err(shape_err("recover_lsrs grad_w1 rank", &[2], &[grad_w1.shape().len()]));
    }
    let (k, d) = (grad_w1.shape()[0], grad_w1.shape()[1]);
    if grad_b1.shape() != [k] {
        return Err(shape_err("recover_lsrs grad_b1", &[k], grad_b1.shape()));
    }
    grad_w1.ensure_finite("recover_lsrs grad_w1")?;
    grad_b1.ensure_finite("recover_lsrs grad_b1")?;

    let gb = grad_b1.data();
    let eps = EMPTY_BIN_RELATIVE_TOL * grad_b1.max_abs().max(1.0);
    let zero_row = vec![0.0; d];
    let bins = (0..k)
        .map(|r| {
            let (next_w, next_b) = if r + 1 < k {
                (grad_w1.row(r + 1), gb[r + 1])
            } else {
                (zero_row.as_slice(), 0.0)
            };
            let db = next_b - gb[r];
            if db.abs() <= eps {
                return BinStatus::Empty;
            }
            let lsr = next_w.iter().zip(grad_w1.row(r)).map(|(a, b)| (a - b) / db).collect();
            BinStatus::Recovered(lsr)
        })
        .collect();
    Ok(RecoveredBins { bins })
}

/// Ground-truth bin occupancy: bin `r` holds brightness in `(h_r, h_{r+1}]`,
/// the last bin is open above, values `<= h_1` are below range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occupancy {
    pub below_range: usize,
    pub bins: Vec<usize>,
}

impl Occupancy {
    pub fn singly_occupied(&self) -> Vec<bool> {
        self.bins.iter().map(|&c| c == 1).collect()
    }

    pub fn occupied(&self) -> Vec<bool> {
        self.bins.iter().map(|&c| c > 0).collect()
    }
}

/// Bin index of one brightness value, `None` when below range.
pub fn bin_of(brightness: f64, thresholds: &[f64]) -> Option<usize> {
    let c = thresholds.partition_point(|&h| h < brightness);
    c.checked_sub(1)
}

pub fn bin_occupancy_oracle(brightness: &[f64], thresholds: &[f64]) -> Result<Occupancy> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("bin thresholds must be sorted ascending".into()));
    }
    let mut occ = Occupancy {
        below_range: 0,
        bins: vec![0; thresholds.len()],
    };
    for &b in brightness {
        match bin_of(b, thresholds) {
            Some(r) => occ.bins[r] += 1,
            None => occ.below_range += 1,
        }
    }
    Ok(occ)
}

/// Surrogate encoder + crafted module (+ optional tail) as a global model.
///
/// With a tail the second leak layer is a ReLU hidden layer, matching the
/// benign MLP; without one it is the identity output layer.
pub fn assemble_adversarial_model(
    encoder: &Sequential,
    leak: &LinearLeakModule,
    head_tail: Option<&Sequential>,
) -> Result<GlobalModel> {
    if encoder.output_size() != leak.d() {
        return Err(shape_err("assemble encoder/leak width", &[leak.d()], &[encoder.output_size()]));
    }
    let second = if head_tail.is_some() {
        Activation::Relu
    } else {
        Activation::Identity
    };
    let (l1, l2) = leak.layers(second)?;
    let mut layers = encoder.layers().to_vec();
    layers.push(l1);
    layers.push(l2);
    if let Some(tail) = head_tail {
        layers.extend(tail.layers().iter().cloned());
    }
    GlobalModel::new(Sequential::new(layers)?, encoder.layers().len())
}
