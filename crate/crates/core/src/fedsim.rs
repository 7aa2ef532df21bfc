//! One federated round: local client computation (FedSGD gradients or FedAVG
//! local SGD), optional DP-SGD clipping and noise, pairwise-mask secure
//! aggregation, and server-side aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GlobalModel;
use crate::nn::{sgd_step, softmax_cross_entropy, GradientSet, Sequential, Tensor};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlMode {
    FedSgd,
    FedAvg,
}

impl FlMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedsgd" => Ok(FlMode::FedSgd),
            "fedavg" => Ok(FlMode::FedAvg),
            other => Err(Error::Config(format!("unknown FL mode {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlMode::FedSgd => "fedsgd",
            FlMode::FedAvg => "fedavg",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub local_iters: usize,
    pub local_lr: f64,
    /// Aggregation weight; the server normalises weights to sum to one.
    pub weight: f64,
}

impl ClientState {
    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    GradientSum,
    ParamDelta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub kind: UpdateKind,
    pub payload: GradientSet,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedUpdate {
    pub client: usize,
    pub payload: GradientSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub enabled: bool,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl DpConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            clip_norm: 1.0,
            noise_multiplier: 0.0,
        }
    }

    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Self {
        Self {
            enabled: true,
            clip_norm,
            noise_multiplier,
        }
    }
}

/// Per-sample gradients of the cross-entropy loss (one backward pass each).
pub fn per_sample_gradients(net: &Sequential, images: &Tensor, labels: &[usize]) -> Result<Vec<GradientSet>> {
    (0..labels.len())
        .map(|i| {
            let x = images.select_rows(&[i]);
            let (cache, logits) = net.forward(&x)?;
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels[i..=i])?;
            net.backward(&cache, &dlogits)
        })
        .collect()
}

/// Mean-loss gradient `(1/|D|) sum_j grad_j`, optionally privatised.
fn batch_gradient(net: &Sequential, images: &Tensor, labels: &[usize], dp: &DpConfig, rng: &mut SeededRng) -> Result<GradientSet> {
    if dp.enabled {
        let per_sample = per_sample_gradients(net, images, labels)?;
        let mut g = dp_clip_and_noise(&per_sample, dp, rng)?;
        g.scale(1.0 / labels.len() as f64);
        Ok(g)
    } else {
        let (cache, logits) = net.forward(images)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
        net.backward(&cache, &dlogits)
    }
}

/// Local computation of one client on the broadcast model.
///
/// FedSGD returns the normalised batch gradient; FedAVG runs `local_iters`
/// SGD steps on the same local batch and returns the final parameters.
pub fn client_round(client: &ClientState, model: &GlobalModel, mode: FlMode, dp: &DpConfig, rng: &mut SeededRng) -> Result<ClientUpdate> {
    if client.labels.is_empty() {
        return Err(Error::Empty("client local data"));
    }
    if client.images.rows() != client.labels.len() {
        return Err(Error::InvalidArgument(format!(
            "client {} has {} images but {} labels",
            client.id,
            client.images.rows(),
            client.labels.len()
        )));
    }
    model.check_input(client.images.cols())?;
    let m = client.sample_count();
    match mode {
        FlMode::FedSgd => Ok(ClientUpdate {
            kind: UpdateKind::GradientSum,
            payload: batch_gradient(model.net(), &client.images, &client.labels, dp, rng)?,
            sample_count: m,
        }),
        FlMode::FedAvg => {
            if client.local_iters == 0 {
                return Err(Error::InvalidArgument("local_iters must be at least 1".into()));
            }
            let mut net = model.net().clone();
            for _ in 0..client.local_iters {
                let g = batch_gradient(&net, &client.images, &client.labels, dp, rng)?;
                sgd_step(&mut net, &g, client.local_lr)?;
            }
            Ok(ClientUpdate {
                kind: UpdateKind::ParamDelta,
                payload: net.params(),
                sample_count: m,
            })
        }
    }
}

/// DP-SGD aggregation: clip each per-sample gradient to global L2 norm
/// `clip_norm`, sum, then add `N(0, (sigma C)^2)` to every coordinate.
pub fn dp_clip_and_noise(per_sample_grads: &[GradientSet], dp: &DpConfig, rng: &mut SeededRng) -> Result<GradientSet> {
    if !(dp.clip_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("clip norm must be positive, got {}", dp.clip_norm)));
    }
    if !(dp.noise_multiplier >= 0.0) {
        return Err(Error::InvalidArgument("noise multiplier must be non-negative".into()));
    }
    let first = per_sample_grads.first().ok_or(Error::Empty("per-sample gradients"))?;
    let mut sum = first.clone();
    sum.scale(0.0);
    for g in per_sample_grads {
        let norm = g.l2_norm();
        let factor = if norm > dp.clip_norm { dp.clip_norm / norm } else { 1.0 };
        sum.add_scaled(g, factor)?;
    }
    let std = dp.noise_multiplier * dp.clip_norm;
    if std > 0.0 {
        for v in sum.values_mut() {
            *v += std * rng.normal();
        }
    }
    Ok(sum)
}

/// Pairwise additive masks: client `i` adds `s_ij` for `j > i` and
/// subtracts `s_ji` for `j < i`, so the masks cancel in the sum.
///
/// Mask entries are uniform in `[-B, B]` with `B = bound_factor * max|delta|`
/// (or `bound_factor` when every update is zero). Each pair draws from its own
/// stream derived from `rng`.
pub fn secure_aggregate(updates: &[ClientUpdate], bound_factor: f64, rng: &mut SeededRng) -> Result<(Vec<MaskedUpdate>, GradientSet)> {
    let n = updates.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("secure aggregation needs at least 2 clients, got {n}")));
    }
    for u in &updates[1..] {
        u.payload.check_congruent(&updates[0].payload)?;
    }
    let max_abs = updates.iter().map(|u| u.payload.max_abs()).fold(0.0, f64::max);
    let bound = bound_factor * if max_abs > 0.0 { max_abs } else { 1.0 };
    let pairs = pairwise_masks(&updates[0].payload, n, bound, rng.next_u64());
    let masks = net_masks(&updates[0].payload, n, &pairs)?;

    let masked: Vec<MaskedUpdate> = updates
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (u, mask))| {
            let mut payload = u.payload.clone();
            payload.add_assign(&mask)?;
            Ok(MaskedUpdate { client: i, payload })
        })
        .collect::<Result<_>>()?;
    let aggregate = sum_in_order(masked.iter().map(|m| &m.payload))?;
    Ok((masked, aggregate))
}

/// One pairwise mask `s_ij` (`i < j`): added by client `i`, subtracted by `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMask {
    pub i: usize,
    pub j: usize,
    pub mask: GradientSet,
}

/// Draw every `s_ij` from its own stream `(base_seed, i * n + j)`.
pub fn pairwise_masks(template: &GradientSet, n: usize, bound: f64, base_seed: u64) -> Vec<PairMask> {
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut pair_rng = SeededRng::new(base_seed, (i * n + j) as u64);
            let mut mask = template.clone();
            for v in mask.values_mut() {
                *v = pair_rng.uniform_range(-bound, bound);
            }
            pairs.push(PairMask { i, j, mask });
        }
    }
    pairs
}

/// Net mask per client: `sum_{j>i} s_ij - sum_{j<i} s_ji`.
pub fn net_masks(template: &GradientSet, n: usize, pairs: &[PairMask]) -> Result<Vec<GradientSet>> {
    let mut zero = template.clone();
    zero.scale(0.0);
    let mut masks = vec![zero; n];
    for p in pairs {
        masks[p.i].add_scaled(&p.mask, 1.0)?;
        masks[p.j].add_scaled(&p.mask, -1.0)?;
    }
    Ok(masks)
}

fn sum_in_order<'a>(mut sets: impl Iterator<Item = &'a GradientSet>) -> Result<GradientSet> {
    let mut acc = sets.next().ok_or(Error::Empty("aggregation input"))?.clone();
    for s in sets {
        acc.add_assign(s)?;
    }
    Ok(acc)
}

/// `sum_i w_i p_i`, folded in ascending client order.
///
/// FedSGD payloads are already normalised by `1/|D_i|`, so the weights are the
/// `alpha_i`; for FedAVG the weights must sum to one.
pub fn server_aggregate(payloads: &[&GradientSet], weights: &[f64]) -> Result<GradientSet> {
    if payloads.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} payloads but {} weights",
            payloads.len(),
            weights.len()
        )));
    }
    let first = payloads.first().ok_or(Error::Empty("server_aggregate payloads"))?;
    let mut acc = (*first).clone();
    acc.scale(weights[0]);
    for (p, &w) in payloads.iter().zip(weights).skip(1) {
        acc.add_scaled(p, w)?;
    }
    Ok(acc)
}

/// Normalise client weights to sum to one.
pub fn normalized_weights(clients: &[ClientState]) -> Result<Vec<f64>> {
    let total: f64 = clients.iter().map(|c| c.weight).sum();
    if !(total > 0.0) || clients.iter().any(|c| !(c.weight > 0.0)) {
        return Err(Error::InvalidArgument("client weights must be positive".into()));
    }
    Ok(clients.iter().map(|c| c.weight / total).collect())
}

/// Server-side gradient estimate for FedAVG: `theta_broadcast - sum alpha_i theta_i`.
///
/// No division by the learning rate or iteration count: the leakage
/// inversion is a ratio and cancels any common scale. With `keep_layers`
/// set, every other layer is zeroed.
pub fn approx_aggregated_gradient(theta_broadcast: &GradientSet, aggregated_params: &GradientSet, keep_layers: Option<&[usize]>) -> Result<GradientSet> {
    let mut g = theta_broadcast.sub(aggregated_params)?;
    if let Some(keep) = keep_layers {
        for (i, l) in g.layers.iter_mut().enumerate() {
            if !keep.contains(&i) {
                l.weight.scale(0.0);
                l.bias.scale(0.0);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelArch;

    fn tiny() -> (GlobalModel, ClientState) {
        let arch = ModelArch {
            input_dim: 6,
            encoder_hidden: vec![5],
            latent_dim: 3,
            leak_width: 4,
            head_width: 3,
            classes: 2,
        };
        let mut rng = SeededRng::new(11, 0);
        let model = GlobalModel::benign(&arch, &mut rng).unwrap();
        let images = Tensor::matrix(3, 6, (0..18).map(|_| rng.uniform()).collect()).unwrap();
        let client = ClientState {
            id: 0,
            images,
            labels: vec![0, 1, 1],
            local_iters: 1,
            local_lr: 0.1,
            weight: 1.0,
        };
        (model, client)
    }

    #[test]
    fn fedsgd_payload_ignores_lr() {
        let (model, mut client) = tiny();
        let mut rng = SeededRng::new(0, 0);
        let a = client_round(&client, &model, FlMode::FedSgd, &DpConfig::disabled(), &mut rng).unwrap();
        client.local_lr = 7.5;
        let b = client_round(&client, &model, FlMode::FedSgd, &DpConfig::disabled(), &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kind, UpdateKind::GradientSum);
    }

    #[test]
    fn empty_client_rejected() {
        let (model, mut client) = tiny();
        client.labels.clear();
        client.images = Tensor::zeros(&[0, 6]);
        let mut rng = SeededRng::new(0, 0);
        assert!(client_round(&client, &model, FlMode::FedSgd, &DpConfig::disabled(), &mut rng).is_err());
    }

    #[test]
    fn dp_rejects_bad_clip() {
        let (model, client) = tiny();
        let g = per_sample_gradients(model.net(), &client.images, &client.labels).unwrap();
        let mut rng = SeededRng::new(0, 0);
        assert!(dp_clip_and_noise(&g, &DpConfig::new(0.0, 0.0), &mut rng).is_err());
    }

    #[test]
    fn two_zero_clients_masks_cancel() {
        let (model, _) = tiny();
        let zero = GradientSet::zeros_like(model.net());
        let upd = ClientUpdate {
            kind: UpdateKind::GradientSum,
            payload: zero,
            sample_count: 1,
        };
        let mut rng = SeededRng::new(4, 0);
        let (masked, agg) = secure_aggregate(&[upd.clone(), upd.clone()], 1e3, &mut rng).unwrap();
        let s: Vec<f64> = masked[0].payload.values().collect();
        let t: Vec<f64> = masked[1].payload.values().collect();
        assert!(s.iter().any(|v| *v != 0.0));
        for (a, b) in s.iter().zip(&t) {
            assert_eq!(*a, -*b);
        }
        assert!(agg.values().all(|v| v == 0.0));
        assert!(secure_aggregate(&[upd], 1e3, &mut rng).is_err());
    }

    #[test]
    fn single_client_aggregate_is_identity() {
        let (model, _) = tiny();
        let p = model.params();
        assert_eq!(server_aggregate(&[&p], &[1.0]).unwrap(), p);
        assert!(server_aggregate(&[&p], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn approx_gradient_zero_when_unchanged() {
        let (model, _) = tiny();
        let p = model.params();
        let g = approx_aggregated_gradient(&p, &p, None).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }
}
