//! Two-phase attack orchestration and evaluation.
//!
//! Offline preparation trains the surrogate autoencoder on the auxiliary set,
//! fits the brightness CDF of its latent codes, crafts the leakage module and
//! assembles the adversarial global model. Online, one federated round is
//! executed, latent codes are inverted from the aggregate and decoded.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{train_autoencoder, AutoencoderArch, AutoencoderPair, TrainConfig};
use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::fedsim::{
    approx_aggregated_gradient, client_round, normalized_weights, secure_aggregate, server_aggregate, ClientState, DpConfig,
    FlMode,
};
use crate::leakage::{
    assemble_adversarial_model, bin_occupancy_oracle, brightness_rows, craft_leak_module, recover_lsrs, BinStatus,
    EmpiricalCdf, LinearLeakModule, RecoveredBins,
};
use crate::model::{GlobalModel, ModelArch};
use crate::nn::{Activation, GradientSet, Sequential, Tensor};
use crate::rng::SeededRng;

/// Default success threshold in dB.
pub const DEFAULT_THRESHOLD_DB: f64 = 18.0;
/// PSNR reported when the MSE is below `1e-15`.
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// One-to-one, greedy by descending PSNR.
    Greedy,
    /// Each original takes its best reconstruction; reconstructions may repeat.
    Nearest,
}

impl Matching {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Matching::Greedy),
            "nearest" => Ok(Matching::Nearest),
            other => Err(Error::Config(format!("unknown matching {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Matching::Greedy => "greedy",
            Matching::Nearest => "nearest",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackPlan {
    pub arch: ModelArch,
    pub autoencoder: TrainConfig,
    pub w2_row_value: f64,
    pub mode: FlMode,
    pub dp: DpConfig,
    pub seed: u64,
    pub clients: usize,
    pub local_iters: usize,
    pub local_lr: f64,
    pub secure_aggregation: bool,
    pub mask_bound_factor: f64,
    pub threshold: f64,
    pub matching: Matching,
    pub record_timing: bool,
}

impl AttackPlan {
    pub fn k(&self) -> usize {
        self.arch.leak_width
    }

    pub fn d(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.autoencoder.validate()?;
        if self.clients == 0 || self.local_iters == 0 || !(self.local_lr > 0.0) {
            return Err(Error::InvalidArgument("clients, local_iters and local_lr must be positive".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument("PSNR threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Output of the offline phase.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: GlobalModel,
    pub autoencoder: AutoencoderPair,
    pub cdf: EmpiricalCdf,
    pub leak: LinearLeakModule,
    pub loss_history: Vec<f64>,
}

/// Offline phase: train surrogate, fit the brightness CDF, craft and assemble.
pub fn prepare(plan: &AttackPlan, aux: &Tensor) -> Result<Prepared> {
    plan.validate()?;
    let ae_arch = AutoencoderArch {
        input_dim: plan.arch.input_dim,
        hidden: plan.arch.encoder_hidden.clone(),
        latent_dim: plan.arch.latent_dim,
    };
    let (autoencoder, loss_history) = train_autoencoder(aux, &ae_arch, &plan.autoencoder)?;
    let lsrs = autoencoder.encode(aux)?;
    let cdf = EmpiricalCdf::fit(&lsrs)?;
    let leak = craft_leak_module(&cdf, plan.k(), plan.d(), plan.arch.head_width, plan.w2_row_value)?;
    let mut tail_rng = SeededRng::new(plan.seed, 0x7a11);
    let tail = Sequential::random(
        &[plan.arch.head_width, plan.arch.classes],
        Activation::Identity,
        Activation::Identity,
        &mut tail_rng,
    );
    let model = assemble_adversarial_model(&autoencoder.attack_encoder()?, &leak, Some(&tail))?;
    if model.shape_list() != plan.arch.shape_list() {
        return Err(Error::InvalidArgument("assembled model deviates from the benign architecture".into()));
    }
    Ok(Prepared {
        model,
        autoencoder,
        cdf,
        leak,
        loss_history,
    })
}

/// Split a global batch over `n` clients in contiguous, near-equal chunks.
pub fn make_clients(images: &Tensor, labels: &[usize], n: usize, local_iters: usize, local_lr: f64) -> Result<Vec<ClientState>> {
    let m = labels.len();
    if m == 0 {
        return Err(Error::Empty("global batch"));
    }
    let n = n.clamp(1, m);
    let mut clients = Vec::with_capacity(n);
    let mut start = 0;
    for id in 0..n {
        let len = m / n + usize::from(id < m % n);
        let idx: Vec<usize> = (start..start + len).collect();
        clients.push(ClientState {
            id,
            images: images.select_rows(&idx),
            labels: labels[start..start + len].to_vec(),
            local_iters,
            local_lr,
            weight: len as f64,
        });
        start += len;
    }
    Ok(clients)
}

/// Broadcast, local rounds, (secure) aggregation. Returns only the aggregate.
///
/// With secure aggregation each client pre-scales its payload by its
/// normalised weight before masking, so the unmasked sum is the weighted
/// aggregate.
pub fn execute_round(
    model: &GlobalModel,
    clients: &[ClientState],
    mode: FlMode,
    dp: &DpConfig,
    secure_aggregation: Option<f64>,
    rng: &SeededRng,
) -> Result<GradientSet> {
    let weights = normalized_weights(clients)?;
    let updates = clients
        .iter()
        .enumerate()
        .map(|(i, c)| client_round(c, model, mode, dp, &mut rng.fork(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    match secure_aggregation {
        Some(bound_factor) => {
            let scaled: Vec<_> = updates
                .into_iter()
                .zip(&weights)
                .map(|(mut u, &w)| {
                    u.payload.scale(w);
                    u
                })
                .collect();
            let (_, aggregate) = secure_aggregate(&scaled, bound_factor, &mut rng.fork(u64::MAX))?;
            Ok(aggregate)
        }
        None => {
            let payloads: Vec<&GradientSet> = updates.iter().map(|u| &u.payload).collect();
            server_aggregate(&payloads, &weights)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Decoded images, one row per non-empty bin in ascending bin order.
    pub images: Tensor,
    pub lsrs: Tensor,
    pub bins: RecoveredBins,
    /// Bin index of each image row.
    pub bin_indices: Vec<usize>,
    pub elapsed_seconds: f64,
    pub diagnostic: Option<String>,
}

/// Invert the leak-layer gradients and decode every non-empty bin.
pub fn reconstruct(aggregate: &GradientSet, model: &GlobalModel, decoder: &AutoencoderPair, mode: FlMode) -> Result<Reconstruction> {
    let (l1, l2) = model.leak_layer_indices();
    let grads = match mode {
        FlMode::FedSgd => aggregate.clone(),
        FlMode::FedAvg => approx_aggregated_gradient(&model.params(), aggregate, Some(&[l1, l2]))?,
    };
    let (gw1, gb1) = model.leak_gradients(&grads)?;
    let start = Instant::now();
    let bins = recover_lsrs(gw1, gb1)?;
    let (bin_indices, rows): (Vec<usize>, Vec<&[f64]>) = bins.recovered().unzip();
    let d = gw1.cols();
    let lsrs = if rows.is_empty() {
        Tensor::zeros(&[0, d])
    } else {
        Tensor::from_rows(&rows)?
    };
    let images = if rows.is_empty() {
        Tensor::zeros(&[0, decoder.input_dim()])
    } else {
        decoder.decode(&lsrs)?
    };
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let diagnostic = rows
        .is_empty()
        .then(|| "all bins empty: the aggregate carries no leak-layer signal".to_string());
    Ok(Reconstruction {
        images,
        lsrs,
        bins,
        bin_indices,
        elapsed_seconds,
        diagnostic,
    })
}

/// `20 log10(max_i / sqrt(MSE))`, capped at 300 dB for `MSE < 1e-15`.
pub fn psnr(original: &[f64], reconstructed: &[f64], max_i: f64) -> Result<f64> {
    if original.len() != reconstructed.len() || original.is_empty() {
        return Err(shape_err("psnr", &[original.len()], &[reconstructed.len()]));
    }
    if !(max_i > 0.0) {
        return Err(Error::InvalidArgument(format!("max_i must be positive, got {max_i}")));
    }
    let mse = original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / original.len() as f64;
    if mse < 1e-15 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(20.0 * (max_i / mse.sqrt()).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub original: usize,
    /// Bin index when produced by [`attack_batch`], otherwise the row index
    /// of the recovered image.
    pub bin: usize,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchOutcome {
    /// Sorted by original index.
    pub matches: Vec<MatchEntry>,
    pub rate: f64,
    pub mean_psnr_success: Option<f64>,
    /// Matched PSNR, or the best PSNR against any reconstruction when the
    /// original was left unmatched; `None` if nothing was recovered.
    pub per_original_psnr: Vec<Option<f64>>,
}

/// Pair originals with reconstructions and compute the success rate.
pub fn match_and_rate(originals: &Tensor, recovered: &Tensor, threshold: f64, matching: Matching) -> Result<MatchOutcome> {
    let m = originals.rows();
    if m == 0 || originals.is_empty() {
        return Err(Error::Empty("originals"));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let r = if recovered.is_empty() { 0 } else { recovered.rows() };
    if r > 0 && recovered.cols() != originals.cols() {
        return Err(shape_err("match_and_rate image width", &[originals.cols()], &[recovered.cols()]));
    }
    let mut table = vec![0.0; m * r];
    for i in 0..m {
        for j in 0..r {
            table[i * r + j] = psnr(originals.row(i), recovered.row(j), 1.0)?;
        }
    }
    let best_any: Vec<Option<f64>> = (0..m)
        .map(|i| table[i * r..(i + 1) * r].iter().copied().reduce(f64::max))
        .collect();

    let mut matches = Vec::new();
    match matching {
        Matching::Greedy => {
            let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..r).map(move |j| (i, j))).collect();
            pairs.sort_by(|a, b| {
                table[b.0 * r + b.1]
                    .total_cmp(&table[a.0 * r + a.1])
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            let (mut used_o, mut used_r) = (vec![false; m], vec![false; r]);
            for (i, j) in pairs {
                if !used_o[i] && !used_r[j] {
                    used_o[i] = true;
                    used_r[j] = true;
                    matches.push(MatchEntry {
                        original: i,
                        bin: j,
                        psnr: table[i * r + j],
                    });
                }
            }
            matches.sort_by_key(|e| e.original);
        }
        Matching::Nearest => {
            for i in 0..m {
                let row = &table[i * r..(i + 1) * r];
                if let Some((j, &p)) = row.iter().enumerate().reduce(|a, b| if b.1 > a.1 { b } else { a }) {
                    matches.push(MatchEntry {
                        original: i,
                        bin: j,
                        psnr: p,
                    });
                }
            }
        }
    }

    let mut per_original_psnr = best_any;
    for e in &matches {
        per_original_psnr[e.original] = Some(e.psnr);
    }
    let successes: Vec<f64> = matches.iter().filter(|e| e.psnr >= threshold).map(|e| e.psnr).collect();
    let rate = successes.len() as f64 / m as f64;
    let mean_psnr_success = (!successes.is_empty()).then(|| successes.iter().sum::<f64>() / successes.len() as f64);
    Ok(MatchOutcome {
        matches,
        rate,
        mean_psnr_success,
        per_original_psnr,
    })
}

/// Serialised result of one attack round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub m: usize,
    pub k: usize,
    pub threshold: f64,
    pub rate: f64,
    pub mean_psnr_success: Option<f64>,
    pub wall_time_seconds: f64,
    pub recovered_bins: usize,
    pub singly_occupied_bins: usize,
    pub bin_status: Vec<String>,
    pub matches: Vec<MatchEntry>,
    pub per_original_psnr: Vec<Option<f64>>,
}

pub struct AttackOutcome {
    pub report: ReconstructionReport,
    pub reconstruction: Reconstruction,
}

/// One complete online round on a given global batch.
pub fn attack_batch(
    plan: &AttackPlan,
    model: &GlobalModel,
    autoencoder: &AutoencoderPair,
    images: &Tensor,
    labels: &[usize],
    round_seed: u64,
    config_echo: &BTreeMap<String, String>,
) -> Result<AttackOutcome> {
    let clients = make_clients(images, labels, plan.clients, plan.local_iters, plan.local_lr)?;
    let sa = (plan.secure_aggregation && clients.len() >= 2).then_some(plan.mask_bound_factor);
    let rng = SeededRng::new(round_seed, 0);
    let aggregate = execute_round(model, &clients, plan.mode, &plan.dp, sa, &rng)?;
    let rec = reconstruct(&aggregate, model, autoencoder, plan.mode)?;
    let mut outcome = match_and_rate(images, &rec.images, plan.threshold, plan.matching)?;
    for e in &mut outcome.matches {
        e.bin = rec.bin_indices[e.bin];
    }

    let true_lsrs = model.encoder().predict(images)?;
    let occupancy = bin_occupancy_oracle(&brightness_rows(&true_lsrs)?, &model.leak_thresholds())?;
    let report = ReconstructionReport {
        config: config_echo.clone(),
        seed: round_seed,
        m: labels.len(),
        k: rec.bins.k(),
        threshold: plan.threshold,
        rate: outcome.rate,
        mean_psnr_success: outcome.mean_psnr_success,
        wall_time_seconds: if plan.record_timing { rec.elapsed_seconds } else { 0.0 },
        recovered_bins: rec.bins.recovered_count(),
        singly_occupied_bins: occupancy.bins.iter().filter(|&&c| c == 1).count(),
        bin_status: rec
            .bins
            .bins
            .iter()
            .map(|b| match b {
                BinStatus::Empty => "empty".to_string(),
                BinStatus::Recovered(_) => "recovered".to_string(),
            })
            .collect(),
        matches: outcome.matches,
        per_original_psnr: outcome.per_original_psnr,
    };
    Ok(AttackOutcome {
        report,
        reconstruction: rec,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub batch_size: usize,
    pub trial: usize,
    pub seed: u64,
    pub rate: f64,
    pub mean_psnr_success: Option<f64>,
    pub recovered_bins: usize,
    pub singly_occupied_bins: usize,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub batch_size: usize,
    pub trials: usize,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub mean_psnr_success: Option<f64>,
    pub mean_wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub config: BTreeMap<String, String>,
    pub k: usize,
    pub threshold: f64,
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<ExperimentSummary>,
}

impl ExperimentTable {
    pub fn mean_rate(&self, batch_size: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.batch_size == batch_size).map(|s| s.mean_rate)
    }
}

/// Seed of trial `trial` at batch size `m`.
pub fn trial_seed(base: u64, m: usize, trial: usize) -> u64 {
    SeededRng::new(base, 0x7e57).fork(((m as u64) << 32) | trial as u64).next_u64()
}

/// `m` distinct samples of `pool`, chosen by `seed`.
pub fn draw_batch(pool: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || m > pool.len() {
        return Err(Error::InvalidArgument(format!("batch size {m} not drawable from a pool of {}", pool.len())));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    SeededRng::new(seed, 1).shuffle(&mut idx);
    idx.truncate(m);
    Ok(pool.subset(&idx))
}

/// Batch-size sweep: every trial draws a fresh batch from `pool` and runs one
/// attack round.
pub fn run_experiment(
    plan: &AttackPlan,
    model: &GlobalModel,
    autoencoder: &AutoencoderPair,
    pool: &Dataset,
    batch_sizes: &[usize],
    trials: usize,
    config_echo: &BTreeMap<String, String>,
) -> Result<ExperimentTable> {
    if trials == 0 || batch_sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one batch size and one trial".into()));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &m in batch_sizes {
        let mut batch_rows = Vec::with_capacity(trials);
        for trial in 0..trials {
            let seed = trial_seed(plan.seed, m, trial);
            let batch = draw_batch(pool, m, seed)?;
            let out = attack_batch(plan, model, autoencoder, &batch.images, &batch.labels, seed, config_echo)?;
            batch_rows.push(ExperimentRow {
                batch_size: m,
                trial,
                seed,
                rate: out.report.rate,
                mean_psnr_success: out.report.mean_psnr_success,
                recovered_bins: out.report.recovered_bins,
                singly_occupied_bins: out.report.singly_occupied_bins,
                wall_time_seconds: out.report.wall_time_seconds,
            });
        }
        let rates: Vec<f64> = batch_rows.iter().map(|r| r.rate).collect();
        let (mean_rate, std_rate) = mean_std(&rates);
        let psnrs: Vec<f64> = batch_rows.iter().filter_map(|r| r.mean_psnr_success).collect();
        summary.push(ExperimentSummary {
            batch_size: m,
            trials,
            mean_rate,
            std_rate,
            mean_psnr_success: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
            mean_wall_time_seconds: batch_rows.iter().map(|r| r.wall_time_seconds).sum::<f64>() / trials as f64,
        });
        rows.extend(batch_rows);
    }
    Ok(ExperimentTable {
        config: config_echo.clone(),
        k: plan.k(),
        threshold: plan.threshold,
        rows,
        summary,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
