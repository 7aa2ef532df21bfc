use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use leakfl::checkpoint::{load_autoencoder, load_global_model, load_matrix, save_autoencoder, save_global_model, save_matrix};
use leakfl::config::DEFAULTS;
use leakfl::data::Dataset;
use leakfl::imageio::{montage, write_image, Image};
use leakfl::report::{read_json, to_json, write_json};
use leakfl::{
    attack_batch, draw_batch, match_and_rate, prepare as prepare_attack, run_experiment, AttackPlan, AutoencoderPair,
    Error, GlobalModel, Result, RunConfig, Tensor,
};
use serde::Serialize;

use crate::Common;

const AUTOENCODER_FILE: &str = "autoencoder.llae";
const MODEL_FILE: &str = "model.llgm";

/// Pull `--key=value` arguments naming config keys out of the argument list.
pub fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<String>) {
    args.partition(|a| {
        a.strip_prefix("--")
            .and_then(|body| body.split_once('='))
            .is_some_and(|(k, _)| DEFAULTS.iter().any(|(d, _)| *d == k))
    })
}

fn load_config(common: &Common, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) if !p.is_file() => return Err(Error::Config(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(cfg.get("out_dir").unwrap_or("out")));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn plan_for(cfg: &RunConfig, data: &Dataset) -> Result<AttackPlan> {
    cfg.plan(data.pixels(), data.classes)
}

fn load_checkpoints(dir: &Path) -> Result<(GlobalModel, AutoencoderPair)> {
    for f in [MODEL_FILE, AUTOENCODER_FILE] {
        if !dir.join(f).is_file() {
            return Err(Error::Config(format!("missing checkpoint {}", dir.join(f).display())));
        }
    }
    Ok((load_global_model(&dir.join(MODEL_FILE))?, load_autoencoder(&dir.join(AUTOENCODER_FILE))?))
}

fn check_compatible(plan: &AttackPlan, model: &GlobalModel) -> Result<()> {
    if model.shape_list() != plan.arch.shape_list() {
        return Err(Error::Config("checkpoint architecture does not match the configuration".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct PrepareSummary<'a> {
    config: &'a BTreeMap<String, String>,
    aux_samples: usize,
    loss_history: &'a [f64],
    roundtrip_mse: f64,
    thresholds: Vec<f64>,
}

fn prepare_into(cfg: &RunConfig, dir: &Path) -> Result<(AttackPlan, GlobalModel, AutoencoderPair, Dataset)> {
    let (aux, pool) = cfg.datasets()?;
    let plan = plan_for(cfg, &aux)?;
    let start = Instant::now();
    let prepared = prepare_attack(&plan, &aux.images)?;
    save_autoencoder(&dir.join(AUTOENCODER_FILE), &prepared.autoencoder)?;
    save_global_model(&dir.join(MODEL_FILE), &prepared.model)?;
    let summary = PrepareSummary {
        config: cfg.values(),
        aux_samples: aux.len(),
        loss_history: &prepared.loss_history,
        roundtrip_mse: prepared.autoencoder.reconstruction_mse(&aux.images)?,
        thresholds: prepared.leak.thresholds(),
    };
    write_json(&dir.join("prepare.json"), &summary)?;
    println!(
        "prepared: aux={} k={} d={} final_loss={:.5} ({:.1}s) -> {}",
        aux.len(),
        plan.k(),
        plan.d(),
        prepared.loss_history.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok((plan, prepared.model, prepared.autoencoder, pool))
}

pub fn prepare(common: &Common, overrides: &[String]) -> Result<()> {
    let cfg = load_config(common, overrides)?;
    let dir = out_dir(common, &cfg)?;
    prepare_into(&cfg, &dir).map(|_| ())
}

fn to_images(batch: &Tensor, data: &Dataset) -> Result<Vec<Image>> {
    (0..batch.rows())
        .map(|i| Image::new(data.height, data.width, data.channels, batch.row(i).to_vec()))
        .collect()
}

fn run_attack(
    cfg: &RunConfig,
    plan: &AttackPlan,
    model: &GlobalModel,
    autoencoder: &AutoencoderPair,
    pool: &Dataset,
    dir: &Path,
) -> Result<f64> {
    let m = cfg.usize("batch_size")?;
    let seed = leakfl::attack::trial_seed(plan.seed, m, 0);
    let batch = draw_batch(pool, m, seed)?;
    let out = attack_batch(plan, model, autoencoder, &batch.images, &batch.labels, seed, cfg.values())?;
    let rec = &out.reconstruction;
    save_matrix(&dir.join("originals.lltn"), &batch.images)?;
    save_matrix(&dir.join("recovered.lltn"), &rec.images)?;
    write_image(&dir.join("originals.pgm"), &montage(&to_images(&batch.images, pool)?)?)?;
    if rec.images.rows() > 0 {
        write_image(&dir.join("recovered.pgm"), &montage(&to_images(&rec.images, pool)?)?)?;
    }
    write_json(&dir.join("report.json"), &out.report)?;
    if let Some(d) = &rec.diagnostic {
        eprintln!("warning: {d}");
    }
    println!(
        "attack: m={} k={} recovered_bins={} rate={:.3} mean_psnr={} -> {}",
        out.report.m,
        out.report.k,
        out.report.recovered_bins,
        out.report.rate,
        out.report
            .mean_psnr_success
            .map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}dB")),
        dir.display()
    );
    Ok(out.report.rate)
}

pub fn attack(common: &Common, checkpoints: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let cfg = load_config(common, overrides)?;
    let dir = out_dir(common, &cfg)?;
    let ckpt = checkpoints.unwrap_or_else(|| dir.clone());
    let (model, autoencoder) = load_checkpoints(&ckpt)?;
    let (_, pool) = cfg.datasets()?;
    let plan = plan_for(&cfg, &pool)?;
    check_compatible(&plan, &model)?;
    run_attack(&cfg, &plan, &model, &autoencoder, &pool, &dir).map(|_| ())
}

#[derive(Serialize)]
struct Evaluation {
    threshold: f64,
    matching: String,
    m: usize,
    recovered: usize,
    rate: f64,
    mean_psnr_success: Option<f64>,
    matches: Vec<leakfl::report::MatchEntry>,
    report_rate: Option<f64>,
}

pub fn evaluate(common: &Common, dir: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let cfg = load_config(common, overrides)?;
    let dir = match dir {
        Some(d) => d,
        None => out_dir(common, &cfg)?,
    };
    for f in ["originals.lltn", "recovered.lltn"] {
        if !dir.join(f).is_file() {
            return Err(Error::Config(format!("missing artifact {}", dir.join(f).display())));
        }
    }
    let originals = load_matrix(&dir.join("originals.lltn"))?;
    let recovered = load_matrix(&dir.join("recovered.lltn"))?;
    let threshold = cfg.f64("threshold")?;
    let matching = leakfl::Matching::parse(cfg.get("matching")?)?;
    let outcome = match_and_rate(&originals, &recovered, threshold, matching)?;
    let report_path = dir.join("report.json");
    let report: Option<leakfl::ReconstructionReport> = if report_path.is_file() { Some(read_json(&report_path)?) } else { None };
    let eval = Evaluation {
        threshold,
        matching: matching.as_str().to_string(),
        m: originals.rows(),
        recovered: recovered.rows(),
        rate: outcome.rate,
        mean_psnr_success: outcome.mean_psnr_success,
        matches: outcome.matches,
        report_rate: report.map(|r| r.rate),
    };
    write_json(&dir.join("evaluation.json"), &eval)?;
    print!("{}", to_json(&serde_json::json!({
        "m": eval.m,
        "recovered": eval.recovered,
        "rate": eval.rate,
        "mean_psnr_success": eval.mean_psnr_success,
        "threshold": eval.threshold,
        "report_rate": eval.report_rate,
    }))?);
    Ok(())
}

pub fn experiment(common: &Common, checkpoints: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let cfg = load_config(common, overrides)?;
    let dir = out_dir(common, &cfg)?;
    let batch_sizes = cfg.usize_list("batch_sizes")?;
    let trials = cfg.usize("trials")?;
    let (plan, model, autoencoder, pool) = match checkpoints {
        Some(ckpt) => {
            let (model, autoencoder) = load_checkpoints(&ckpt)?;
            let (_, pool) = cfg.datasets()?;
            let plan = plan_for(&cfg, &pool)?;
            check_compatible(&plan, &model)?;
            (plan, model, autoencoder, pool)
        }
        None => prepare_into(&cfg, &dir)?,
    };
    let table = run_experiment(&plan, &model, &autoencoder, &pool, &batch_sizes, trials, cfg.values())?;
    write_json(&dir.join("experiment.json"), &table)?;
    println!("{:>6} {:>7} {:>10} {:>8} {:>12}", "m", "trials", "mean_rate", "std", "mean_psnr");
    for s in &table.summary {
        println!(
            "{:>6} {:>7} {:>10.3} {:>8.3} {:>12}",
            s.batch_size,
            s.trials,
            s.mean_rate,
            s.std_rate,
            s.mean_psnr_success.map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}"))
        );
    }
    Ok(())
}

pub fn demo(common: &Common, overrides: &[String]) -> Result<()> {
    let mut cfg = load_config(common, overrides)?;
    cfg.set("data_source", "synth")?;
    let quarter = (cfg.usize("k")? / 4).max(1);
    cfg.set("batch_size", &quarter.to_string())?;
    let dir = out_dir(common, &cfg)?;
    let start = Instant::now();
    let (plan, model, autoencoder, pool) = prepare_into(&cfg, &dir)?;
    let rate = run_attack(&cfg, &plan, &model, &autoencoder, &pool, &dir)?;
    println!("demo: rate {rate:.3} at m = {quarter} in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
