//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attack::{AttackPlan, Matching};
use crate::autoencoder::{AeMode, TrainConfig};
use crate::data::{load_csv, load_idx, synth_shapes, Dataset};
use crate::error::{Error, Result};
use crate::fedsim::{DpConfig, FlMode};
use crate::model::ModelArch;

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data_source", "synth"),
    ("image_size", "16"),
    ("classes", "6"),
    ("aux_size", "500"),
    ("pool_size", "1000"),
    ("idx_images", ""),
    ("idx_labels", ""),
    ("csv_path", ""),
    ("csv_height", "28"),
    ("csv_width", "28"),
    ("csv_channels", "1"),
    ("encoder_hidden", "128"),
    ("latent_dim", "16"),
    ("k", "128"),
    ("head_width", "32"),
    ("w2_row_value", "1.0"),
    ("ae_mode", "plain"),
    ("ae_epochs", "150"),
    ("ae_batch_size", "32"),
    ("ae_lr", "0.002"),
    ("ae_beta", "0.001"),
    ("ae_warmup", "0.2"),
    ("mode", "fedsgd"),
    ("clients", "8"),
    ("local_iters", "1"),
    ("local_lr", "0.01"),
    ("dp_enabled", "false"),
    ("dp_clip", "1.0"),
    ("dp_sigma", "0.01"),
    ("secure_aggregation", "false"),
    ("mask_bound_factor", "1000"),
    ("threshold", "18"),
    ("matching", "greedy"),
    ("batch_size", "32"),
    ("batch_sizes", "16,32,64,128"),
    ("trials", "5"),
    ("out_dir", "out"),
    ("record_timing", "false"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `--key=value` (or `key=value`) overrides; later ones win.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let body = o.strip_prefix("--").unwrap_or(o);
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not of the form --key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key} = {raw:?} is not a valid {what}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, "non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key, "number")?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(Error::Config(format!("{key} = {other:?} is not a boolean"))),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {s:?} is not an integer")))
            })
            .collect()
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Auxiliary set and victim pool. Synthetic data draws them from
    /// independent seeds; file sources split off the first `aux_size` samples
    /// as auxiliary data and keep up to `pool_size` of the rest.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let aux_size = self.usize("aux_size")?;
        let pool_size = self.usize("pool_size")?;
        if aux_size == 0 || pool_size == 0 {
            return Err(Error::Config("aux_size and pool_size must be positive".into()));
        }
        let full = match self.get("data_source")? {
            "synth" => {
                let (size, classes, seed) = (self.usize("image_size")?, self.usize("classes")?, self.u64("seed")?);
                let aux = synth_shapes(aux_size, size, classes, seed)?;
                let pool = synth_shapes(pool_size, size, classes, seed.wrapping_add(1))?;
                return Ok((aux, pool));
            }
            "idx" => load_idx(&self.path("idx_images")?, &self.path("idx_labels")?)?,
            "csv" => load_csv(
                &self.path("csv_path")?,
                self.usize("csv_height")?,
                self.usize("csv_width")?,
                self.usize("csv_channels")?,
            )?,
            other => return Err(Error::Config(format!("unknown data_source {other:?}; use synth, idx or csv"))),
        };
        if full.len() <= aux_size {
            return Err(Error::Config(format!(
                "dataset has {} samples, need more than aux_size = {aux_size}",
                full.len()
            )));
        }
        let aux = full.subset(&(0..aux_size).collect::<Vec<_>>());
        let end = full.len().min(aux_size + pool_size);
        let pool = full.subset(&(aux_size..end).collect::<Vec<_>>());
        Ok((aux, pool))
    }

    /// A path-valued key that must name an existing file.
    pub fn path(&self, key: &str) -> Result<std::path::PathBuf> {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Err(Error::Config(format!("{key} is required for this data source")));
        }
        let p = std::path::PathBuf::from(raw);
        if !p.is_file() {
            return Err(Error::Config(format!("{key}: no such file {raw:?}")));
        }
        Ok(p)
    }

    /// Architecture for the given input width.
    pub fn arch(&self, input_dim: usize, classes: usize) -> Result<ModelArch> {
        let arch = ModelArch {
            input_dim,
            encoder_hidden: self.usize_list("encoder_hidden")?,
            latent_dim: self.usize("latent_dim")?,
            leak_width: self.usize("k")?,
            head_width: self.usize("head_width")?,
            classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn plan(&self, input_dim: usize, classes: usize) -> Result<AttackPlan> {
        let seed = self.u64("seed")?;
        let autoencoder = TrainConfig {
            epochs: self.usize("ae_epochs")?,
            batch_size: self.usize("ae_batch_size")?,
            lr: self.f64("ae_lr")?,
            seed,
            mode: AeMode::parse(self.get("ae_mode")?)?,
            beta: self.f64("ae_beta")?,
            warmup_fraction: self.f64("ae_warmup")?,
        };
        let dp = if self.bool("dp_enabled")? {
            DpConfig::new(self.f64("dp_clip")?, self.f64("dp_sigma")?)
        } else {
            DpConfig::disabled()
        };
        let plan = AttackPlan {
            arch: self.arch(input_dim, classes)?,
            autoencoder,
            w2_row_value: self.f64("w2_row_value")?,
            mode: FlMode::parse(self.get("mode")?)?,
            dp,
            seed,
            clients: self.usize("clients")?,
            local_iters: self.usize("local_iters")?,
            local_lr: self.f64("local_lr")?,
            secure_aggregation: self.bool("secure_aggregation")?,
            mask_bound_factor: self.f64("mask_bound_factor")?,
            threshold: self.f64("threshold")?,
            matching: Matching::parse(self.get("matching")?)?,
            record_timing: self.bool("record_timing")?,
        };
        plan.validate()?;
        Ok(plan)
    }
}
