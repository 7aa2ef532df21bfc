//! Surrogate autoencoder: an MLP encoder matching the global model's encoder
//! architecture and a mirror-image generative decoder, optionally trained as
//! a VAE so the latent distribution is pulled toward a standard Gaussian.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{mse, Activation, Adam, DenseLayer, GradientSet, Sequential, Tensor};
use crate::rng::SeededRng;

/// Initial log-variance of the VAE posterior head.
pub const LOGVAR_INIT: f64 = -6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeMode {
    Plain,
    Vae,
}

impl AeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(AeMode::Plain),
            "vae" => Ok(AeMode::Vae),
            other => Err(Error::Config(format!("unknown autoencoder mode {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AeMode::Plain => "plain",
            AeMode::Vae => "vae",
        }
    }
}

/// Widths of the encoder; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: AeMode,
    /// KL weight; ignored in plain mode.
    pub beta: f64,
    /// Fraction of epochs over which the KL weight ramps linearly from 0.
    pub warmup_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            lr: 2e-3,
            seed: 0,
            mode: AeMode::Plain,
            beta: 1e-3,
            warmup_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument("lr must be > 0, beta >= 0, warmup in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub mode: AeMode,
    pub beta: f64,
}

impl AutoencoderPair {
    /// Random initialisation. In VAE mode the encoder emits `mu || logvar`.
    pub fn random(arch: &AutoencoderArch, mode: AeMode, beta: f64, rng: &mut SeededRng) -> Result<Self> {
        if arch.input_dim == 0 || arch.latent_dim == 0 || arch.hidden.contains(&0) {
            return Err(Error::InvalidArgument("autoencoder widths must be positive".into()));
        }
        let head = match mode {
            AeMode::Plain => arch.latent_dim,
            AeMode::Vae => 2 * arch.latent_dim,
        };
        let mut enc_widths = vec![arch.input_dim];
        enc_widths.extend(&arch.hidden);
        enc_widths.push(head);
        let mut dec_widths = vec![arch.latent_dim];
        dec_widths.extend(arch.hidden.iter().rev());
        dec_widths.push(arch.input_dim);
        let mut encoder = Sequential::random(&enc_widths, Activation::Relu, Activation::Identity, rng);
        if mode == AeMode::Vae {
            let mut layers = encoder.into_layers();
            let last = layers.pop().expect("encoder has a head");
            let mut bias = last.bias().data().to_vec();
            bias[arch.latent_dim..].fill(LOGVAR_INIT);
            layers.push(DenseLayer::new(last.weight().clone(), Tensor::vector(bias), last.activation())?);
            encoder = Sequential::new(layers)?;
        }
        let decoder = Sequential::random(&dec_widths, Activation::Relu, Activation::Identity, rng);
        Self::new(encoder, decoder, mode, beta)
    }

    pub fn new(encoder: Sequential, decoder: Sequential, mode: AeMode, beta: f64) -> Result<Self> {
        let expected = match mode {
            AeMode::Plain => decoder.input_size(),
            AeMode::Vae => 2 * decoder.input_size(),
        };
        if encoder.output_size() != expected {
            return Err(shape_err("autoencoder latent width", &[expected], &[encoder.output_size()]));
        }
        if encoder.input_size() != decoder.output_size() {
            return Err(shape_err("autoencoder image width", &[encoder.input_size()], &[decoder.output_size()]));
        }
        Ok(Self {
            encoder,
            decoder,
            mode,
            beta,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_size()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_size()
    }

    /// The encoder as it is planted into the global model: in VAE mode only
    /// the mean head is kept, so the output width is the latent width.
    pub fn attack_encoder(&self) -> Result<Sequential> {
        match self.mode {
            AeMode::Plain => Ok(self.encoder.clone()),
            AeMode::Vae => {
                let d = self.latent_dim();
                let mut layers = self.encoder.layers().to_vec();
                let last = layers.pop().expect("non-empty encoder");
                let inp = last.input_size();
                let w = Tensor::matrix(d, inp, last.weight().data()[..d * inp].to_vec())?;
                let b = Tensor::vector(last.bias().data()[..d].to_vec());
                layers.push(DenseLayer::new(w, b, last.activation())?);
                Sequential::new(layers)
            }
        }
    }

    /// Latent representations; the VAE mean in VAE mode.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let out = self.encoder.predict(batch)?;
        match self.mode {
            AeMode::Plain => Ok(out),
            AeMode::Vae => Ok(split_halves(&out).0),
        }
    }

    /// Decoder output before clamping.
    pub fn decode_raw(&self, lsr_batch: &Tensor) -> Result<Tensor> {
        if lsr_batch.cols() != self.latent_dim() {
            return Err(shape_err("decode latent width", &[self.latent_dim()], &[lsr_batch.cols()]));
        }
        self.decoder.predict(lsr_batch)
    }

    /// Decoded images clamped to `[0, 1]`.
    pub fn decode(&self, lsr_batch: &Tensor) -> Result<Tensor> {
        let mut out = self.decode_raw(lsr_batch)?;
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(out)
    }

    /// Mean squared reconstruction error of `decode(encode(x))`.
    pub fn reconstruction_mse(&self, data: &Tensor) -> Result<f64> {
        let rec = self.decode(&self.encode(data)?)?;
        Ok(mse(&rec, data)?.0)
    }
}

fn split_halves(t: &Tensor) -> (Tensor, Tensor) {
    let d = t.cols() / 2;
    let mut a = Vec::with_capacity(t.rows() * d);
    let mut b = Vec::with_capacity(t.rows() * d);
    for row in t.iter_rows() {
        a.extend_from_slice(&row[..d]);
        b.extend_from_slice(&row[d..]);
    }
    (
        Tensor::matrix(t.rows(), d, a).expect("sized"),
        Tensor::matrix(t.rows(), d, b).expect("sized"),
    )
}

fn join_halves(a: &Tensor, b: &Tensor) -> Tensor {
    let d = a.cols();
    let mut out = Vec::with_capacity(a.len() * 2);
    for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Tensor::matrix(a.rows(), 2 * d, out).expect("sized")
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over units, averaged over rows.
///
/// Returns the value and its gradients with respect to `mu` and `logvar`.
pub fn kl_gaussian(mu: &Tensor, logvar: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    mu.check_same(logvar, "kl_gaussian")?;
    mu.ensure_finite("kl_gaussian mu")?;
    logvar.ensure_finite("kl_gaussian logvar")?;
    let inv = 1.0 / mu.rows() as f64;
    let mut kl = 0.0;
    let mut dmu = mu.clone();
    let mut dlv = logvar.clone();
    for ((m, lv), (gm, gl)) in mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(dmu.data_mut().iter_mut().zip(dlv.data_mut().iter_mut()))
    {
        let e = lv.exp();
        kl += -0.5 * (1.0 + lv - m * m - e);
        *gm = m * inv;
        *gl = -0.5 * (1.0 - e) * inv;
    }
    Ok((kl * inv, dmu, dlv))
}

/// Train a surrogate pair on `aux` (rows are flattened images in `[0, 1]`).
///
/// The returned history holds the full-set reconstruction MSE before
/// training followed by one entry per epoch.
pub fn train_autoencoder(aux: &Tensor, arch: &AutoencoderArch, cfg: &TrainConfig) -> Result<(AutoencoderPair, Vec<f64>)> {
    cfg.validate()?;
    if aux.is_empty() || aux.rows() == 0 {
        return Err(Error::Empty("autoencoder training set"));
    }
    if aux.cols() != arch.input_dim {
        return Err(shape_err("autoencoder training data", &[arch.input_dim], &[aux.cols()]));
    }
    let mut init_rng = SeededRng::new(cfg.seed, 0);
    let mut order_rng = SeededRng::new(cfg.seed, 1);
    let mut noise_rng = SeededRng::new(cfg.seed, 2);
    let mut pair = AutoencoderPair::random(arch, cfg.mode, cfg.beta, &mut init_rng)?;
    let mut enc_opt = Adam::new(cfg.lr);
    let mut dec_opt = Adam::new(cfg.lr);

    let n = aux.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = vec![pair.reconstruction_mse(aux)?];
    let warmup_epochs = cfg.warmup_fraction * cfg.epochs as f64;
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let beta = if warmup_epochs > 0.0 {
            cfg.beta * ((epoch as f64 + 1.0) / warmup_epochs).min(1.0)
        } else {
            cfg.beta
        };
        for chunk in order.chunks(cfg.batch_size) {
            let x = aux.select_rows(chunk);
            let (enc_grads, dec_grads) = match cfg.mode {
                AeMode::Plain => plain_step(&pair, &x)?,
                AeMode::Vae => vae_step(&pair, &x, beta, &mut noise_rng)?,
            };
            enc_opt.step(&mut pair.encoder, &enc_grads)?;
            dec_opt.step(&mut pair.decoder, &dec_grads)?;
        }
        history.push(pair.reconstruction_mse(aux)?);
    }
    Ok((pair, history))
}

fn plain_step(pair: &AutoencoderPair, x: &Tensor) -> Result<(GradientSet, GradientSet)> {
    let (enc_cache, z) = pair.encoder.forward(x)?;
    let (dec_cache, out) = pair.decoder.forward(&z)?;
    let (_, dout) = mse(&out, x)?;
    let (dec_grads, dz) = pair.decoder.backward_full(&dec_cache, &dout)?;
    let enc_grads = pair.encoder.backward(&enc_cache, &dz)?;
    Ok((enc_grads, dec_grads))
}

fn vae_step(pair: &AutoencoderPair, x: &Tensor, beta: f64, rng: &mut SeededRng) -> Result<(GradientSet, GradientSet)> {
    let (enc_cache, stats) = pair.encoder.forward(x)?;
    let (mu, logvar) = split_halves(&stats);
    let eps = Tensor::new(mu.shape().to_vec(), (0..mu.len()).map(|_| rng.normal()).collect())?;
    let std: Vec<f64> = logvar.data().iter().map(|lv| (0.5 * lv).exp()).collect();
    let z_data = mu
        .data()
        .iter()
        .zip(&std)
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    let z = Tensor::new(mu.shape().to_vec(), z_data)?;
    let (dec_cache, out) = pair.decoder.forward(&z)?;
    let (_, dout) = mse(&out, x)?;
    let (dec_grads, dz) = pair.decoder.backward_full(&dec_cache, &dout)?;
    let (_, kl_dmu, kl_dlv) = kl_gaussian(&mu, &logvar)?;
    let mut dmu = dz.clone();
    let mut dlv = dz;
    for (i, (gm, gl)) in dmu.data_mut().iter_mut().zip(dlv.data_mut().iter_mut()).enumerate() {
        *gm += beta * kl_dmu.data()[i];
        *gl = *gl * eps.data()[i] * 0.5 * std[i] + beta * kl_dlv.data()[i];
    }
    let enc_grads = pair.encoder.backward(&enc_cache, &join_halves(&dmu, &dlv))?;
    Ok((enc_grads, dec_grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> AutoencoderArch {
        AutoencoderArch {
            input_dim: 6,
            hidden: vec![5],
            latent_dim: 3,
        }
    }

    #[test]
    fn kl_closed_forms() {
        let z = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(kl_gaussian(&z, &z).unwrap().0, 0.0);
        let mu = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let lv = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        assert!((kl_gaussian(&mu, &lv).unwrap().0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let mut rng = SeededRng::new(5, 0);
        for mode in [AeMode::Plain, AeMode::Vae] {
            let pair = AutoencoderPair::random(&arch(), mode, 1e-3, &mut rng).unwrap();
            let row = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
            let x = Tensor::from_rows(&[row, row, row, row]).unwrap();
            let z = pair.encode(&x).unwrap();
            assert_eq!(z.shape(), &[4, 3]);
            assert_eq!(z.row(0), z.row(3));
            assert_eq!(pair.attack_encoder().unwrap().predict(&x).unwrap(), z);
            assert!(pair.encode(&Tensor::zeros(&[1, 5])).is_err());
        }
    }

    #[test]
    fn decode_clamps_and_is_deterministic() {
        let mut rng = SeededRng::new(9, 0);
        let pair = AutoencoderPair::random(&arch(), AeMode::Plain, 0.0, &mut rng).unwrap();
        let z = Tensor::from_rows(&[[0.0; 3], [40.0, -40.0, 25.0]]).unwrap();
        let raw = pair.decode_raw(&z).unwrap();
        let img = pair.decode(&z).unwrap();
        for (r, c) in raw.data().iter().zip(img.data()) {
            assert!((0.0..=1.0).contains(c));
            if *r < 0.0 {
                assert_eq!(*c, 0.0);
            } else if *r > 1.0 {
                assert_eq!(*c, 1.0);
            } else {
                assert_eq!(r, c);
            }
        }
        assert_eq!(pair.decode(&z).unwrap(), img);
        assert!(pair.decode(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let cfg = TrainConfig::default();
        assert!(train_autoencoder(&Tensor::zeros(&[0, 6]), &arch(), &cfg).is_err());
        assert!(train_autoencoder(&Tensor::zeros(&[3, 5]), &arch(), &cfg).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_autoencoder(&Tensor::zeros(&[3, 6]), &arch(), &bad).is_err());
    }
}
