//! Shared fixtures for the criterion benchmarks.

use leakfl::data::synth_shapes;
use leakfl::leakage::{assemble_adversarial_model, craft_leak_module, EmpiricalCdf};
use leakfl::{Activation, AeMode, AutoencoderArch, AutoencoderPair, Dataset, GlobalModel, SeededRng, Sequential};

pub struct Fixture {
    pub model: GlobalModel,
    pub autoencoder: AutoencoderPair,
    pub pool: Dataset,
}

/// Untrained autoencoder spliced into a crafted model: costs match a trained
/// one, and setup stays cheap.
pub fn fixture(k: usize, d: usize) -> Fixture {
    let pool = synth_shapes(512, 16, 6, 3).expect("synthetic data");
    let arch = AutoencoderArch {
        input_dim: pool.pixels(),
        hidden: vec![128],
        latent_dim: d,
    };
    let mut rng = SeededRng::new(3, 0);
    let autoencoder = AutoencoderPair::random(&arch, AeMode::Plain, 0.0, &mut rng).expect("autoencoder");
    let cdf = EmpiricalCdf::fit(&autoencoder.encode(&pool.images).expect("encode")).expect("cdf");
    let leak = craft_leak_module(&cdf, k, d, 32, 1.0).expect("leak module");
    let tail = Sequential::random(&[32, pool.classes], Activation::Identity, Activation::Identity, &mut rng);
    let model = assemble_adversarial_model(&autoencoder.attack_encoder().expect("encoder"), &leak, Some(&tail))
        .expect("assembled model");
    Fixture {
        model,
        autoencoder,
        pool,
    }
}
