//! Gradient-leakage reconstruction attacks against federated learning.
//!
//! A malicious server trains a surrogate autoencoder on auxiliary data,
//! splices a linear leakage module behind the encoder of the global model and
//! reads client latent codes back out of a single aggregated update. The
//! crate contains the dense network engine, the federated round simulator
//! (FedSGD, FedAVG, pairwise-masked secure aggregation, per-sample DP) and
//! the evaluation tooling.

pub mod attack;
pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod imageio;
pub mod leakage;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;

pub use attack::{
    attack_batch, draw_batch, execute_round, make_clients, match_and_rate, prepare, psnr, reconstruct, run_experiment, AttackOutcome,
    AttackPlan, ExperimentTable, MatchOutcome, Matching, Prepared, Reconstruction, ReconstructionReport,
};
pub use autoencoder::{train_autoencoder, AeMode, AutoencoderArch, AutoencoderPair, TrainConfig};
pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use fedsim::{ClientState, ClientUpdate, DpConfig, FlMode, MaskedUpdate, UpdateKind};
pub use leakage::{craft_leak_module, recover_lsrs, BinStatus, EmpiricalCdf, LinearLeakModule, RecoveredBins};
pub use model::{GlobalModel, ModelArch};
pub use nn::{Activation, GradientSet, Sequential, Tensor};
pub use rng::SeededRng;
