//! Community-based federated learning (CBFL) simulator.
//!
//! Clients (hospitals) jointly train a denoising autoencoder whose encoder maps
//! binary drug features to a 50-dim representation. The server clusters the
//! per-client mean encodings with k-means, and one small prediction network is
//! trained per community with count-weighted federated averaging. FedAvg and
//! pooled (centralized) training are provided as baselines, and every simulated
//! message is recorded in a communication ledger.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the simulator and CLI use.

pub mod autoencoder;
pub mod clustering;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense network parameters in double precision.
pub type Mlp = nn::MlpParams<f64>;
/// Averaged encoder in double precision.
pub type Encoder = autoencoder::EncoderModel<f64>;
/// Fitted k-means model in double precision.
pub type KMeans = clustering::KMeansModel<f64>;
/// Encoder, k-means model and community networks in double precision.
pub type Bundle = federation::CbflBundle<f64>;
/// Feature matrix (dense or sparse) in double precision.
pub type FeatureMatrix = nn::Features<f64>;
