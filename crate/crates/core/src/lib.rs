//! Frequency-space augmentation for federated domain generalization in
//! binary segmentation.
//!
//! Clients share the low-frequency amplitude spectra of their images through
//! an [`AmplitudeBank`](bank::AmplitudeBank). During local training each
//! client mixes foreign amplitudes into its own images, optionally after
//! soft or hard thresholding that suppresses small coefficients, and trains
//! on the synthetic images before the originals. A server aggregates the
//! client models by weighted averaging.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`; the `*32` aliases use `f32`.

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod bank;
pub mod binary;
pub mod data;
pub mod error;
pub mod federation;
mod fft;
mod io_util;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod spectral;
pub mod threshold;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use augment::{FrequencyMask, MixVariant};
pub use binary::BinaryMask;
pub use threshold::ThresholdMode;

pub type Image = spectral::Image<f64>;
pub type Planes = spectral::Planes<f64>;
pub type Spectrum = spectral::Spectrum<f64>;
pub type ThresholdSpec = threshold::ThresholdSpec<f64>;
pub type AugmentParams = augment::AugmentParams<f64>;
pub type AmplitudeBank = bank::AmplitudeBank<f64>;
pub type AmplitudeBankEntry = bank::AmplitudeBankEntry<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type GradVector = model::GradVector<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type FederationConfig = federation::FederationConfig<f64>;
pub type ClientState = federation::ClientState<f64>;
pub type RoundRecord = federation::RoundRecord<f64>;
pub type Sample = data::Sample<f64>;

pub type Image32 = spectral::Image<f32>;
pub type Planes32 = spectral::Planes<f32>;
pub type Spectrum32 = spectral::Spectrum<f32>;
pub type ThresholdSpec32 = threshold::ThresholdSpec<f32>;
pub type AugmentParams32 = augment::AugmentParams<f32>;
pub type AmplitudeBank32 = bank::AmplitudeBank<f32>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type MetricsReport32 = metrics::MetricsReport<f32>;
pub type FederationConfig32 = federation::FederationConfig<f32>;
pub type ClientState32 = federation::ClientState<f32>;
