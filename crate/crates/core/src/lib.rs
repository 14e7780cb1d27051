//! Simulator for decentralized alternating LoRA training over time-varying
//! gossip graphs.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation used by the harness.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lora;
pub mod metrics;
pub mod numerics;
pub mod protocol;
pub mod scalar;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type LoraFactors64 = lora::LoraFactors<f64>;
pub type ClientTask64 = lora::ClientTask<f64>;
pub type ClientState64 = protocol::ClientState<f64>;
pub type MixingMatrix64 = topology::MixingMatrix<f64>;
pub type Trajectory64 = protocol::Trajectory<f64>;
