//! Simulator and analysis toolkit for differentially private federated
//! learning under communication constraints.
//!
//! The crate covers the whole pipeline of a simulated run: a strongly convex
//! softmax-regression [`model`], device [`data`] partitions, the QSGD
//! [`compressor`] with exact bit accounting, Gaussian-mechanism [`privacy`]
//! calibration, the round-based [`federation`] engine (distributed SGD,
//! FedAvg, FedPaq, SCAFFOLD and private FedPaq) and the convergence-bound
//! [`analysis`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod compressor;
pub mod data;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod model;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
