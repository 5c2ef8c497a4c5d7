//! Deep Interest Network (DIN) click-through-rate prediction at desk scale.
//!
//! The crate covers the full experiment stack: group-wise sparse feature
//! encoding, per-group embedding dictionaries with strictly sparse updates,
//! PReLU and Dice activations, the local activation unit for adaptive
//! behavior pooling, LR / Embedding&MLP / DIN models with a hand-written
//! backward pass, mini-batch aware regularization, SGD/Adam training, and
//! impression-weighted AUC evaluation. A `din` binary wires the pieces into
//! reproducible prepare/train/eval experiments.

pub mod activation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod features;
pub mod interest;
pub mod metrics;
pub mod model;
pub mod regularization;
pub mod training;

pub use error::{Error, Result};
