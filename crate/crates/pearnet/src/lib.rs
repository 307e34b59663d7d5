//! Sleep-stage classification with graph attention over learned signal nodes.
//!
//! A single-channel epoch is cut into base segments. A convolutional stack
//! with a squeeze-and-excitation gate turns each segment into a node, and
//! dilated causal convolutions over the segment axis add higher-level nodes.
//! A variance-inflation penalty on the nodes' correlation matrix discourages
//! redundant nodes. Attention heads score node pairs, prune edges through a
//! learned adjacency, and aggregate; a dense head predicts one of five stages.
//!
//! Everything runs on a small reverse-mode autodiff tape over `f64` tensors
//! ([`diff`]), so every gradient can be checked against finite differences.
//!
//! ```no_run
//! use pearnet::model::ModelConfig;
//! use pearnet::signal::{synthesize, SynthConfig};
//! use pearnet::train::{cross_validate, TrainConfig};
//!
//! let data = synthesize(&SynthConfig::default(), 0)?.z_normalized(1e-8);
//! let train = TrainConfig { epochs: 40, batch_size: 32, k_folds: 5, ..TrainConfig::default() };
//! let out = cross_validate(&data, &ModelConfig::default(), &train, |_, _| {})?;
//! println!("{}", out.report.to_table());
//! # Ok::<(), pearnet::Error>(())
//! ```

pub mod cli;
pub mod diff;
pub mod error;
pub mod graph;
pub mod model;
pub mod nodegen;
pub mod params;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
