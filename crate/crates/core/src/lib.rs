//! Offline value learning with forward, backward and orthogonal-gradient
//! DICE updates on a small gridworld benchmark.
//!
//! The crate is split along the pipeline:
//!
//! - [`netcore`]: flat-parameter MLP with exact reverse-mode gradients, Adam and EMA.
//! - [`divergence`]: Pearson chi-squared `f`, its conjugates and the behavior-cloning weight.
//! - [`gridworld`]: the 30x30 navigation task, the behavior policy and JSONL datasets.
//! - [`dicetrain`]: gradient computation, projection, value/policy updates and the training loop.
//! - [`diagnostics`]: interference, descent, co-adaptation and robustness probes.
//! - [`config`]: the `key = value` run configuration shared by the CLI.
//! - [`cli`]: the `odice` command-line front end.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dicetrain;
pub mod divergence;
pub mod error;
pub mod gridworld;
pub mod netcore;
pub mod seeds;

pub use error::{Error, Result};
