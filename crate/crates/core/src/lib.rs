//! fast-stg: long-horizon forecasting for large spatial-temporal node sets.
//!
//! The crate is organized around five pieces:
//!
//! - [`tensor`] — a minimal dense f64 tensor engine with reverse-mode
//!   differentiation, carrying exactly the operator set the model needs.
//! - [`model`] — the forecasting architecture: a gated mixture-of-experts
//!   temporal compression input, agent-token attention blocks with RMSNorm
//!   residuals, and an MLP prediction head.
//! - [`data`] — dataset I/O, chronological splits, per-node normalization,
//!   sliding-window batching, and synthetic data generation.
//! - [`train`] — Huber objective, Adam with a step-decay schedule, early
//!   stopping, checkpointing, and evaluation.
//! - [`analysis`] — forecast metrics and the spatial-fidelity toolkit
//!   (reconstruction errors, spectral bounds, correlation statistics).
//!
//! The `fast-stg` binary (see [`cli`]) wires everything into `train`,
//! `predict`, `eval`, `fidelity`, `bench`, and `synth` subcommands.

pub mod analysis;
pub mod cli;
pub mod data;
mod error;
pub(crate) mod ioutil;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
