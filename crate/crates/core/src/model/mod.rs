//! The forecasting architecture.
//!
//! An input layer compresses each node's T-step history into a d-dimensional
//! embedding through a router-weighted bank of gated linear units, then L
//! residual blocks alternate agent-token attention with the same
//! mixture-of-experts transform (RMSNorm applied after each residual add).
//! The per-layer hidden states are concatenated and mapped to the P-step
//! forecast by a two-layer head.

mod forward;
mod params;

pub use forward::{glu_expert, unpack_expert, AttnOut, FastModel, ForwardTrace, StageNanos, TraceMode};
pub use params::{BoundParams, ModelParams};

use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of spatial nodes (N).
    pub nodes: usize,
    /// Input window length (T).
    pub input_steps: usize,
    /// Forecast horizon (P).
    pub horizon: usize,
    /// Hidden dimension (d).
    pub dim: usize,
    /// Number of experts (e).
    pub experts: usize,
    /// Number of agent tokens (a).
    pub agents: usize,
    /// Number of backbone blocks (L).
    pub layers: usize,
    /// Time-of-day resolution, e.g. 96 for 15-minute sampling.
    pub steps_per_day: usize,
    pub days_per_week: usize,
    /// Heterogeneity-aware routing: expert scores come from the raw series
    /// plus learned spatial/temporal biases. When false (ablation), the
    /// router instead scores the layer's own input representation and the
    /// biases are dropped.
    pub ha_router: bool,
}

impl ModelConfig {
    /// Default capacity settings: 8 experts, 3 layers, 32 agents, dim 64.
    pub fn new(nodes: usize, input_steps: usize, horizon: usize, steps_per_day: usize) -> Self {
        ModelConfig {
            nodes,
            input_steps,
            horizon,
            dim: 64,
            experts: 8,
            agents: 32,
            layers: 3,
            steps_per_day,
            days_per_week: 7,
            ha_router: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("nodes", self.nodes),
            ("input_steps", self.input_steps),
            ("horizon", self.horizon),
            ("dim", self.dim),
            ("experts", self.experts),
            ("agents", self.agents),
            ("layers", self.layers),
            ("steps_per_day", self.steps_per_day),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("model config field '{name}' must be positive")));
            }
        }
        if self.days_per_week != 7 {
            return Err(Error::config("days_per_week must be 7"));
        }
        if self.agents > self.nodes {
            log::warn!(
                "agent count {} exceeds node count {}; the attention bottleneck buys nothing",
                self.agents,
                self.nodes
            );
        }
        Ok(())
    }
}
