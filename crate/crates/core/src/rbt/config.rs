use serde::{Deserialize, Serialize};

use crate::numcore::AdamWConfig;

use super::RbtError;

/// Architecture and training knobs of the reward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbtConfig {
    pub n_causal_layers: usize,
    pub n_bidir_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Weight of the next-state loss.
    pub beta: f64,
    pub seq_len: usize,
    pub relabel_len: usize,
    /// Attention redistribution head; `false` swaps in a per-step linear reward.
    pub bidirectional_head: bool,
    /// Train the next-state decoder; `false` drops the state loss entirely.
    pub state_decoder: bool,
    pub grad_clip: f64,
}

impl Default for RbtConfig {
    fn default() -> Self {
        Self {
            n_causal_layers: 3,
            n_bidir_layers: 1,
            n_heads: 4,
            embed_dim: 64,
            dropout: 0.1,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            warmup_steps: 100,
            total_steps: 10_000,
            beta: 1.0,
            seq_len: 100,
            relabel_len: 500,
            bidirectional_head: true,
            state_decoder: true,
            grad_clip: 1.0,
        }
    }
}

impl RbtConfig {
    /// Small configuration that trains in seconds on one core.
    pub fn desk() -> Self {
        Self {
            n_causal_layers: 1,
            n_heads: 2,
            embed_dim: 32,
            dropout: 0.0,
            batch_size: 16,
            lr: 5e-4,
            weight_decay: 1e-4,
            warmup_steps: 20,
            total_steps: 2000,
            seq_len: 50,
            relabel_len: 50,
            beta: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RbtError> {
        let bad = |m: &str| Err(RbtError::Config(m.to_string()));
        if self.n_causal_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return bad("layer count, head count and embed_dim must be positive");
        }
        if self.n_bidir_layers != 1 {
            return bad("exactly one bidirectional layer is supported");
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad("n_heads must divide embed_dim");
        }
        if self.batch_size == 0 || self.seq_len == 0 || self.relabel_len == 0 || self.total_steps == 0 {
            return bad("batch_size, seq_len, relabel_len and total_steps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn max_positions(&self) -> usize {
        self.seq_len.max(self.relabel_len)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, warmup_steps: self.warmup_steps, ..AdamWConfig::default() }
    }
}
