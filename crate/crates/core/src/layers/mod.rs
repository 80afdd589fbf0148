//! Transformer and mixture-of-experts building blocks. Every block works on a
//! stacked `R × d` matrix of node rows; per-event structure is carried by row
//! segments.

mod attention;
mod moe;
mod params;

pub use attention::{
    attention_block, attention_records, multi_head_attention, AttentionLayerParams, AttentionOutput,
    AttentionRecord,
};
pub use moe::{
    expert_forward, ffn, ffn_with, keep_top_k, kth_excluding, load_balance_loss, moe_forward, noisy_gate,
    top_k_indices, zero_load_warnings, Activation, ExpertParams, FfnParams, GateParams, Routing, RoutingRecord,
    NEG_LARGE,
};
pub use params::{Bound, Linear, NamedTensor, Norm, ParamId, ParamStore};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("top-k needs 1 <= k <= n, got k={k}, n={n}")]
    TopK { k: usize, n: usize },
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
