use serde::{Deserialize, Serialize};

use super::{Bound, LayerError, Norm, ParamId, ParamStore};
use crate::tensor::{Segment, Tape, Var};

/// Projections of one multi-head attention layer. `W_Q`, `W_K`, `W_V` are
/// `d_model × d_model`; column block `h·d_k .. (h+1)·d_k` is head `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub norm: Norm,
    pub heads: usize,
}

/// Attention weights of one (layer, head, event).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub event: usize,
    pub n_nodes: usize,
    /// Row-major `n_nodes × n_nodes`.
    pub weights: Vec<f64>,
}

impl AttentionLayerParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut crate::Rng,
    ) -> Result<Self, LayerError> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(LayerError::Config(format!(
                "{heads} heads do not divide d_model {d_model}"
            )));
        }
        Ok(Self {
            w_q: store.glorot(format!("{name}.w_q"), d_model, d_model, rng),
            w_k: store.glorot(format!("{name}.w_k"), d_model, d_model, rng),
            w_v: store.glorot(format!("{name}.w_v"), d_model, d_model, rng),
            w_o: store.glorot(format!("{name}.w_o"), d_model, d_model, rng),
            norm: Norm::new(store, &format!("{name}.norm"), d_model),
            heads,
        })
    }
}

/// Output of the attention sublayer before residual and norm, plus the tape
/// node that holds the attention weights.
pub struct AttentionOutput {
    pub out: Var,
    pub scores: Var,
}

/// `Concat(head_1..head_H)·W_O` with `head_h = softmax(Q_h K_hᵀ/√d_k) V_h`,
/// computed independently for every event segment.
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    segments: &[Segment],
    params: &AttentionLayerParams,
) -> Result<AttentionOutput, LayerError> {
    let q = tape.matmul(x, p.var(params.w_q))?;
    let k = tape.matmul(x, p.var(params.w_k))?;
    let v = tape.matmul(x, p.var(params.w_v))?;
    let scores = tape.segment_attention(q, k, v, segments, params.heads)?;
    let out = tape.matmul(scores, p.var(params.w_o))?;
    Ok(AttentionOutput { out, scores })
}

/// `Norm(x + MHA(x))`.
pub fn attention_block(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    segments: &[Segment],
    params: &AttentionLayerParams,
) -> Result<AttentionOutput, LayerError> {
    let AttentionOutput { out, scores } = multi_head_attention(tape, p, x, segments, params)?;
    let sum = tape.add(x, out)?;
    let out = params.norm.forward(tape, p, sum)?;
    Ok(AttentionOutput { out, scores })
}

/// Extracts per-(head, event) weight matrices from an attention node.
pub fn attention_records(tape: &Tape, scores: Var, layer: usize) -> Vec<AttentionRecord> {
    let Some((probs, segments, heads)) = tape.attention_weights(scores) else {
        return Vec::new();
    };
    let mut records = Vec::with_capacity(segments.len() * heads);
    let mut offset = 0;
    for (event, &(_, n)) in segments.iter().enumerate() {
        for head in 0..heads {
            records.push(AttentionRecord {
                layer,
                head,
                event,
                n_nodes: n,
                weights: probs[offset..offset + n * n].to_vec(),
            });
            offset += n * n;
        }
    }
    records
}
