use serde::{Deserialize, Serialize};

use super::{inspect, ExplainError};
use crate::data::{NodeKind, MAX_NODES};
use crate::model::{Model, PreparedEvent};

/// How often each expert is in a node's inference-time top-k set, per MoE
/// layer and node kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecializationTable {
    pub n_experts: usize,
    pub k: usize,
    /// `counts[layer][expert][kind]`.
    pub counts: Vec<Vec<[u64; MAX_NODES]>>,
    /// Gate-value-weighted variant of `counts`.
    pub gate_mass: Vec<Vec<[f64; MAX_NODES]>>,
    /// Nodes of each kind that were routed.
    pub nodes_per_kind: [u64; MAX_NODES],
}

impl SpecializationTable {
    pub fn layers(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, layer: usize, expert: usize, kind: NodeKind) -> u64 {
        self.counts[layer][expert][kind.index()]
    }

    /// Sum over experts; equals `k × nodes_per_kind` by construction.
    pub fn total(&self, layer: usize, kind: NodeKind) -> u64 {
        (0..self.n_experts).map(|e| self.count(layer, e, kind)).sum()
    }

    /// Share of a kind's selections that went to each expert.
    pub fn distribution(&self, layer: usize, kind: NodeKind) -> Vec<f64> {
        let total = self.total(layer, kind) as f64;
        (0..self.n_experts)
            .map(|e| {
                if total > 0.0 {
                    self.count(layer, e, kind) as f64 / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Shannon entropy (nats) of [`SpecializationTable::distribution`].
    pub fn entropy(&self, layer: usize, kind: NodeKind) -> f64 {
        -self
            .distribution(layer, kind)
            .into_iter()
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// The `k` most used experts for a kind, sorted by index; ties go to the
    /// lower index.
    pub fn dominant_experts(&self, layer: usize, kind: NodeKind) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_experts).collect();
        idx.sort_by(|&a, &b| self.count(layer, b, kind).cmp(&self.count(layer, a, kind)).then(a.cmp(&b)));
        idx.truncate(self.k);
        idx.sort();
        idx
    }

    /// Fraction of a kind's selections taken by its dominant experts.
    pub fn dominant_share(&self, layer: usize, kind: NodeKind) -> f64 {
        let d = self.distribution(layer, kind);
        self.dominant_experts(layer, kind).iter().map(|&e| d[e]).sum()
    }
}

/// Counts inference routing of every node of `events` in every MoE layer.
pub fn expert_specialization(
    model: &Model,
    events: &[PreparedEvent],
    batch_size: usize,
) -> Result<SpecializationTable, ExplainError> {
    let inspection = inspect(model, events, batch_size)?;
    let (n_experts, k) = (model.config.n_experts, model.config.top_k);
    let layers = inspection.routing.len();
    if layers == 0 {
        return Err(ExplainError::NoExperts(model.kind().to_string()));
    }
    let mut table = SpecializationTable {
        n_experts,
        k,
        counts: vec![vec![[0; MAX_NODES]; n_experts]; layers],
        gate_mass: vec![vec![[0.0; MAX_NODES]; n_experts]; layers],
        nodes_per_kind: [0; MAX_NODES],
    };
    for kind in &inspection.kinds {
        table.nodes_per_kind[kind.index()] += 1;
    }
    for (layer, nodes) in inspection.routing.iter().enumerate() {
        for (node, kind) in nodes.iter().zip(&inspection.kinds) {
            for &e in &node.selected {
                table.counts[layer][e][kind.index()] += 1;
                table.gate_mass[layer][e][kind.index()] += node.gates[e];
            }
        }
    }
    Ok(table)
}
