use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{inspect, ExplainError};
use crate::data::{Label, NodeKind};
use crate::layers::AttentionRecord;
use crate::model::{Model, PreparedEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    TrainAll,
    TestAll,
    TestCorrectSignal,
    TestCorrectBackground,
    TestMisclassified,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::TrainAll,
        Subset::TestAll,
        Subset::TestCorrectSignal,
        Subset::TestCorrectBackground,
        Subset::TestMisclassified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::TrainAll => "train-all",
            Subset::TestAll => "test-all",
            Subset::TestCorrectSignal => "test-correct-signal",
            Subset::TestCorrectBackground => "test-correct-background",
            Subset::TestMisclassified => "test-misclassified",
        }
    }

    /// Whether the subset draws from the training set.
    pub fn uses_train(self) -> bool {
        self == Subset::TrainAll
    }

    pub fn accepts(self, label: Label, predicted_signal: bool) -> bool {
        let correct = (label == Label::Signal) == predicted_signal;
        match self {
            Subset::TrainAll | Subset::TestAll => true,
            Subset::TestCorrectSignal => correct && label == Label::Signal,
            Subset::TestCorrectBackground => correct && label == Label::Background,
            Subset::TestMisclassified => !correct,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Subset::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Subset::ALL.iter().map(|x| x.name()).collect();
            format!("unknown subset {s:?}; valid: {}", names.join(", "))
        })
    }
}

/// Subset plus an optional node-count filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubsetSelector {
    pub subset: Subset,
    pub n_nodes: Option<usize>,
}

impl SubsetSelector {
    pub fn new(subset: Subset) -> Self {
        Self { subset, n_nodes: None }
    }

    pub fn accepts(&self, n_nodes: usize, label: Label, predicted_signal: bool) -> bool {
        self.n_nodes.is_none_or(|n| n == n_nodes) && self.subset.accepts(label, predicted_signal)
    }

    pub fn describe(&self) -> String {
        match self.n_nodes {
            Some(n) => format!("{} ({n} nodes)", self.subset),
            None => self.subset.to_string(),
        }
    }
}

/// Mean attention map of one (layer, head, node count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub layer: usize,
    pub head: usize,
    pub n_nodes: usize,
    pub kinds: Vec<NodeKind>,
    /// Row-major `n_nodes × n_nodes`.
    pub weights: Vec<f64>,
    pub n_events: usize,
}

impl AttentionSummary {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_nodes + col]
    }
}

/// Cell-wise mean of same-shaped records, grouped by (layer, head, node
/// count) and ordered by those keys.
pub fn average_records<'a>(records: impl IntoIterator<Item = &'a AttentionRecord>) -> Vec<AttentionSummary> {
    let mut groups: std::collections::BTreeMap<(usize, usize, usize), (Vec<f64>, usize)> = Default::default();
    for rec in records {
        let entry = groups
            .entry((rec.layer, rec.head, rec.n_nodes))
            .or_insert_with(|| (vec![0.0; rec.n_nodes * rec.n_nodes], 0));
        for (s, w) in entry.0.iter_mut().zip(&rec.weights) {
            *s += w;
        }
        entry.1 += 1;
    }
    groups
        .into_iter()
        .map(|((layer, head, n_nodes), (sum, count))| AttentionSummary {
            layer,
            head,
            n_nodes,
            kinds: NodeKind::layout(n_nodes).map(<[NodeKind]>::to_vec).unwrap_or_default(),
            weights: sum.into_iter().map(|s| s / count as f64).collect(),
            n_events: count,
        })
        .collect()
}

/// Inference-mode attention averaged over the events the selector accepts.
pub fn aggregate_attention(
    model: &Model,
    events: &[PreparedEvent],
    selector: SubsetSelector,
    batch_size: usize,
) -> Result<Vec<AttentionSummary>, ExplainError> {
    let inspection = inspect(model, events, batch_size)?;
    let keep: Vec<bool> = events
        .iter()
        .zip(&inspection.scores)
        .map(|(e, &s)| selector.accepts(e.rows.len(), e.label, s >= 0.5))
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(ExplainError::EmptySubset(selector.describe()));
    }
    Ok(average_records(inspection.attention.iter().filter(|r| keep[r.event])))
}
