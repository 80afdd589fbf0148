use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::layers::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mgt,
    Gt,
    Mlp,
    Gcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mgt, ModelKind::Gt, ModelKind::Mlp, ModelKind::Gcn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mgt => "mgt",
            ModelKind::Gt => "gt",
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model {s:?}; valid: mgt, gt, mlp, gcn"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub d_expert: usize,
    /// Hidden width of the plain transformer's feed-forward block.
    pub d_ffn: usize,
    pub dropout: f64,
    pub d_pe: usize,
    pub expert_activation: Activation,
    pub gate_noise: bool,
    pub mlp_hidden: Vec<usize>,
    pub gcn_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mgt,
            d_model: 80,
            heads: 2,
            layers: 2,
            n_experts: 6,
            top_k: 2,
            d_expert: 20,
            d_ffn: 80,
            dropout: 0.0,
            d_pe: 4,
            expert_activation: Activation::LeakyRelu(0.01),
            gate_noise: true,
            mlp_hidden: vec![80, 40],
            gcn_hidden: vec![80, 40],
        }
    }
}

impl ModelConfig {
    pub fn with_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        };
        positive("d_model", self.d_model);
        positive("heads", self.heads);
        positive("layers", self.layers);
        positive("n_experts", self.n_experts);
        positive("d_expert", self.d_expert);
        positive("d_ffn", self.d_ffn);
        positive("d_pe", self.d_pe);
        if self.heads > 0 && !self.d_model.is_multiple_of(self.heads) {
            out.push(format!("heads {} must divide d_model {}", self.heads, self.d_model));
        }
        if self.d_model == 1 {
            out.push("d_model must be at least 2 for layer norm".into());
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            out.push(format!(
                "top_k {} must lie in 1..={}",
                self.top_k, self.n_experts
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.d_pe >= 6 {
            out.push(format!("d_pe {} must be below 6 (smallest graph)", self.d_pe));
        }
        if self.mlp_hidden.contains(&0) || self.gcn_hidden.contains(&0) {
            out.push("hidden widths must be positive".into());
        }
        if self.gcn_hidden.is_empty() {
            out.push("gcn_hidden needs at least one layer".into());
        }
        out
    }

    /// Width of one input row: features plus positional encoding.
    pub fn input_width(&self) -> usize {
        crate::data::N_FEATURES + self.d_pe
    }
}
