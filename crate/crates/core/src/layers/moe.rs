use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Bound, LayerError, Linear, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Stand-in for −∞ in [`keep_top_k`].
pub const NEG_LARGE: f64 = -1e30;

static ZERO_LOAD_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of load-balance evaluations that met an all-zero expert load.
pub fn zero_load_warnings() -> u64 {
    ZERO_LOAD_WARNINGS.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
        }
    }
}

/// Two-layer position-wise network; used both as the transformer FFN and as
/// one expert.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfnParams {
    pub first: Linear,
    pub second: Linear,
}

impl FfnParams {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, hidden: usize, rng: &mut crate::Rng) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.w1"), d_model, hidden, rng),
            second: Linear::new(store, &format!("{name}.w2"), hidden, d_model, rng),
        }
    }
}

/// `W_2·act(W_1·x + β_1) + β_2`, row-wise.
pub fn ffn_with(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    params: &FfnParams,
    activation: Activation,
) -> Result<Var, LayerError> {
    let h = params.first.forward(tape, p, x)?;
    let h = activation.apply(tape, h);
    params.second.forward(tape, p, h)
}

/// The transformer feed-forward block with ReLU.
pub fn ffn(tape: &mut Tape, p: &Bound, x: Var, params: &FfnParams) -> Result<Var, LayerError> {
    ffn_with(tape, p, x, params, Activation::Relu)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertParams {
    pub net: FfnParams,
    pub dropout: f64,
}

/// `Dropout(W_2·act(W_1·x + β_1) + β_2)`.
pub fn expert_forward(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    expert: &ExpertParams,
    activation: Activation,
    training: bool,
    rng: &mut crate::Rng,
) -> Result<Var, LayerError> {
    let y = ffn_with(tape, p, x, &expert.net, activation)?;
    Ok(tape.dropout(y, expert.dropout, training, rng)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    pub w_g: ParamId,
    pub w_noise: ParamId,
    pub n_experts: usize,
    pub k: usize,
    pub training_noise: bool,
}

impl GateParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_experts: usize,
        k: usize,
        rng: &mut crate::Rng,
    ) -> Result<Self, LayerError> {
        if k == 0 || k > n_experts {
            return Err(LayerError::TopK { k, n: n_experts });
        }
        Ok(Self {
            w_g: store.glorot(format!("{name}.w_g"), d_model, n_experts, rng),
            w_noise: store.glorot(format!("{name}.w_noise"), d_model, n_experts, rng),
            n_experts,
            k,
            training_noise: true,
        })
    }
}

/// Routing of one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub gates: Vec<f64>,
    pub selected: Vec<usize>,
    pub logits: Vec<f64>,
    pub clean_logits: Vec<f64>,
    /// Standard-normal draws; absent at inference.
    pub noise: Option<Vec<f64>>,
}

/// Gate output for a whole batch of nodes.
pub struct Routing {
    pub n_experts: usize,
    pub k: usize,
    /// `R × n` clean logits `x·W_g`.
    pub clean: Var,
    /// `R × n` logits `H(x)` used for selection.
    pub noisy: Var,
    /// `R × n` noise scale `softplus(x·W_noise)`.
    pub noise_std: Var,
    /// `R × n` gate values `G(x)`.
    pub gates: Var,
    /// `R × k` selected experts, best first.
    pub selected: Vec<usize>,
    noise: Option<Tensor>,
}

impl Routing {
    pub fn rows(&self) -> usize {
        self.selected.len() / self.k
    }

    pub fn selected_for(&self, row: usize) -> &[usize] {
        &self.selected[row * self.k..(row + 1) * self.k]
    }

    pub fn record(&self, tape: &Tape, row: usize) -> RoutingRecord {
        RoutingRecord {
            gates: tape.value(self.gates).row(row).to_vec(),
            selected: self.selected_for(row).to_vec(),
            logits: tape.value(self.noisy).row(row).to_vec(),
            clean_logits: tape.value(self.clean).row(row).to_vec(),
            noise: self.noise.as_ref().map(|t| t.row(row).to_vec()),
        }
    }
}

/// Keeps the `k` largest entries of `v` and replaces the rest with
/// [`NEG_LARGE`]; ties go to the lower index.
pub fn keep_top_k(v: &[f64], k: usize) -> Result<Vec<f64>, LayerError> {
    if k == 0 || k > v.len() {
        return Err(LayerError::TopK { k, n: v.len() });
    }
    let mut out = vec![NEG_LARGE; v.len()];
    for &i in &top_k_indices(v, k) {
        out[i] = v[i];
    }
    Ok(out)
}

/// Indices of the `k` largest entries, largest first, ties to the lower index.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k`-th largest entry of `h` with index `i` removed.
pub fn kth_excluding(h: &[f64], k: usize, i: usize) -> Result<f64, LayerError> {
    if i >= h.len() || k == 0 || k >= h.len() {
        return Err(LayerError::TopK { k, n: h.len().saturating_sub(1) });
    }
    let mut rest: Vec<f64> = h
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    rest.sort_by(|a, b| b.total_cmp(a));
    Ok(rest[k - 1])
}

/// Noisy top-k gate over every row of `x`. Noise is drawn only when
/// `training` and the gate has noise enabled.
pub fn noisy_gate(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    gate: &GateParams,
    training: bool,
    rng: &mut crate::Rng,
) -> Result<Routing, LayerError> {
    let (n, k) = (gate.n_experts, gate.k);
    let clean = tape.matmul(x, p.var(gate.w_g))?;
    let raw_std = tape.matmul(x, p.var(gate.w_noise))?;
    let noise_std = tape.softplus(raw_std);
    let rows = tape.value(clean).rows();
    let (noisy, noise) = if training && gate.training_noise {
        let draws: Vec<f64> = (0..rows * n).map(|_| StandardNormal.sample(rng)).collect();
        let eps = Tensor::matrix(rows, n, draws)?;
        let scaled = tape.mul_const(noise_std, eps.clone())?;
        (tape.add(clean, scaled)?, Some(eps))
    } else {
        (clean, None)
    };
    let h = tape.value(noisy);
    let mut keep = vec![false; rows * n];
    let mut selected = Vec::with_capacity(rows * k);
    for r in 0..rows {
        let top = top_k_indices(h.row(r), k);
        for &i in &top {
            keep[r * n + i] = true;
        }
        selected.extend(top);
    }
    let gates = tape.masked_softmax(noisy, &keep)?;
    Ok(Routing {
        n_experts: n,
        k,
        clean,
        noisy,
        noise_std,
        gates,
        selected,
        noise,
    })
}

#[allow(clippy::too_many_arguments)]
/// `Σ_{i ∈ top-k} G_i(x)·E_i(x)`, evaluating each expert only on the rows
/// routed to it.
pub fn moe_forward(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    routing: &Routing,
    experts: &[ExpertParams],
    activation: Activation,
    training: bool,
    rng: &mut crate::Rng,
) -> Result<Var, LayerError> {
    if experts.len() != routing.n_experts {
        return Err(LayerError::Internal(format!(
            "{} experts for a gate over {}",
            experts.len(),
            routing.n_experts
        )));
    }
    let rows = routing.rows();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); experts.len()];
    for r in 0..rows {
        for &e in routing.selected_for(r) {
            members
                .get_mut(e)
                .ok_or_else(|| LayerError::Internal(format!("selected expert {e} out of range")))?
                .push(r);
        }
    }
    let mut total: Option<Var> = None;
    for (e, idx) in members.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let xs = tape.gather_rows(x, idx.clone())?;
        let y = expert_forward(tape, p, xs, &experts[e], activation, training, rng)?;
        let g = tape.gather_col(routing.gates, idx.clone(), e)?;
        let y = tape.mul_col(y, g)?;
        let y = tape.scatter_rows(y, idx, rows)?;
        total = Some(match total {
            Some(t) => tape.add(t, y)?,
            None => y,
        });
    }
    total.ok_or_else(|| LayerError::Internal("no expert received any row".into()))
}

/// `w_load · CV(Load)²` with `Load_i = Σ_x P(x, i)` over all rows of the
/// batch. Zero when routing is deterministic (`k ≥ n`).
pub fn load_balance_loss(tape: &mut Tape, routing: &Routing, w_load: f64) -> Result<Var, LayerError> {
    if routing.k >= routing.n_experts {
        return Ok(tape.constant(Tensor::zeros(1, 1)));
    }
    let probs = tape.load_probs(routing.clean, routing.noisy, routing.noise_std, routing.k)?;
    let load = tape.column_sum(probs);
    if tape.value(load).sum() == 0.0 {
        ZERO_LOAD_WARNINGS.fetch_add(1, Ordering::Relaxed);
    }
    let cv = tape.cv_squared(load);
    Ok(tape.scale(cv, w_load))
}
