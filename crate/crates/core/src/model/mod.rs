//! Full classifiers: the mixture-of-experts graph transformer (MGT), the plain
//! graph transformer (GT), and the MLP and GCN baselines. All produce two
//! logits per event, class 1 being signal.

mod batch;
mod checkpoint;
mod config;

pub use batch::{prepare, prepare_all, Batch, BatchBuilder, PreparedEvent};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT};
pub use config::{ModelConfig, ModelKind};

use thiserror::Error;

use crate::layers::{
    attention_block, ffn, load_balance_loss, moe_forward, noisy_gate, AttentionLayerParams, Bound, ExpertParams,
    FfnParams, GateParams, LayerError, Linear, Norm, ParamStore, Routing,
};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("non-finite activation in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mixer {
    Moe {
        gate: GateParams,
        experts: Vec<ExpertParams>,
        norm: Norm,
    },
    Ffn {
        ffn: FfnParams,
        norm: Norm,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub attention: AttentionLayerParams,
    pub mixer: Mixer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    Transformer {
        input: Linear,
        layers: Vec<TransformerLayer>,
        head: Linear,
    },
    /// Hidden layers followed by the head.
    Mlp { layers: Vec<Linear> },
    Gcn { convs: Vec<Linear>, head: Linear },
}

/// Parameters plus the structure that uses them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub arch: Arch,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    /// `B × 2`.
    pub logits: Var,
    /// Sum of the load-balance terms of all MoE layers, when there are any.
    pub load_loss: Option<Var>,
    /// One routing per MoE layer.
    pub routings: Vec<Routing>,
    /// One attention node per transformer layer.
    pub attention: Vec<Var>,
    /// Final per-node rows before pooling (graph models only).
    pub node_states: Option<Var>,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut crate::Rng) -> Result<Self, ModelError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ModelError::Config(problems));
        }
        let mut store = ParamStore::new();
        let d = config.d_model;
        let arch = match config.kind {
            ModelKind::Mgt | ModelKind::Gt => {
                let input = Linear::new(&mut store, "input", config.input_width(), d, rng);
                let mut layers = Vec::with_capacity(config.layers);
                for l in 0..config.layers {
                    let name = format!("layer{l}");
                    let attention =
                        AttentionLayerParams::new(&mut store, &format!("{name}.attn"), d, config.heads, rng)?;
                    let mixer = if config.kind == ModelKind::Mgt {
                        let mut gate = GateParams::new(
                            &mut store,
                            &format!("{name}.gate"),
                            d,
                            config.n_experts,
                            config.top_k,
                            rng,
                        )?;
                        gate.training_noise = config.gate_noise;
                        let experts = (0..config.n_experts)
                            .map(|e| ExpertParams {
                                net: FfnParams::new(&mut store, &format!("{name}.expert{e}"), d, config.d_expert, rng),
                                dropout: config.dropout,
                            })
                            .collect();
                        Mixer::Moe {
                            gate,
                            experts,
                            norm: Norm::new(&mut store, &format!("{name}.moe_norm"), d),
                        }
                    } else {
                        Mixer::Ffn {
                            ffn: FfnParams::new(&mut store, &format!("{name}.ffn"), d, config.d_ffn, rng),
                            norm: Norm::new(&mut store, &format!("{name}.ffn_norm"), d),
                        }
                    };
                    layers.push(TransformerLayer { attention, mixer });
                }
                let head = Linear::new(&mut store, "head", d, 2, rng);
                Arch::Transformer { input, layers, head }
            }
            ModelKind::Mlp => {
                let mut width = crate::data::MAX_NODES * config.input_width();
                let mut layers = Vec::new();
                for (i, &h) in config.mlp_hidden.iter().enumerate() {
                    layers.push(Linear::new(&mut store, &format!("mlp{i}"), width, h, rng));
                    width = h;
                }
                layers.push(Linear::new(&mut store, "head", width, 2, rng));
                Arch::Mlp { layers }
            }
            ModelKind::Gcn => {
                let mut width = config.input_width();
                let mut convs = Vec::new();
                for (i, &h) in config.gcn_hidden.iter().enumerate() {
                    convs.push(Linear::new(&mut store, &format!("conv{i}"), width, h, rng));
                    width = h;
                }
                let head = Linear::new(&mut store, "head", width, 2, rng);
                Arch::Gcn { convs, head }
            }
        };
        Ok(Self { config, store, arch })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Runs the model on a batch. `training` enables gate noise and dropout;
    /// `rng` supplies their draws.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        training: bool,
        rng: &mut crate::Rng,
    ) -> Result<Forward, ModelError> {
        let mut load_loss: Option<Var> = None;
        let mut routings = Vec::new();
        let mut attention = Vec::new();
        let mut node_states = None;
        let logits = match &self.arch {
            Arch::Transformer { input, layers, head } => {
                let x = tape.constant(batch.x.clone());
                let mut h = input.forward(tape, p, x)?;
                for (l, layer) in layers.iter().enumerate() {
                    let att = attention_block(tape, p, h, &batch.segments, &layer.attention)?;
                    attention.push(att.scores);
                    check(tape, att.out, || format!("layer {l} attention"))?;
                    h = match &layer.mixer {
                        Mixer::Moe { gate, experts, norm } => {
                            let routing = noisy_gate(tape, p, att.out, gate, training, rng)?;
                            let y = moe_forward(
                                tape,
                                p,
                                att.out,
                                &routing,
                                experts,
                                self.config.expert_activation,
                                training,
                                rng,
                            )?;
                            let loss = load_balance_loss(tape, &routing, 1.0)?;
                            load_loss = Some(match load_loss {
                                Some(acc) => tape.add(acc, loss)?,
                                None => loss,
                            });
                            routings.push(routing);
                            let sum = tape.add(att.out, y)?;
                            norm.forward(tape, p, sum)?
                        }
                        Mixer::Ffn { ffn: params, norm } => {
                            let y = ffn(tape, p, att.out, params)?;
                            let sum = tape.add(att.out, y)?;
                            norm.forward(tape, p, sum)?
                        }
                    };
                    check(tape, h, || format!("layer {l} feed-forward"))?;
                }
                node_states = Some(h);
                let pooled = tape.segment_mean(h, &batch.segments)?;
                head.forward(tape, p, pooled)?
            }
            Arch::Mlp { layers } => {
                let mut h = tape.constant(batch.padded());
                let (last, hidden) = layers.split_last().expect("mlp has a head");
                for (i, layer) in hidden.iter().enumerate() {
                    let z = layer.forward(tape, p, h)?;
                    h = tape.relu(z);
                    check(tape, h, || format!("mlp layer {i}"))?;
                }
                last.forward(tape, p, h)?
            }
            Arch::Gcn { convs, head } => {
                let mut h = tape.constant(batch.x.clone());
                for (i, conv) in convs.iter().enumerate() {
                    let agg = tape.neighbor_mean(h, &batch.segments)?;
                    let z = conv.forward(tape, p, agg)?;
                    h = tape.relu(z);
                    check(tape, h, || format!("gcn layer {i}"))?;
                }
                node_states = Some(h);
                let pooled = tape.segment_mean(h, &batch.segments)?;
                head.forward(tape, p, pooled)?
            }
        };
        check(tape, logits, || "head".into())?;
        Ok(Forward {
            logits,
            load_loss,
            routings,
            attention,
            node_states,
        })
    }

    /// Signal probability for every event, inference mode.
    pub fn predict(&self, events: &[PreparedEvent], batch_size: usize) -> Result<Vec<f64>, ModelError> {
        let builder = BatchBuilder::new(self.config.d_pe);
        let mut rng = crate::seeded_rng(0);
        let mut scores = Vec::with_capacity(events.len());
        for chunk in events.chunks(batch_size.max(1)) {
            let refs: Vec<&PreparedEvent> = chunk.iter().collect();
            let batch = builder.build(&refs, None);
            let mut tape = Tape::new();
            let p = self.store.bind_constant(&mut tape);
            let fwd = self.forward(&mut tape, &p, &batch, false, &mut rng)?;
            let probs = tape.value(fwd.logits).softmax_rows();
            scores.extend((0..probs.rows()).map(|r| probs.get(r, 1)));
        }
        Ok(scores)
    }
}

fn check(tape: &Tape, v: Var, place: impl FnOnce() -> String) -> Result<(), ModelError> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite(place()))
    }
}

/// Total and parts of the training objective.
pub struct Loss {
    pub total: Var,
    pub cross_entropy: Var,
    pub load: Option<Var>,
}

/// `cross_entropy + w_load · Σ_layers L_load`.
pub fn training_loss(tape: &mut Tape, fwd: &Forward, labels: &[usize], w_load: f64) -> Result<Loss, ModelError> {
    let ce = tape.cross_entropy(fwd.logits, labels)?;
    let total = match fwd.load_loss {
        Some(load) if w_load != 0.0 => {
            let weighted = tape.scale(load, w_load);
            tape.add(ce, weighted)?
        }
        _ => ce,
    };
    Ok(Loss {
        total,
        cross_entropy: ce,
        load: fwd.load_loss,
    })
}
