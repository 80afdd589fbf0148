use crate::data::NodeKind;
use crate::layers::{attention_records, AttentionRecord};
use crate::model::{BatchBuilder, Model, ModelError, PreparedEvent};
use crate::tensor::Tape;

/// Inference-mode outputs of a model over a set of events.
pub struct Inspection {
    /// Signal probability per event.
    pub scores: Vec<f64>,
    /// Attention of every (layer, head, event); `event` indexes the input.
    pub attention: Vec<AttentionRecord>,
    /// `routing[layer][node]`: selected experts and their gate values.
    pub routing: Vec<Vec<NodeRouting>>,
    /// Node kind of every node, in input order.
    pub kinds: Vec<NodeKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRouting {
    pub selected: Vec<usize>,
    pub gates: Vec<f64>,
}

pub fn inspect(model: &Model, events: &[PreparedEvent], batch_size: usize) -> Result<Inspection, ModelError> {
    let builder = BatchBuilder::new(model.config.d_pe);
    let mut rng = crate::seeded_rng(0);
    let mut out = Inspection {
        scores: Vec::with_capacity(events.len()),
        attention: Vec::new(),
        routing: Vec::new(),
        kinds: Vec::new(),
    };
    let mut offset = 0;
    for chunk in events.chunks(batch_size.max(1)) {
        let batch = builder.build(&chunk.iter().collect::<Vec<_>>(), None);
        let mut tape = Tape::new();
        let p = model.store.bind_constant(&mut tape);
        let fwd = model.forward(&mut tape, &p, &batch, false, &mut rng)?;
        let probs = tape.value(fwd.logits).softmax_rows();
        out.scores.extend((0..probs.rows()).map(|r| probs.get(r, 1)));
        for (layer, &scores) in fwd.attention.iter().enumerate() {
            for mut rec in attention_records(&tape, scores, layer) {
                rec.event += offset;
                out.attention.push(rec);
            }
        }
        if out.routing.len() < fwd.routings.len() {
            out.routing.resize(fwd.routings.len(), Vec::new());
        }
        for (layer, routing) in fwd.routings.iter().enumerate() {
            let gates = tape.value(routing.gates);
            for r in 0..routing.rows() {
                out.routing[layer].push(NodeRouting {
                    selected: routing.selected_for(r).to_vec(),
                    gates: gates.row(r).to_vec(),
                });
            }
        }
        out.kinds.extend_from_slice(&batch.kinds);
        offset += chunk.len();
    }
    Ok(out)
}
