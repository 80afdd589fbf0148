use crate::data::{flip_signs, laplacian_pe, EventGraph, FeatureMask, FeatureScaler, Label, NodeKind, MAX_NODES, N_FEATURES};
use crate::tensor::{Segment, Tensor};

/// An event after standardization and feature hiding.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedEvent {
    pub rows: Vec<[f64; N_FEATURES]>,
    pub kinds: Vec<NodeKind>,
    pub label: Label,
}

pub fn prepare(event: &EventGraph, scaler: &FeatureScaler, mask: &FeatureMask) -> PreparedEvent {
    let n = event.n_nodes();
    let mut rows = scaler.apply(event);
    for (row, kind) in rows.iter_mut().zip(event.kinds()) {
        for (f, v) in row.iter_mut().enumerate() {
            if mask.is_hidden(kind, f, n) {
                *v = 0.0;
            }
        }
    }
    PreparedEvent {
        rows,
        kinds: event.kinds().collect(),
        label: event.label,
    }
}

pub fn prepare_all(events: &[EventGraph], scaler: &FeatureScaler, mask: &FeatureMask) -> Vec<PreparedEvent> {
    events.iter().map(|e| prepare(e, scaler, mask)).collect()
}

/// Node rows of several events stacked into one matrix.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `R × (6 + d_pe)`: standardized features then positional encoding.
    pub x: Tensor,
    pub segments: Vec<Segment>,
    pub labels: Vec<usize>,
    /// Node kind of each row.
    pub kinds: Vec<NodeKind>,
}

impl Batch {
    pub fn n_events(&self) -> usize {
        self.segments.len()
    }

    /// `B × 7·(6 + d_pe)`: each event's rows placed by node kind, absent
    /// kinds left as zero rows.
    pub fn padded(&self) -> Tensor {
        let w = self.x.cols();
        let mut data = vec![0.0; self.segments.len() * MAX_NODES * w];
        for (b, &(start, n)) in self.segments.iter().enumerate() {
            for r in start..start + n {
                let slot = self.kinds[r].index();
                let at = (b * MAX_NODES + slot) * w;
                data[at..at + w].copy_from_slice(self.x.row(r));
            }
        }
        Tensor::matrix(self.segments.len(), MAX_NODES * w, data).expect("finite batch")
    }
}

/// Builds batches, appending cached Laplacian encodings to each event.
#[derive(Clone, Debug)]
pub struct BatchBuilder {
    d_pe: usize,
    pe6: Tensor,
    pe7: Tensor,
}

impl BatchBuilder {
    pub fn new(d_pe: usize) -> Self {
        Self {
            d_pe,
            pe6: laplacian_pe(6, d_pe).vectors,
            pe7: laplacian_pe(7, d_pe).vectors,
        }
    }

    /// PE signs are flipped at random per event when `rng` is given.
    pub fn build(&self, events: &[&PreparedEvent], mut rng: Option<&mut crate::Rng>) -> Batch {
        let w = N_FEATURES + self.d_pe;
        let total: usize = events.iter().map(|e| e.rows.len()).sum();
        let mut data = Vec::with_capacity(total * w);
        let mut segments = Vec::with_capacity(events.len());
        let mut kinds = Vec::with_capacity(total);
        let mut start = 0;
        for e in events {
            let n = e.rows.len();
            let mut pe = if n == 6 { self.pe6.clone() } else { self.pe7.clone() };
            if let Some(rng) = rng.as_deref_mut() {
                flip_signs(&mut pe, rng);
            }
            for (r, row) in e.rows.iter().enumerate() {
                data.extend_from_slice(row);
                data.extend_from_slice(pe.row(r));
            }
            kinds.extend_from_slice(&e.kinds);
            segments.push((start, n));
            start += n;
        }
        Batch {
            x: Tensor::matrix(total, w, data).expect("finite batch"),
            segments,
            labels: events.iter().map(|e| e.label.class()).collect(),
            kinds,
        }
    }
}
