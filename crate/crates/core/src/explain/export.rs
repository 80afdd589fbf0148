use std::path::{Path, PathBuf};

use super::{delta_r_bb, invariant_mass_bb, AttentionSummary, ExplainError, SpecializationTable};
use crate::data::{EventGraph, NodeKind};

/// Pixels per matrix cell in heatmap images.
pub const CELL_PX: usize = 32;

pub const ATTENTION_HEADER: &str = "layer,head,n_nodes,row_kind,col_kind,weight";

pub fn attention_csv(summaries: &[AttentionSummary]) -> String {
    let mut out = format!("{ATTENTION_HEADER}\n");
    for s in summaries {
        for (r, rk) in s.kinds.iter().enumerate() {
            for (c, ck) in s.kinds.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{rk},{ck},{}\n",
                    s.layer,
                    s.head,
                    s.n_nodes,
                    s.get(r, c)
                ));
            }
        }
    }
    out
}

/// Parses [`attention_csv`] output; event counts are not stored and come
/// back as 0.
pub fn parse_attention_csv(text: &str) -> Result<Vec<AttentionSummary>, ExplainError> {
    let mut lines = text.lines();
    if lines.next() != Some(ATTENTION_HEADER) {
        return Err(ExplainError::Csv("missing attention header".into()));
    }
    let mut out: Vec<AttentionSummary> = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || ExplainError::Csv(format!("line {}: {line:?}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let layer: usize = f[0].parse().map_err(|_| bad())?;
        let head: usize = f[1].parse().map_err(|_| bad())?;
        let n: usize = f[2].parse().map_err(|_| bad())?;
        let weight: f64 = f[5].parse().map_err(|_| bad())?;
        let kinds = NodeKind::layout(n).ok_or_else(bad)?;
        let (row, col) = (
            kinds.iter().position(|k| k.name() == f[3]).ok_or_else(bad)?,
            kinds.iter().position(|k| k.name() == f[4]).ok_or_else(bad)?,
        );
        let fresh = !matches!(out.last(), Some(s) if (s.layer, s.head, s.n_nodes) == (layer, head, n));
        if fresh {
            out.push(AttentionSummary {
                layer,
                head,
                n_nodes: n,
                kinds: kinds.to_vec(),
                weights: vec![0.0; n * n],
                n_events: 0,
            });
        }
        out.last_mut().expect("pushed").weights[row * n + col] = weight;
    }
    Ok(out)
}

/// Binary greyscale image (P5), min-max normalized over the matrix, brighter
/// meaning more attention. A constant matrix renders as uniform mid-grey.
pub fn heatmap_pgm(summary: &AttentionSummary) -> Vec<u8> {
    let n = summary.n_nodes;
    let side = n * CELL_PX;
    let min = summary.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max = summary.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = |w: f64| -> u8 {
        if max > min {
            ((w - min) / (max - min) * 255.0).round() as u8
        } else {
            128
        }
    };
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            out.push(level(summary.get(py / CELL_PX, px / CELL_PX)));
        }
    }
    out
}

pub fn heatmap_file_name(s: &AttentionSummary) -> String {
    format!("attention_l{}_h{}_n{}.pgm", s.layer, s.head, s.n_nodes)
}

/// Writes `attention.csv` and one image per summary into `dir`.
pub fn export_heatmaps(summaries: &[AttentionSummary], dir: &Path) -> Result<Vec<PathBuf>, ExplainError> {
    let mut written = vec![write(dir.join("attention.csv"), attention_csv(summaries).as_bytes())?];
    for s in summaries {
        written.push(write(dir.join(heatmap_file_name(s)), &heatmap_pgm(s))?);
    }
    Ok(written)
}

pub fn specialization_csv(table: &SpecializationTable) -> String {
    let mut out = String::from("layer,expert,node_kind,count\n");
    for layer in 0..table.layers() {
        for expert in 0..table.n_experts {
            for kind in NodeKind::ALL {
                out.push_str(&format!("{layer},{expert},{kind},{}\n", table.count(layer, expert, kind)));
            }
        }
    }
    out
}

pub fn export_bars(table: &SpecializationTable, dir: &Path) -> Result<PathBuf, ExplainError> {
    write(dir.join("specialization.csv"), specialization_csv(table).as_bytes())
}

/// Per-event b-pair ΔR and invariant mass against the model score.
pub fn diagnostics_csv(events: &[EventGraph], scores: &[f64]) -> String {
    let mut out = String::from("event,label,score,delta_r_bb,m_bb\n");
    for (i, (e, s)) in events.iter().zip(scores).enumerate() {
        let label = match e.label {
            crate::data::Label::Signal => "signal",
            crate::data::Label::Background => "background",
        };
        out.push_str(&format!("{i},{label},{s},{},{}\n", delta_r_bb(e), invariant_mass_bb(e)));
    }
    out
}

pub(crate) fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf, ExplainError> {
    std::fs::write(&path, bytes).map_err(|source| ExplainError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
