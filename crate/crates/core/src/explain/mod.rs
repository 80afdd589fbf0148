//! Explainability analyses over trained models: subset-averaged attention
//! maps, expert specialization counts, feature-hiding ablation, and b-pair
//! kinematic diagnostics.

mod ablation;
mod attention;
mod export;
mod inspect;
mod physics;
mod specialization;

pub use ablation::{feature_ablation, AblationRow, AblationTable, FeatureGroup};
pub use attention::{aggregate_attention, average_records, AttentionSummary, Subset, SubsetSelector};
pub use export::{
    attention_csv, diagnostics_csv, export_bars, export_heatmaps, heatmap_file_name, heatmap_pgm,
    parse_attention_csv, specialization_csv, ATTENTION_HEADER, CELL_PX,
};
pub use inspect::{inspect, Inspection, NodeRouting};
pub use physics::{clamped_mass_count, delta_r, delta_r_bb, invariant_mass, invariant_mass_bb, wrapped_delta_phi};
pub use specialization::{expert_specialization, SpecializationTable};

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("subset {0} selects no events")]
    EmptySubset(String),
    #[error("model {0} has no expert layers")]
    NoExperts(String),
    #[error("{0}")]
    UnknownFeature(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}
