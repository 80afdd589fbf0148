use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::data::{EventGraph, FeatureMask};
use crate::training::{run_experiment, ExperimentConfig};

/// A named set of hidden feature cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub features: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub features: Vec<String>,
    pub auc: f64,
    /// Baseline AUC minus this group's AUC.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline_auc: f64,
    /// Sorted by `delta`, largest first.
    pub rows: Vec<AblationRow>,
}

/// Retrains the configured model once per group with the group's cells
/// zeroed in both sets and reports the test-AUC drop against an unmasked
/// baseline. AUCs are averaged over the configured seeds.
pub fn feature_ablation(
    config: &ExperimentConfig,
    train: &[EventGraph],
    test: &[EventGraph],
    groups: &[FeatureGroup],
) -> Result<AblationTable, ExplainError> {
    let masks = groups
        .iter()
        .map(|g| FeatureMask::from_names(&g.features).map_err(ExplainError::UnknownFeature))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline_auc = run_experiment(config, train, test, &FeatureMask::none())?.aggregate.mean.auc;
    let mut rows = Vec::with_capacity(groups.len());
    for (group, mask) in groups.iter().zip(&masks) {
        let auc = run_experiment(config, train, test, mask)?.aggregate.mean.auc;
        rows.push(AblationRow {
            group: group.name.clone(),
            features: group.features.clone(),
            auc,
            delta: baseline_auc - auc,
        });
    }
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    Ok(AblationTable { baseline_auc, rows })
}
