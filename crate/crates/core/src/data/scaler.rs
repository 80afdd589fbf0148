use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, EventGraph, NodeKind, MAX_NODES, N_FEATURES};

/// Per (node kind, feature) z-scoring fitted on training nodes.
/// Undefined cells carry mean 0 and std 1, so scaling leaves them at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: [[f64; N_FEATURES]; MAX_NODES],
    pub std: [[f64; N_FEATURES]; MAX_NODES],
}

#[derive(Serialize, Deserialize)]
struct ScalerFile {
    mean: BTreeMap<String, [f64; N_FEATURES]>,
    std: BTreeMap<String, [f64; N_FEATURES]>,
}

impl FeatureScaler {
    pub fn identity() -> Self {
        Self {
            mean: [[0.0; N_FEATURES]; MAX_NODES],
            std: [[1.0; N_FEATURES]; MAX_NODES],
        }
    }

    /// Fits population mean/std per defined cell.
    pub fn fit(train: &[EventGraph]) -> Result<Self, DataError> {
        let mut count = [0usize; MAX_NODES];
        let mut sum = [[0.0; N_FEATURES]; MAX_NODES];
        for node in train.iter().flat_map(|e| &e.nodes) {
            let k = node.kind.index();
            count[k] += 1;
            for (s, v) in sum[k].iter_mut().zip(node.features) {
                *s += v;
            }
        }
        for kind in NodeKind::ALL {
            if count[kind.index()] < 2 {
                return Err(DataError::Scaler(format!(
                    "need at least 2 {kind} nodes, found {}",
                    count[kind.index()]
                )));
            }
        }
        let mut scaler = Self::identity();
        for kind in NodeKind::ALL {
            let k = kind.index();
            for f in 0..N_FEATURES {
                if kind.is_defined(f) {
                    scaler.mean[k][f] = sum[k][f] / count[k] as f64;
                }
            }
        }
        let mut sq = [[0.0; N_FEATURES]; MAX_NODES];
        for node in train.iter().flat_map(|e| &e.nodes) {
            let k = node.kind.index();
            for f in 0..N_FEATURES {
                let d = node.features[f] - scaler.mean[k][f];
                sq[k][f] += d * d;
            }
        }
        for kind in NodeKind::ALL {
            let k = kind.index();
            for f in 0..N_FEATURES {
                if !kind.is_defined(f) {
                    continue;
                }
                let std = (sq[k][f] / count[k] as f64).sqrt();
                if !(std > 0.0) {
                    return Err(DataError::Scaler(format!(
                        "zero variance in {kind}.F{}",
                        f + 1
                    )));
                }
                scaler.std[k][f] = std;
            }
        }
        Ok(scaler)
    }

    /// Standardized `N × 6` feature rows of one event.
    pub fn apply(&self, event: &EventGraph) -> Vec<[f64; N_FEATURES]> {
        event
            .nodes
            .iter()
            .map(|node| {
                let k = node.kind.index();
                let mut row = [0.0; N_FEATURES];
                for f in 0..N_FEATURES {
                    row[f] = (node.features[f] - self.mean[k][f]) / self.std[k][f];
                }
                row
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let file: ScalerFile = serde_json::from_str(text)?;
        Self::from_file(file).map_err(DataError::Scaler)
    }

    fn from_file(file: ScalerFile) -> Result<Self, String> {
        let mut scaler = Self::identity();
        for (grid, source) in [(&mut scaler.mean, &file.mean), (&mut scaler.std, &file.std)] {
            for kind in NodeKind::ALL {
                let row = source
                    .get(kind.name())
                    .ok_or_else(|| format!("missing node kind {kind}"))?;
                grid[kind.index()] = *row;
            }
        }
        if scaler.std.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err("non-positive std".into());
        }
        Ok(scaler)
    }

    fn to_file(&self) -> ScalerFile {
        let grid = |g: &[[f64; N_FEATURES]; MAX_NODES]| {
            NodeKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), g[k.index()]))
                .collect::<BTreeMap<_, _>>()
        };
        ScalerFile {
            mean: grid(&self.mean),
            std: grid(&self.std),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl Serialize for FeatureScaler {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureScaler {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::from_file(ScalerFile::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
