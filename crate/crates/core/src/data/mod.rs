//! Event graphs: one collision event per graph, one row of six kinematic
//! features per reconstructed object.
//!
//! Feature columns: `F1` pT (or ETmiss for the energy node), `F2` η, `F3` φ,
//! `F4` b-tag quantile, `F5` jet mass, `F6` ETmiss significance. Cells that
//! are not defined for a node kind hold exactly 0.

mod io;
mod mask;
mod pe;
mod scaler;
mod split;
mod synth;

pub use mask::{parse_cell, FeatureMask};
pub use io::{read_events, read_events_from_str, write_events, write_events_to_string};
pub use pe::{complete_graph_laplacian, flip_signs, laplacian_pe, PositionalEncoding};
pub use scaler::FeatureScaler;
pub use split::split;
pub use synth::{generate_synthetic, generate_with, GeneratorConfig};

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_FEATURES: usize = 6;
pub const MAX_NODES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    J1,
    J2,
    J3,
    B1,
    B2,
    Lepton,
    Energy,
}

impl NodeKind {
    /// Canonical order; 6-node events omit `J3`.
    pub const ALL: [NodeKind; 7] = [
        NodeKind::J1,
        NodeKind::J2,
        NodeKind::J3,
        NodeKind::B1,
        NodeKind::B2,
        NodeKind::Lepton,
        NodeKind::Energy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::J1 => "j1",
            NodeKind::J2 => "j2",
            NodeKind::J3 => "j3",
            NodeKind::B1 => "b1",
            NodeKind::B2 => "b2",
            NodeKind::Lepton => "lepton",
            NodeKind::Energy => "energy",
        }
    }

    pub fn from_name(name: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Which of F1..F6 carry a physical value for this kind.
    pub fn defined_features(self) -> [bool; N_FEATURES] {
        match self {
            NodeKind::J1 | NodeKind::J2 | NodeKind::J3 => [true, true, true, true, false, false],
            NodeKind::B1 | NodeKind::B2 => [true, true, true, true, true, false],
            NodeKind::Lepton => [true, true, true, false, false, false],
            NodeKind::Energy => [true, false, true, false, false, true],
        }
    }

    pub fn is_defined(self, feature: usize) -> bool {
        self.defined_features()[feature]
    }

    /// Node kinds present in an event with `n` nodes.
    pub fn layout(n: usize) -> Option<&'static [NodeKind]> {
        const SIX: [NodeKind; 6] = [
            NodeKind::J1,
            NodeKind::J2,
            NodeKind::B1,
            NodeKind::B2,
            NodeKind::Lepton,
            NodeKind::Energy,
        ];
        match n {
            6 => Some(&SIX),
            7 => Some(&NodeKind::ALL),
            _ => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Signal,
    Background,
}

impl Label {
    /// Class index used by the classifiers; signal is the positive class.
    pub fn class(self) -> usize {
        match self {
            Label::Signal => 1,
            Label::Background => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Ttbar,
    Singletop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    #[serde(rename = "f")]
    pub features: [f64; N_FEATURES],
}

impl Node {
    pub fn pt(&self) -> f64 {
        self.features[0]
    }
    pub fn eta(&self) -> f64 {
        self.features[1]
    }
    pub fn phi(&self) -> f64 {
        self.features[2]
    }
    pub fn mass(&self) -> f64 {
        self.features[4]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    pub label: Label,
    #[serde(rename = "bkg_kind")]
    pub background_kind: Option<BackgroundKind>,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("node count {0} is not 6 or 7")]
    NodeCount(usize),
    #[error("node {position} is {found}, expected {expected} (canonical order)")]
    NodeOrder {
        position: usize,
        found: NodeKind,
        expected: NodeKind,
    },
    #[error("{kind}.F{} is undefined and must be 0, got {value}", .feature + 1)]
    UndefinedCell {
        kind: NodeKind,
        feature: usize,
        value: f64,
    },
    #[error("{kind}.F{} is not finite", .feature + 1)]
    NonFinite { kind: NodeKind, feature: usize },
    #[error("{kind} phi {value} outside (-pi, pi]")]
    PhiRange { kind: NodeKind, value: f64 },
    #[error("{kind} transverse momentum {value} is negative")]
    NegativeMomentum { kind: NodeKind, value: f64 },
    #[error("{kind} quantile {value} outside [0, 1]")]
    QuantileRange { kind: NodeKind, value: f64 },
    #[error("signal event carries a background kind")]
    SignalWithBackgroundKind,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: file is not valid UTF-8")]
    Utf8 { path: PathBuf },
    #[error("{} invalid line(s); first: line {}: {}", .0.len(), .0[0].line, .0[0].message)]
    Lines(Vec<LineError>),
    #[error("scaler: {0}")]
    Scaler(String),
    #[error("split: {0}")]
    Split(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl EventGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, kind: NodeKind) -> Option<&Node> {
        self.nodes.iter().find(|n| n.kind == kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = NodeKind> + '_ {
        self.nodes.iter().map(|n| n.kind)
    }

    pub fn validate(&self) -> Result<(), EventError> {
        let layout = NodeKind::layout(self.nodes.len())
            .ok_or(EventError::NodeCount(self.nodes.len()))?;
        if self.label == Label::Signal && self.background_kind.is_some() {
            return Err(EventError::SignalWithBackgroundKind);
        }
        for (position, (node, &expected)) in self.nodes.iter().zip(layout).enumerate() {
            if node.kind != expected {
                return Err(EventError::NodeOrder {
                    position,
                    found: node.kind,
                    expected,
                });
            }
            let kind = node.kind;
            for (feature, (&value, defined)) in node
                .features
                .iter()
                .zip(kind.defined_features())
                .enumerate()
            {
                if !value.is_finite() {
                    return Err(EventError::NonFinite { kind, feature });
                }
                if !defined && value != 0.0 {
                    return Err(EventError::UndefinedCell {
                        kind,
                        feature,
                        value,
                    });
                }
            }
            let [pt, _, phi, q, _, _] = node.features;
            if pt < 0.0 {
                return Err(EventError::NegativeMomentum { kind, value: pt });
            }
            if !(phi > -PI && phi <= PI) {
                return Err(EventError::PhiRange { kind, value: phi });
            }
            if kind.is_defined(3) && !(0.0..=1.0).contains(&q) {
                return Err(EventError::QuantileRange { kind, value: q });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn six_node_signal() -> EventGraph {
        let b1 = [120.0, 0.3, 1.0, 0.9, 15.0, 0.0];
        let b2 = [60.0, -0.2, 2.0, 0.8, 10.0, 0.0];
        let jet = |f: [f64; 6]| [f[0], f[1], f[2], f[3], 0.0, 0.0];
        EventGraph {
            label: Label::Signal,
            background_kind: None,
            nodes: vec![
                Node { kind: NodeKind::J1, features: jet(b1) },
                Node { kind: NodeKind::J2, features: jet(b2) },
                Node { kind: NodeKind::B1, features: b1 },
                Node { kind: NodeKind::B2, features: b2 },
                Node { kind: NodeKind::Lepton, features: [40.0, 0.5, -1.0, 0.0, 0.0, 0.0] },
                Node { kind: NodeKind::Energy, features: [150.0, 0.0, 3.0, 0.0, 0.0, 8.0] },
            ],
        }
    }

    #[test]
    fn valid_event_passes() {
        six_node_signal().validate().unwrap();
    }

    #[test]
    fn detects_each_invariant() {
        let mut e = six_node_signal();
        e.nodes.pop();
        assert!(matches!(e.validate(), Err(EventError::NodeCount(5))));

        let mut e = six_node_signal();
        e.nodes.swap(0, 2);
        assert!(matches!(e.validate(), Err(EventError::NodeOrder { .. })));

        let mut e = six_node_signal();
        e.nodes[4].features[3] = 0.5;
        assert!(matches!(e.validate(), Err(EventError::UndefinedCell { .. })));

        let mut e = six_node_signal();
        e.nodes[2].features[2] = -PI;
        assert!(matches!(e.validate(), Err(EventError::PhiRange { .. })));
        e.nodes[2].features[2] = PI;
        e.validate().unwrap();

        let mut e = six_node_signal();
        e.nodes[3].features[3] = 1.5;
        assert!(matches!(e.validate(), Err(EventError::QuantileRange { .. })));

        let mut e = six_node_signal();
        e.nodes[5].features[0] = -1.0;
        assert!(matches!(e.validate(), Err(EventError::NegativeMomentum { .. })));

        let mut e = six_node_signal();
        e.background_kind = Some(BackgroundKind::Ttbar);
        assert!(e.validate().is_err());
    }

    #[test]
    fn node_kind_names_round_trip() {
        for k in NodeKind::ALL {
            assert_eq!(NodeKind::from_name(k.name()), Some(k));
        }
        assert_eq!(NodeKind::from_name("muon"), None);
    }
}
