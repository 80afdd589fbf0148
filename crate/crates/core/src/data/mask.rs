use std::collections::BTreeSet;

use super::{NodeKind, MAX_NODES, N_FEATURES};

/// Set of hidden feature cells, named `"<kind>.F<n>"` (e.g. `"b1.F1"`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureMask {
    hidden: [[bool; N_FEATURES]; MAX_NODES],
}

impl FeatureMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Every defined cell of every node kind.
    pub fn all() -> Self {
        let mut m = Self::default();
        for kind in NodeKind::ALL {
            m.hidden[kind.index()] = kind.defined_features();
        }
        m
    }

    /// Parses cell names. In 6-node events `j1`/`j2` copy `b1`/`b2` on F1-F4,
    /// so hiding such a b-jet cell also hides its copy in those events; see
    /// [`FeatureMask::is_hidden`].
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, String> {
        let mut m = Self::default();
        for name in names {
            let (kind, feature) = parse_cell(name.as_ref())?;
            m.hidden[kind.index()][feature] = true;
        }
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.iter().flatten().all(|h| !h)
    }

    /// Whether `feature` of a `kind` node in an event of `n_nodes` is hidden.
    pub fn is_hidden(&self, kind: NodeKind, feature: usize, n_nodes: usize) -> bool {
        if self.hidden[kind.index()][feature] {
            return true;
        }
        let copy_of = match kind {
            NodeKind::J1 => NodeKind::B1,
            NodeKind::J2 => NodeKind::B2,
            _ => return false,
        };
        n_nodes == 6 && feature < 4 && self.hidden[copy_of.index()][feature]
    }

    pub fn names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for kind in NodeKind::ALL {
            for f in 0..N_FEATURES {
                if self.hidden[kind.index()][f] {
                    out.insert(format!("{kind}.F{}", f + 1));
                }
            }
        }
        out
    }
}

/// `"lepton.F1"` → `(Lepton, 0)`; only defined cells are accepted.
pub fn parse_cell(name: &str) -> Result<(NodeKind, usize), String> {
    let unknown = || format!("unknown feature {name:?}");
    let (kind, feature) = name.split_once('.').ok_or_else(unknown)?;
    let kind = NodeKind::from_name(kind).ok_or_else(unknown)?;
    let f: usize = feature
        .strip_prefix('F')
        .and_then(|n| n.parse().ok())
        .filter(|n| (1..=N_FEATURES).contains(n))
        .ok_or_else(unknown)?;
    if !kind.is_defined(f - 1) {
        return Err(format!("feature {name:?} is undefined for {kind}"));
    }
    Ok((kind, f - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defined_cells_only() {
        assert_eq!(parse_cell("b1.F5").unwrap(), (NodeKind::B1, 4));
        assert!(parse_cell("lepton.F4").is_err());
        assert!(parse_cell("muon.F1").is_err());
        assert!(parse_cell("b1.F7").is_err());
        assert!(parse_cell("b1F1").is_err());
    }

    #[test]
    fn b_jet_cells_reach_their_copies_in_six_node_events() {
        let m = FeatureMask::from_names(&["b1.F1"]).unwrap();
        assert!(m.is_hidden(NodeKind::J1, 0, 6));
        assert!(!m.is_hidden(NodeKind::J1, 0, 7));
        assert!(!m.is_hidden(NodeKind::J2, 0, 6));
        assert_eq!(m.names().into_iter().collect::<Vec<_>>(), vec!["b1.F1"]);
    }
}
