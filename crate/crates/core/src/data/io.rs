use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, EventGraph, LineError};

/// Reads one event per line, validating each. All invalid lines are reported.
pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventGraph>, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| DataError::Utf8 {
        path: path.to_path_buf(),
    })?;
    read_events_from_str(&text)
}

pub fn read_events_from_str(text: &str) -> Result<Vec<EventGraph>, DataError> {
    let mut events = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<EventGraph>(line)
            .map_err(|e| e.to_string())
            .and_then(|event| event.validate().map(|()| event).map_err(|e| e.to_string()));
        match parsed {
            Ok(event) => events.push(event),
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(events)
    } else {
        Err(DataError::Lines(errors))
    }
}

pub fn write_events_to_string(events: &[EventGraph]) -> Result<String, DataError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventGraph]) -> Result<(), DataError> {
    let path = path.as_ref();
    let text = write_events_to_string(events)?;
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::six_node_signal;
    use crate::data::{Label, NodeKind};

    const SIGNAL_LINE: &str = r#"{"label":"signal","bkg_kind":null,"nodes":[{"kind":"j1","f":[120.0,0.3,1.0,0.9,0.0,0.0]},{"kind":"j2","f":[60.0,-0.2,2.0,0.8,0.0,0.0]},{"kind":"b1","f":[120.0,0.3,1.0,0.9,15.0,0.0]},{"kind":"b2","f":[60.0,-0.2,2.0,0.8,10.0,0.0]},{"kind":"lepton","f":[40.0,0.5,-1.0,0.0,0.0,0.0]},{"kind":"energy","f":[150.0,0.0,3.0,0.0,0.0,8.0]}]}"#;

    #[test]
    fn parses_well_formed_signal_line() {
        let events = read_events_from_str(SIGNAL_LINE).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].label, Label::Signal);
        assert_eq!(events[0].n_nodes(), 6);
        assert_eq!(events[0].nodes[5].kind, NodeKind::Energy);
        assert_eq!(events[0], six_node_signal());
    }

    #[test]
    fn serialization_matches_schema() {
        let text = write_events_to_string(&[six_node_signal()]).unwrap();
        assert_eq!(text.trim_end(), SIGNAL_LINE);
    }

    #[test]
    fn five_nodes_is_a_node_count_error_with_line_number() {
        let mut e = six_node_signal();
        e.nodes.pop();
        let bad = serde_json::to_string(&e).unwrap();
        let text = format!("{SIGNAL_LINE}\n{bad}\n");
        match read_events_from_str(&text) {
            Err(DataError::Lines(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].line, 2);
                assert!(errs[0].message.contains("node count"), "{}", errs[0].message);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_unknown_kind_rejected() {
        let missing = SIGNAL_LINE.replace(r#""label":"signal","#, "");
        assert!(read_events_from_str(&missing).is_err());
        let unknown = SIGNAL_LINE.replace(r#""kind":"lepton""#, r#""kind":"muon""#);
        assert!(read_events_from_str(&unknown).is_err());
    }

    #[test]
    fn bad_utf8_is_a_file_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, [0xff, 0xfe, b'{']).unwrap();
        assert!(matches!(read_events(&path), Err(DataError::Utf8 { .. })));
    }
}
