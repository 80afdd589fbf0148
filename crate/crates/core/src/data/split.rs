use rand::seq::SliceRandom;

use super::{DataError, EventGraph, Label};
use crate::seeded_rng;

/// Stratified split into `(first, second)` parts with the given fractions.
pub fn split(
    events: &[EventGraph],
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<EventGraph>, Vec<EventGraph>), DataError> {
    let (a, b) = fractions;
    if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!(
            "fractions {a} and {b} must be non-negative and sum to 1"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for label in [Label::Signal, Label::Background] {
        let mut idx: Vec<usize> = (0..events.len())
            .filter(|&i| events[i].label == label)
            .collect();
        if idx.is_empty() {
            return Err(DataError::Split(format!("no {label:?} events")));
        }
        idx.shuffle(&mut rng);
        let cut = (a * idx.len() as f64).round() as usize;
        first.extend(idx[..cut].iter().copied());
        second.extend(idx[cut..].iter().copied());
    }
    first.shuffle(&mut rng);
    second.shuffle(&mut rng);
    let take = |ix: Vec<usize>| ix.into_iter().map(|i| events[i].clone()).collect();
    Ok((take(first), take(second)))
}
