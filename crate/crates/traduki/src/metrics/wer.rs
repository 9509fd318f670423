//! Word error rate over label sequences.

use crate::error::{Error, Result};

/// Levenshtein distance between two label sequences with unit costs for
/// substitution, insertion, and deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    if reference.is_empty() {
        return hypothesis.len();
    }
    if hypothesis.is_empty() {
        return reference.len();
    }
    // Single-row dynamic program: prev holds the cost row for the previous
    // reference prefix.
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0usize; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            let del = prev[j + 1] + 1;
            let ins = cur[j] + 1;
            cur[j + 1] = sub.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Word error rate: edit distance divided by reference length.
///
/// The reference must be non-empty; an empty reference makes the rate
/// undefined.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Data(
            "cannot compute WER against an empty reference".into(),
        ));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
