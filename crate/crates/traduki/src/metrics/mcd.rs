//! Mel-cepstral distortion between feature frame sequences.
//!
//! Frames are compared with the standard cepstral distance
//! (10 / ln 10) * sqrt(2 * sum_d (a_d - b_d)^2) and aligned by dynamic time
//! warping with steps (1,0), (0,1), and (1,1). The reported value is the
//! mean local distance along the minimum-cost warping path, so stretching a
//! sequence by repeating frames does not change a perfect match.

use crate::error::{Error, Result};

const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum();
    MCD_SCALE * (2.0 * sq).sqrt()
}

/// Mean mel-cepstral distortion along the DTW alignment of `reference` and
/// `hypothesis`.
///
/// Both sequences must be non-empty and share one frame dimension.
pub fn mcd(reference: &[Vec<f64>], hypothesis: &[Vec<f64>]) -> Result<f64> {
    if reference.is_empty() || hypothesis.is_empty() {
        return Err(Error::Data(
            "cannot compute MCD on an empty frame sequence".into(),
        ));
    }
    let dim = reference[0].len();
    if dim == 0 {
        return Err(Error::Data("MCD frames must have at least one coefficient".into()));
    }
    for frame in reference.iter().chain(hypothesis) {
        if frame.len() != dim {
            return Err(Error::Data(format!(
                "MCD frame dimension mismatch: expected {dim}, found {}",
                frame.len()
            )));
        }
    }

    let (n, m) = (reference.len(), hypothesis.len());
    // cost is the cumulative DTW cost, steps the length of the chosen path.
    // Ties between predecessors break toward the diagonal, then toward
    // advancing the reference, which pins the path length deterministically.
    let mut cost = vec![f64::INFINITY; n * m];
    let mut steps = vec![0u64; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let local = frame_distance(&reference[i], &hypothesis[j]);
            let (prev_cost, prev_steps) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, 0u64);
                let mut consider = |c: f64, s: u64| {
                    if c < best.0 {
                        best = (c, s);
                    }
                };
                if i > 0 && j > 0 {
                    consider(cost[at(i - 1, j - 1)], steps[at(i - 1, j - 1)]);
                }
                if i > 0 {
                    consider(cost[at(i - 1, j)], steps[at(i - 1, j)]);
                }
                if j > 0 {
                    consider(cost[at(i, j - 1)], steps[at(i, j - 1)]);
                }
                best
            };
            cost[at(i, j)] = prev_cost + local;
            steps[at(i, j)] = prev_steps + 1;
        }
    }
    Ok(cost[at(n - 1, m - 1)] / steps[at(n - 1, m - 1)] as f64)
}
