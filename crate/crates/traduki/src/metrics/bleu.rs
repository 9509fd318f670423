//! BLEU over label sequences, on the conventional 0 to 100 scale.
//!
//! Two entry points share one statistics pass: [`bleu`] scores a single
//! segment (optionally with add-one smoothing so short hypotheses do not
//! collapse to zero), and [`CorpusBleu`] aggregates clipped n-gram counts
//! over many segments before taking the geometric mean, which is the usual
//! corpus definition and the one the evaluation harness reports.

use std::collections::HashMap;
use std::hash::Hash;

/// Smoothing mode for single-segment scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// Plain modified precisions; any zero n-gram match zeroes the score.
    None,
    /// Add one to numerator and denominator of each precision for n >= 2.
    AddOne,
}

#[derive(Debug, Clone)]
struct SegmentStats {
    matched: Vec<u64>,
    total: Vec<u64>,
    hyp_len: u64,
    ref_len: u64,
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if seq.len() >= n && n > 0 {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to the hypothesis length, ties broken toward the
/// shorter reference.
fn closest_ref_len(ref_lens: &[usize], hyp_len: usize) -> u64 {
    let mut best = ref_lens[0];
    for &len in &ref_lens[1..] {
        let cand = len.abs_diff(hyp_len);
        let cur = best.abs_diff(hyp_len);
        if cand < cur || (cand == cur && len < best) {
            best = len;
        }
    }
    best as u64
}

fn segment_stats<T: Eq + Hash>(
    references: &[&[T]],
    hypothesis: &[T],
    max_n: usize,
) -> SegmentStats {
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hypothesis, n);
        if hyp_counts.is_empty() {
            continue;
        }
        // Clip each hypothesis n-gram by its maximum count over all
        // references.
        let mut ref_max: HashMap<&[T], u64> = HashMap::new();
        for reference in references {
            for (gram, count) in ngram_counts(reference, n) {
                let slot = ref_max.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        for (gram, count) in &hyp_counts {
            let clip = ref_max.get(gram).copied().unwrap_or(0);
            matched[n - 1] += (*count).min(clip);
            total[n - 1] += count;
        }
    }
    let ref_lens: Vec<usize> = references.iter().map(|r| r.len()).collect();
    SegmentStats {
        matched,
        total,
        hyp_len: hypothesis.len() as u64,
        ref_len: closest_ref_len(&ref_lens, hypothesis.len()),
    }
}

fn brevity_penalty(ref_len: u64, hyp_len: u64) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn combine(matched: &[u64], total: &[u64], ref_len: u64, hyp_len: u64, smoothing: Smoothing) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let max_n = matched.len();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = (matched[n - 1], total[n - 1]);
        let precision = match smoothing {
            Smoothing::AddOne if n >= 2 => (m + 1) as f64 / (t + 1) as f64,
            _ => {
                if m == 0 || t == 0 {
                    return 0.0;
                }
                m as f64 / t as f64
            }
        };
        log_sum += precision.ln();
    }
    100.0 * brevity_penalty(ref_len, hyp_len) * (log_sum / max_n as f64).exp()
}

/// Single-segment BLEU against one or more references.
///
/// `max_n` is the highest n-gram order (conventionally 4). With
/// [`Smoothing::None`] any order with zero matches zeroes the score, matching
/// the corpus formula restricted to one segment.
///
/// # Panics
///
/// Panics if `references` is empty or `max_n` is zero.
pub fn bleu<T: Eq + Hash>(
    references: &[&[T]],
    hypothesis: &[T],
    max_n: usize,
    smoothing: Smoothing,
) -> f64 {
    assert!(!references.is_empty(), "bleu needs at least one reference");
    assert!(max_n > 0, "bleu needs max_n >= 1");
    let stats = segment_stats(references, hypothesis, max_n);
    combine(
        &stats.matched,
        &stats.total,
        stats.ref_len,
        stats.hyp_len,
        smoothing,
    )
}

/// Corpus-level BLEU accumulator: clipped counts and lengths are summed over
/// segments, then combined once, unsmoothed.
#[derive(Debug, Clone)]
pub struct CorpusBleu {
    max_n: usize,
    matched: Vec<u64>,
    total: Vec<u64>,
    hyp_len: u64,
    ref_len: u64,
    segments: u64,
}

impl CorpusBleu {
    pub fn new(max_n: usize) -> CorpusBleu {
        assert!(max_n > 0, "bleu needs max_n >= 1");
        CorpusBleu {
            max_n,
            matched: vec![0; max_n],
            total: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
            segments: 0,
        }
    }

    pub fn push<T: Eq + Hash>(&mut self, references: &[&[T]], hypothesis: &[T]) {
        assert!(!references.is_empty(), "bleu needs at least one reference");
        let stats = segment_stats(references, hypothesis, self.max_n);
        for n in 0..self.max_n {
            self.matched[n] += stats.matched[n];
            self.total[n] += stats.total[n];
        }
        self.hyp_len += stats.hyp_len;
        self.ref_len += stats.ref_len;
        self.segments += 1;
    }

    pub fn segments(&self) -> u64 {
        self.segments
    }

    pub fn score(&self) -> f64 {
        combine(
            &self.matched,
            &self.total,
            self.ref_len,
            self.hyp_len,
            Smoothing::None,
        )
    }
}
