//! Exact-match METEOR over label sequences.
//!
//! This is the unigram core of METEOR without stemming or synonymy, which do
//! not exist for synthetic labels. The score combines recall-weighted
//! harmonic mean F = 10PR / (R + 9P) with a fragmentation penalty
//! 0.5 * (chunks / matches)^3, where the chunk count is minimized exactly
//! over all maximum-cardinality alignments.

use std::collections::HashMap;
use std::hash::Hash;

/// Exact-match METEOR score in [0, 1]. Returns 0 when the sequences share no
/// labels.
pub fn meteor_lite<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> f64 {
    let (ref_ids, hyp_ids, words) = intern(reference, hypothesis);
    let mut ref_count = vec![0u32; words];
    let mut hyp_count = vec![0u32; words];
    for &w in &ref_ids {
        ref_count[w] += 1;
    }
    for &w in &hyp_ids {
        hyp_count[w] += 1;
    }
    let m: u32 = (0..words).map(|w| ref_count[w].min(hyp_count[w])).sum();
    if m == 0 {
        return 0.0;
    }
    let chunks = min_chunks(&ref_ids, &hyp_ids, &ref_count, &hyp_count, m);
    let m = f64::from(m);
    let precision = m / hyp_ids.len() as f64;
    let recall = m / ref_ids.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (f64::from(chunks) / m).powi(3);
    f_mean * (1.0 - penalty)
}

fn intern<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> (Vec<usize>, Vec<usize>, usize) {
    fn map_ids<'a, T: Eq + Hash>(seq: &'a [T], ids: &mut HashMap<&'a T, usize>) -> Vec<usize> {
        seq.iter()
            .map(|w| {
                let next = ids.len();
                *ids.entry(w).or_insert(next)
            })
            .collect()
    }
    // Both passes share the table, so equal labels get equal ids.
    let mut ids = HashMap::new();
    let r = map_ids(reference, &mut ids);
    let h = map_ids(hypothesis, &mut ids);
    (r, h, ids.len())
}

/// Minimum chunk count over all alignments that realize the full match count
/// `m`. Depth-first search over hypothesis positions with branch-and-bound
/// on the chunk count; sequences here are short sentences, so the exact
/// search is cheap.
fn min_chunks(
    ref_ids: &[usize],
    hyp_ids: &[usize],
    ref_count: &[u32],
    hyp_count: &[u32],
    m: u32,
) -> u32 {
    let words = ref_count.len();
    let mut ref_pos_by_word: Vec<Vec<usize>> = vec![Vec::new(); words];
    for (pos, &w) in ref_ids.iter().enumerate() {
        ref_pos_by_word[w].push(pos);
    }
    let mut state = Search {
        hyp: hyp_ids,
        ref_pos_by_word,
        ref_used: vec![false; ref_ids.len()],
        ref_avail: ref_count.to_vec(),
        hyp_remaining: hyp_count.to_vec(),
        m,
        best: u32::MAX,
    };
    state.dfs(0, 0, 0, None);
    debug_assert_ne!(state.best, u32::MAX, "full matching must be reachable");
    state.best
}

struct Search<'a> {
    hyp: &'a [usize],
    ref_pos_by_word: Vec<Vec<usize>>,
    ref_used: Vec<bool>,
    ref_avail: Vec<u32>,
    hyp_remaining: Vec<u32>,
    m: u32,
    best: u32,
}

impl Search<'_> {
    fn capacity(&self) -> u32 {
        self.ref_avail
            .iter()
            .zip(&self.hyp_remaining)
            .map(|(&r, &h)| r.min(h))
            .sum()
    }

    fn dfs(&mut self, i: usize, matches: u32, chunks: u32, last: Option<(usize, usize)>) {
        if chunks >= self.best {
            return;
        }
        if matches == self.m {
            self.best = chunks;
            return;
        }
        if i == self.hyp.len() || matches + self.capacity() < self.m {
            return;
        }
        let w = self.hyp[i];
        self.hyp_remaining[w] -= 1;
        // Matching this position: prefer the reference position that extends
        // the current chunk so good alignments are found early.
        let mut candidates: Vec<usize> = self.ref_pos_by_word[w]
            .iter()
            .copied()
            .filter(|&r| !self.ref_used[r])
            .collect();
        if let Some((h_last, r_last)) = last {
            if i == h_last + 1 {
                if let Some(k) = candidates.iter().position(|&r| r == r_last + 1) {
                    candidates.swap(0, k);
                }
            }
        }
        for r in candidates {
            let continues = matches!(last, Some((h, rl)) if i == h + 1 && r == rl + 1);
            let next_chunks = if continues { chunks } else { chunks + 1 };
            self.ref_used[r] = true;
            self.ref_avail[w] -= 1;
            self.dfs(i + 1, matches + 1, next_chunks, Some((i, r)));
            self.ref_avail[w] += 1;
            self.ref_used[r] = false;
        }
        // Leaving it unmatched.
        self.dfs(i + 1, matches, chunks, last);
        self.hyp_remaining[w] += 1;
    }
}
