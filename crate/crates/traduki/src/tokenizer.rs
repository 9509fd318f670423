//! Unit tokenizer: K-means codebooks over feature frames, the centroid
//! lookup de-tokenizer, and the token vocabulary that folds unit tokens into
//! the language model's id space.
//!
//! Frames are clustered once per language with Lloyd's algorithm under
//! k-means++ initialization. Tokenization maps each frame to its nearest
//! centroid (ties resolved toward the lowest index) and optionally collapses
//! consecutive duplicates, which is the convention for discrete unit streams
//! fed to a translation model. De-tokenization is exact centroid lookup, so
//! tokenize after detokenize reproduces the collapsed unit sequence
//! whenever the codebook holds the generating centroids.

use std::collections::HashMap;
use std::ops::Range;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::types::{collapse_runs, FeatureFrameSequence, Language, UnitId, UnitSequence};

/// Canonical names for the control tokens every vocabulary carries.
pub mod special {
    /// Reserved sequence-start control token.
    pub const BEGIN: &str = "<begin>";
    /// End of every training sequence and the generation stop token.
    pub const END: &str = "<end>";
    /// Separates the instruction prefix from the response.
    pub const RESPONSE: &str = "<resp>";
    /// Separates the text and unit stages of a chain response.
    pub const MODALITY_SEP: &str = "<msep>";
    /// Batch padding; never a training target.
    pub const PAD: &str = "<pad>";
    /// Speech-to-speech translation task marker.
    pub const TASK_S2ST: &str = "<s2st>";
    /// Speech recognition task marker.
    pub const TASK_ASR: &str = "<asr>";
    /// Speech-to-text translation task marker.
    pub const TASK_S2T: &str = "<s2t>";

    pub const ALL: [&str; 8] = [
        BEGIN,
        END,
        RESPONSE,
        MODALITY_SEP,
        PAD,
        TASK_S2ST,
        TASK_ASR,
        TASK_S2T,
    ];
}

/// A trained set of unit centroids for one language.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub language: Language,
    /// K centroid rows of equal dimension.
    pub centroids: Vec<Vec<f64>>,
    /// Final sum of squared distances from the training run.
    pub training_inertia: f64,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Checks the structural invariants, for codebooks loaded from disk.
    pub fn validate(&self) -> Result<()> {
        if self.k() < 2 {
            return Err(Error::Data("codebook must have at least 2 centroids".into()));
        }
        let dim = self.dim();
        for (i, c) in self.centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::Data(format!(
                    "centroid {i} has dimension {} but centroid 0 has {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("centroid {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    /// Index of the nearest centroid, ties resolved to the lowest index.
    pub fn nearest(&self, frame: &[f64]) -> UnitId {
        let mut best = 0usize;
        let mut best_d = squared_distance(&self.centroids[0], frame);
        for (i, c) in self.centroids.iter().enumerate().skip(1) {
            let d = squared_distance(c, frame);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best as UnitId
    }
}

/// Per-iteration diagnostics from a K-means run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansTrace {
    /// Inertia measured at each assignment step; non-increasing.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// A codebook together with its training trace.
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    pub codebook: Codebook,
    pub trace: KMeansTrace,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn count_distinct(frames: &[Vec<f64>]) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for f in frames {
        if !seen.iter().any(|s| *s == f.as_slice()) {
            seen.push(f);
        }
    }
    seen.len()
}

/// k-means++ seeding: first centroid uniform, the rest weighted by squared
/// distance to the nearest centroid chosen so far.
fn seed_centroids(frames: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..frames.len());
    centroids.push(frames[first].clone());
    let mut dist: Vec<f64> = frames
        .iter()
        .map(|f| squared_distance(f, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // All remaining mass is zero: every frame already coincides with
            // a chosen centroid. Take the first frame not yet chosen; the
            // distinct-frame precondition guarantees one exists.
            Err(_) => frames
                .iter()
                .position(|f| centroids.iter().all(|c| c != f))
                .expect("more distinct frames than centroids"),
        };
        centroids.push(frames[next].clone());
        for (d, f) in dist.iter_mut().zip(frames) {
            let nd = squared_distance(f, centroids.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn assign(frames: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<u32>, Vec<f64>, f64) {
    let mut assignment = Vec::with_capacity(frames.len());
    let mut dists = Vec::with_capacity(frames.len());
    let mut inertia = 0.0;
    for f in frames {
        let mut best = 0usize;
        let mut best_d = squared_distance(&centroids[0], f);
        for (i, c) in centroids.iter().enumerate().skip(1) {
            let d = squared_distance(c, f);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        assignment.push(best as u32);
        dists.push(best_d);
        inertia += best_d;
    }
    (assignment, dists, inertia)
}

/// Replace each empty cluster's centroid with the frame farthest from its
/// assigned centroid, lowest frame index on ties, never reusing a frame.
fn repair_empty(
    centroids: &mut [Vec<f64>],
    counts: &[usize],
    frames: &[Vec<f64>],
    dists: &mut [f64],
) -> bool {
    let mut repaired = false;
    for j in 0..centroids.len() {
        if counts[j] > 0 {
            continue;
        }
        let mut far = 0usize;
        for (i, d) in dists.iter().enumerate() {
            if *d > dists[far] {
                far = i;
            }
        }
        centroids[j] = frames[far].clone();
        dists[far] = 0.0;
        repaired = true;
    }
    repaired
}

/// Train a codebook with Lloyd's algorithm under k-means++ initialization.
///
/// Stops when assignments repeat or after `max_iters` update steps. The
/// trace records inertia at every assignment, which is non-increasing.
pub fn train_kmeans(
    frames: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    seed: u64,
    language: Language,
) -> Result<KMeansOutcome> {
    if k < 2 {
        return Err(Error::Config("K must be at least 2".into()));
    }
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let dim = frames.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Data("cannot cluster empty frames".into()));
    }
    if frames.iter().any(|f| f.len() != dim) {
        return Err(Error::Data("clustering frames must share one dimension".into()));
    }
    if count_distinct(frames) < k {
        return Err(Error::Data(format!(
            "need at least {k} distinct frames to fit {k} clusters"
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut centroids = seed_centroids(frames, k, &mut rng);
    let mut inertia_trace = Vec::new();
    let mut prev_assignment: Option<Vec<u32>> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        let (assignment, mut dists, inertia) = assign(frames, &centroids);
        inertia_trace.push(inertia);
        if prev_assignment.as_ref() == Some(&assignment) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in frames.iter().zip(&assignment) {
            counts[a as usize] += 1;
            for (s, x) in sums[a as usize].iter_mut().zip(f) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for s in &mut sums[j] {
                    *s /= counts[j] as f64;
                }
                centroids[j] = std::mem::take(&mut sums[j]);
            }
        }
        repair_empty(&mut centroids, &counts, frames, &mut dists);
        prev_assignment = Some(assignment);
    }

    let (_, _, final_inertia) = assign(frames, &centroids);
    if inertia_trace.last() != Some(&final_inertia) {
        inertia_trace.push(final_inertia);
    }
    Ok(KMeansOutcome {
        codebook: Codebook {
            language,
            centroids,
            training_inertia: final_inertia,
        },
        trace: KMeansTrace {
            inertia: inertia_trace,
            iterations,
            converged,
        },
    })
}

/// Map frames to nearest-centroid unit ids, optionally collapsing
/// consecutive duplicates.
pub fn tokenize(features: &[Vec<f64>], codebook: &Codebook, dedup: bool) -> Result<UnitSequence> {
    let dim = codebook.dim();
    let mut units = Vec::with_capacity(features.len());
    for frame in features {
        if frame.len() != dim {
            return Err(Error::Data(format!(
                "frame dimension {} does not match codebook dimension {dim}",
                frame.len()
            )));
        }
        units.push(codebook.nearest(frame));
    }
    Ok(if dedup { collapse_runs(&units) } else { units })
}

/// Expand unit ids to their centroid frames.
pub fn detokenize(units: &[UnitId], codebook: &Codebook) -> Result<FeatureFrameSequence> {
    units
        .iter()
        .map(|&u| {
            codebook
                .centroids
                .get(u as usize)
                .cloned()
                .ok_or_else(|| {
                    Error::Data(format!(
                        "unit id {u} out of range for codebook of size {}",
                        codebook.k()
                    ))
                })
        })
        .collect()
}

/// Dense token id into a [`TokenVocabulary`].
pub type TokenId = u32;

/// The language model's token space: text tokens (labels, task markers, and
/// control tokens) followed by one token per unit id per language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyDoc", into = "VocabularyDoc")]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    text: Range<TokenId>,
    unit_a: Range<TokenId>,
    unit_b: Range<TokenId>,
}

/// Serialized form: the ordered token list split by group.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyDoc {
    text_tokens: Vec<String>,
    unit_tokens_a: Vec<String>,
    unit_tokens_b: Vec<String>,
}

impl From<TokenVocabulary> for VocabularyDoc {
    fn from(v: TokenVocabulary) -> VocabularyDoc {
        let slice = |r: &Range<TokenId>| {
            v.tokens[r.start as usize..r.end as usize].to_vec()
        };
        VocabularyDoc {
            text_tokens: slice(&v.text),
            unit_tokens_a: slice(&v.unit_a),
            unit_tokens_b: slice(&v.unit_b),
        }
    }
}

impl TryFrom<VocabularyDoc> for TokenVocabulary {
    type Error = Error;

    fn try_from(doc: VocabularyDoc) -> Result<TokenVocabulary> {
        TokenVocabulary::from_groups(doc.text_tokens, doc.unit_tokens_a, doc.unit_tokens_b)
    }
}

fn unit_token_name(language: Language, unit: UnitId) -> String {
    format!("<u{}{}>", language.tag(), unit)
}

impl TokenVocabulary {
    fn from_groups(
        text: Vec<String>,
        unit_a: Vec<String>,
        unit_b: Vec<String>,
    ) -> Result<TokenVocabulary> {
        let text_end = text.len() as TokenId;
        let a_end = text_end + unit_a.len() as TokenId;
        let b_end = a_end + unit_b.len() as TokenId;
        let tokens: Vec<String> = text.into_iter().chain(unit_a).chain(unit_b).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, name) in tokens.iter().enumerate() {
            if index.insert(name.clone(), id as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate token name `{name}`")));
            }
        }
        Ok(TokenVocabulary {
            tokens,
            index,
            text: 0..text_end,
            unit_a: text_end..a_end,
            unit_b: a_end..b_end,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<TokenId> {
        self.index.get(name).copied()
    }

    /// Id of a token that must exist, such as a control token.
    pub fn require(&self, name: &str) -> Result<TokenId> {
        self.id_of(name)
            .ok_or_else(|| Error::Data(format!("vocabulary has no token `{name}`")))
    }

    pub fn name_of(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn text_token_count(&self) -> usize {
        self.text.len()
    }

    /// Token id for a unit id in one language's codebook.
    pub fn unit_token(&self, language: Language, unit: UnitId) -> Result<TokenId> {
        let range = match language {
            Language::A => &self.unit_a,
            Language::B => &self.unit_b,
        };
        let id = range.start + unit;
        if range.contains(&id) {
            Ok(id)
        } else {
            Err(Error::Data(format!(
                "unit id {unit} out of range for language {}",
                language.tag()
            )))
        }
    }

    /// Reverse lookup: which language and unit id a token encodes, if any.
    pub fn unit_of_token(&self, id: TokenId) -> Option<(Language, UnitId)> {
        if self.unit_a.contains(&id) {
            Some((Language::A, id - self.unit_a.start))
        } else if self.unit_b.contains(&id) {
            Some((Language::B, id - self.unit_b.start))
        } else {
            None
        }
    }

    pub fn is_unit_token(&self, id: TokenId) -> bool {
        self.unit_of_token(id).is_some()
    }

    /// Number of unit tokens for one language.
    pub fn unit_count(&self, language: Language) -> usize {
        match language {
            Language::A => self.unit_a.len(),
            Language::B => self.unit_b.len(),
        }
    }
}

/// Build the model vocabulary: base text tokens first, then one unit token
/// per centroid of each codebook.
///
/// The base list must already contain every word label, task marker, and
/// control token the formats use; this function only appends unit tokens.
pub fn extend_vocabulary(
    base: &[String],
    codebook_a: &Codebook,
    codebook_b: &Codebook,
) -> Result<TokenVocabulary> {
    let unit_a: Vec<String> = (0..codebook_a.k())
        .map(|u| unit_token_name(Language::A, u as UnitId))
        .collect();
    let unit_b: Vec<String> = (0..codebook_b.k())
        .map(|u| unit_token_name(Language::B, u as UnitId))
        .collect();
    TokenVocabulary::from_groups(base.to_vec(), unit_a, unit_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mcd;
    use proptest::prelude::*;

    fn frame(values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    fn toy_codebook() -> Codebook {
        Codebook {
            language: Language::A,
            centroids: vec![
                frame(&[0.0, 0.0]),
                frame(&[1.0, 0.0]),
                frame(&[0.0, 1.0]),
                frame(&[1.0, 1.0]),
                frame(&[2.0, 2.0]),
                frame(&[3.0, 0.0]),
            ],
            training_inertia: 0.0,
        }
    }

    #[test]
    fn exactly_k_distinct_points_are_recovered() {
        let frames = vec![frame(&[0.0]), frame(&[10.0]), frame(&[20.0])];
        let out = train_kmeans(&frames, 3, 50, 7, Language::A).unwrap();
        assert_eq!(out.codebook.training_inertia, 0.0);
        let mut got: Vec<f64> = out.codebook.centroids.iter().map(|c| c[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 10.0, 20.0]);
    }

    #[test]
    fn inertia_is_non_increasing() {
        let mut rng = rng_from_seed(11);
        let frames: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let out = train_kmeans(&frames, 8, 40, 3, Language::B).unwrap();
        for pair in out.trace.inertia.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "inertia rose: {pair:?}");
        }
        assert!(out.trace.converged);
    }

    #[test]
    fn fixed_seed_reproduces_centroids() {
        let mut rng = rng_from_seed(5);
        let frames: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let a = train_kmeans(&frames, 5, 30, 42, Language::A).unwrap();
        let b = train_kmeans(&frames, 5, 30, 42, Language::A).unwrap();
        assert_eq!(a.codebook.centroids, b.codebook.centroids);
        let c = train_kmeans(&frames, 5, 30, 43, Language::A).unwrap();
        assert_ne!(a.codebook.centroids, c.codebook.centroids);
    }

    #[test]
    fn too_few_distinct_frames_is_an_error() {
        let frames = vec![frame(&[1.0]); 10];
        assert!(train_kmeans(&frames, 2, 10, 0, Language::A).is_err());
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let codebook = Codebook {
            language: Language::A,
            centroids: vec![frame(&[0.0]), frame(&[2.0])],
            training_inertia: 0.0,
        };
        // Equidistant between both centroids.
        assert_eq!(codebook.nearest(&[1.0]), 0);
    }

    #[test]
    fn tokenize_collapses_only_with_dedup() {
        let codebook = toy_codebook();
        let frames = vec![
            codebook.centroids[2].clone(),
            codebook.centroids[2].clone(),
            codebook.centroids[5].clone(),
        ];
        assert_eq!(tokenize(&frames, &codebook, true).unwrap(), vec![2, 5]);
        assert_eq!(tokenize(&frames, &codebook, false).unwrap(), vec![2, 2, 5]);
    }

    #[test]
    fn tokenize_rejects_dimension_mismatch() {
        let codebook = toy_codebook();
        assert!(tokenize(&[frame(&[1.0])], &codebook, true).is_err());
    }

    #[test]
    fn detokenize_is_centroid_lookup() {
        let codebook = toy_codebook();
        assert_eq!(detokenize(&[], &codebook).unwrap(), Vec::<Vec<f64>>::new());
        assert_eq!(
            detokenize(&[0], &codebook).unwrap(),
            vec![codebook.centroids[0].clone()]
        );
        assert!(detokenize(&[6], &codebook).is_err());
        let frames = detokenize(&[1, 4], &codebook).unwrap();
        assert_eq!(mcd(&frames, &frames).unwrap(), 0.0);
    }

    #[test]
    fn repair_claims_farthest_frame() {
        let frames = vec![frame(&[0.0]), frame(&[1.0]), frame(&[9.0])];
        let mut centroids = vec![frame(&[0.5]), frame(&[100.0])];
        let counts = vec![3, 0];
        let mut dists = vec![0.25, 0.25, 72.25];
        assert!(repair_empty(&mut centroids, &counts, &frames, &mut dists));
        assert_eq!(centroids[1], frame(&[9.0]));
    }

    #[test]
    fn vocabulary_counts_and_lookups() {
        let base: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let make = |k: usize, language| Codebook {
            language,
            centroids: vec![vec![0.0]; k],
            training_inertia: 0.0,
        };
        let vocab =
            extend_vocabulary(&base, &make(16, Language::A), &make(16, Language::B)).unwrap();
        assert_eq!(vocab.len(), 82);
        assert_eq!(vocab.text_token_count(), 50);
        for lang in [Language::A, Language::B] {
            for unit in 0..16 {
                let id = vocab.unit_token(lang, unit).unwrap();
                assert_eq!(vocab.unit_of_token(id), Some((lang, unit)));
            }
            assert!(vocab.unit_token(lang, 16).is_err());
        }
        assert_eq!(vocab.unit_of_token(vocab.id_of("w3").unwrap()), None);
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let base = vec!["x".to_string(), "x".to_string()];
        let cb = Codebook {
            language: Language::A,
            centroids: vec![vec![0.0]; 2],
            training_inertia: 0.0,
        };
        assert!(extend_vocabulary(&base, &cb, &cb).is_err());
    }

    #[test]
    fn vocabulary_serialization_round_trips() {
        let base: Vec<String> = special::ALL
            .iter()
            .map(|s| s.to_string())
            .chain((0..6).map(|i| format!("a{i}")))
            .collect();
        let cb = |language| Codebook {
            language,
            centroids: vec![vec![0.0]; 4],
            training_inertia: 0.0,
        };
        let vocab = extend_vocabulary(&base, &cb(Language::A), &cb(Language::B)).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        let back: TokenVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), vocab.len());
        for id in 0..vocab.len() as TokenId {
            assert_eq!(back.name_of(id), vocab.name_of(id));
        }
        assert_eq!(
            back.unit_token(Language::B, 3).unwrap(),
            vocab.unit_token(Language::B, 3).unwrap()
        );
    }

    proptest! {
        // With ground-truth centroids, tokenizing a detokenized stream is
        // exactly duplicate collapse.
        #[test]
        fn round_trip_is_duplicate_collapse(units in prop::collection::vec(0u32..6, 0..40)) {
            let codebook = toy_codebook();
            let frames = detokenize(&units, &codebook).unwrap();
            let got = tokenize(&frames, &codebook, true).unwrap();
            prop_assert_eq!(got, collapse_runs(&units));
        }

        #[test]
        fn tokenize_without_dedup_is_one_unit_per_frame(units in prop::collection::vec(0u32..6, 0..40)) {
            let codebook = toy_codebook();
            let frames = detokenize(&units, &codebook).unwrap();
            let got = tokenize(&frames, &codebook, false).unwrap();
            prop_assert_eq!(got, units);
        }
    }
}
