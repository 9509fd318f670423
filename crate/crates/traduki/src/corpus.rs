//! Synthetic bilingual world and corpus generators.
//!
//! A world is two invented unit languages linked by a known translation
//! rule: a bijective word dictionary composed with whole-sentence word-order
//! reversal. Every word is a short unit sequence whose first unit comes from
//! a reserved set of word-initial units and whose remaining units come from
//! the disjoint body set with no two consecutive duplicates. That layout
//! makes segmentation of a unit stream unambiguous (word starts are exactly
//! the initial-unit positions) and survives duplicate collapse, so the world
//! can act as its own transcription oracle.
//!
//! Corpora mimic a speech translation dataset: each sample carries source
//! and target unit streams (with per-unit duration jitter) and their label
//! transcripts, related exactly by the translation rule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag, Rng};
use crate::tokenizer::{extend_vocabulary, special, Codebook, TokenVocabulary};
use crate::types::{collapse_runs, Direction, Language, UnitId, UnitSequence};

/// Knobs for world generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Unit alphabet size per language; at least 8.
    pub alphabet_a: usize,
    pub alphabet_b: usize,
    /// Words per language inventory; at least 20.
    pub inventory: usize,
    /// Feature centroid dimension; at least 4.
    pub feature_dim: usize,
    /// Inclusive frame repetition range per unit, within [1, 4].
    pub duration_range: (usize, usize),
    /// Inclusive unit count per word, within [2, 4].
    pub word_length_range: (usize, usize),
    /// Inclusive word count per sentence.
    pub sentence_length_range: (usize, usize),
    /// Minimum pairwise distance between ground-truth centroids.
    pub min_separation: f64,
}

impl Default for WorldConfig {
    fn default() -> WorldConfig {
        WorldConfig {
            alphabet_a: 16,
            alphabet_b: 16,
            inventory: 24,
            feature_dim: 8,
            duration_range: (1, 3),
            word_length_range: (2, 4),
            sentence_length_range: (3, 8),
            min_separation: 1.0,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.alphabet_a < 8 || self.alphabet_b < 8 {
            return fail("alphabet sizes must be at least 8".into());
        }
        if self.inventory < 20 {
            return fail("word inventory must be at least 20".into());
        }
        if self.feature_dim < 4 {
            return fail("feature dimension must be at least 4".into());
        }
        let (dmin, dmax) = self.duration_range;
        if dmin < 1 || dmax > 4 || dmin > dmax {
            return fail(format!(
                "duration range ({dmin}, {dmax}) must satisfy 1 <= min <= max <= 4"
            ));
        }
        let (wmin, wmax) = self.word_length_range;
        if wmin < 2 || wmax > 4 || wmin > wmax {
            return fail(format!(
                "word length range ({wmin}, {wmax}) must satisfy 2 <= min <= max <= 4"
            ));
        }
        let (smin, smax) = self.sentence_length_range;
        if smin < 1 || smin > smax {
            return fail(format!(
                "sentence length range ({smin}, {smax}) must satisfy 1 <= min <= max"
            ));
        }
        if !(self.min_separation > 0.0) {
            return fail("minimum centroid separation must be positive".into());
        }
        for (language, k) in [("A", self.alphabet_a), ("B", self.alphabet_b)] {
            let constructible = constructible_words(k, self.word_length_range);
            if (self.inventory as u128) > constructible {
                return fail(format!(
                    "inventory {} exceeds the {constructible} constructible words \
                     for language {language}",
                    self.inventory
                ));
            }
        }
        Ok(())
    }
}

/// Number of word-initial units for an alphabet of size `k`. Initial units
/// occupy ids `0..initial_count`; body units occupy the rest.
pub fn initial_count(k: usize) -> usize {
    (k / 4).max(2)
}

/// Count of distinct words constructible under the initial/body layout with
/// no consecutive duplicate body units.
fn constructible_words(k: usize, (wmin, wmax): (usize, usize)) -> u128 {
    let i = initial_count(k) as u128;
    let b = (k - initial_count(k)) as u128;
    let mut total = 0u128;
    for len in wmin..=wmax {
        // One initial unit, then a body chain of len-1 units where each
        // differs from its predecessor.
        let mut count = i * b;
        for _ in 2..len {
            count = count.saturating_mul(b - 1);
        }
        total = total.saturating_add(count);
    }
    total
}

/// A fully specified synthetic bilingual world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub config: WorldConfig,
    /// Word inventories: unit sequences indexed by word id.
    pub words_a: Vec<UnitSequence>,
    pub words_b: Vec<UnitSequence>,
    /// Word dictionary as a permutation: A word id -> B word id.
    pub translation: Vec<usize>,
    pub translation_inverse: Vec<usize>,
    /// Text labels per word id.
    pub labels_a: Vec<String>,
    pub labels_b: Vec<String>,
    /// Ground-truth unit centroids.
    pub codebook_a: Codebook,
    pub codebook_b: Codebook,
}

/// A single monolingual utterance with its oracle transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub units: UnitSequence,
    pub transcript: Vec<String>,
    pub language: Language,
}

/// A bilingual sample: source and target speech with transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelSample {
    pub source_units: UnitSequence,
    pub source_text: Vec<String>,
    pub target_units: UnitSequence,
    pub target_text: Vec<String>,
    pub direction: Direction,
}

/// Training task of a [`TaskExample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Asr,
    S2t,
    S2st,
}

/// Output side of a task example: text labels or target-language units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskOutput {
    Text(Vec<String>),
    Units(UnitSequence),
}

/// One supervised example derived from a parallel sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: Task,
    /// Language of the input unit stream.
    pub input_language: Language,
    pub input: UnitSequence,
    pub output: TaskOutput,
    /// Direction of the parallel sample this example came from.
    pub direction: Direction,
}

impl SyntheticWorld {
    pub fn words(&self, language: Language) -> &[UnitSequence] {
        match language {
            Language::A => &self.words_a,
            Language::B => &self.words_b,
        }
    }

    pub fn labels(&self, language: Language) -> &[String] {
        match language {
            Language::A => &self.labels_a,
            Language::B => &self.labels_b,
        }
    }

    pub fn codebook(&self, language: Language) -> &Codebook {
        match language {
            Language::A => &self.codebook_a,
            Language::B => &self.codebook_b,
        }
    }

    fn alphabet(&self, language: Language) -> usize {
        match language {
            Language::A => self.config.alphabet_a,
            Language::B => self.config.alphabet_b,
        }
    }

    /// Word id for a text label, if the label belongs to this language.
    pub fn word_of_label(&self, language: Language, label: &str) -> Option<usize> {
        self.labels(language).iter().position(|l| l == label)
    }

    /// Segment a unit stream into word ids. Consecutive duplicate units are
    /// collapsed first, so streams with duration repeats segment the same
    /// way as clean ones.
    pub fn segment(&self, language: Language, units: &[UnitId]) -> Result<Vec<usize>> {
        let units = collapse_runs(units);
        let initials = initial_count(self.alphabet(language)) as UnitId;
        if units.is_empty() {
            return Err(Error::Data("cannot segment an empty unit stream".into()));
        }
        if units[0] >= initials {
            return Err(Error::Data(
                "unit stream does not start with a word-initial unit".into(),
            ));
        }
        let words = self.words(language);
        let mut word_ids = Vec::new();
        let mut start = 0;
        for end in 1..=units.len() {
            if end == units.len() || units[end] < initials {
                let segment = &units[start..end];
                let id = words
                    .iter()
                    .position(|w| w == segment)
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "unit segment {segment:?} is not a word of language {}",
                            language.tag()
                        ))
                    })?;
                word_ids.push(id);
                start = end;
            }
        }
        Ok(word_ids)
    }

    /// Oracle transcription: segment and map word ids to labels.
    pub fn transcribe(&self, language: Language, units: &[UnitId]) -> Result<Vec<String>> {
        Ok(self
            .segment(language, units)?
            .iter()
            .map(|&w| self.labels(language)[w].clone())
            .collect())
    }

    /// Apply the translation rule to word ids: dictionary substitution then
    /// whole-sentence reversal.
    pub fn translate_word_ids(&self, direction: Direction, word_ids: &[usize]) -> Vec<usize> {
        let dict = match direction {
            Direction::A2B => &self.translation,
            Direction::B2A => &self.translation_inverse,
        };
        word_ids.iter().rev().map(|&w| dict[w]).collect()
    }

    /// Apply the translation rule to a label sentence.
    pub fn translate_text(&self, direction: Direction, labels: &[String]) -> Result<Vec<String>> {
        let source = direction.source();
        let ids = labels
            .iter()
            .map(|l| {
                self.word_of_label(source, l).ok_or_else(|| {
                    Error::Data(format!("`{l}` is not a label of language {}", source.tag()))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let translated = self.translate_word_ids(direction, &ids);
        Ok(translated
            .iter()
            .map(|&w| self.labels(direction.target())[w].clone())
            .collect())
    }

    /// Emit the unit stream for a word id sentence, repeating each unit
    /// `duration_range` times.
    pub fn render_units(
        &self,
        language: Language,
        word_ids: &[usize],
        rng: &mut Rng,
    ) -> UnitSequence {
        let (dmin, dmax) = self.config.duration_range;
        let words = self.words(language);
        let mut units = Vec::new();
        for &w in word_ids {
            for &u in &words[w] {
                let repeats = rng.gen_range(dmin..=dmax);
                for _ in 0..repeats {
                    units.push(u);
                }
            }
        }
        units
    }

    fn sample_sentence(&self, rng: &mut Rng) -> Vec<usize> {
        let (smin, smax) = self.config.sentence_length_range;
        let len = rng.gen_range(smin..=smax);
        (0..len)
            .map(|_| rng.gen_range(0..self.config.inventory))
            .collect()
    }

    /// Check every structural invariant; used on loaded worlds.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let w = self.config.inventory;
        for (words, labels, codebook, k) in [
            (&self.words_a, &self.labels_a, &self.codebook_a, self.config.alphabet_a),
            (&self.words_b, &self.labels_b, &self.codebook_b, self.config.alphabet_b),
        ] {
            if words.len() != w || labels.len() != w {
                return Err(Error::Data("inventory size mismatch".into()));
            }
            codebook.validate()?;
            if codebook.k() != k {
                return Err(Error::Data("codebook size does not match alphabet".into()));
            }
            for word in words {
                if word.iter().any(|&u| (u as usize) >= k) {
                    return Err(Error::Data("word references a unit outside the alphabet".into()));
                }
            }
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != w {
                return Err(Error::Data("labels are not injective".into()));
            }
        }
        if self.translation.len() != w || self.translation_inverse.len() != w {
            return Err(Error::Data("translation tables have wrong size".into()));
        }
        for a in 0..w {
            let b = self.translation[a];
            if b >= w || self.translation_inverse[b] != a {
                return Err(Error::Data("translation is not a bijection".into()));
            }
        }
        for codebook in [&self.codebook_a, &self.codebook_b] {
            let k = codebook.k();
            for i in 0..k {
                for j in (i + 1)..k {
                    let d: f64 = codebook.centroids[i]
                        .iter()
                        .zip(&codebook.centroids[j])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    if d < self.config.min_separation {
                        return Err(Error::Data(format!(
                            "centroids {i} and {j} are only {d:.3} apart"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sample_word(k: usize, range: (usize, usize), rng: &mut Rng) -> UnitSequence {
    let initials = initial_count(k);
    let bodies = k - initials;
    let len = rng.gen_range(range.0..=range.1);
    let mut word = Vec::with_capacity(len);
    word.push(rng.gen_range(0..initials) as UnitId);
    let mut prev: Option<usize> = None;
    for _ in 1..len {
        let next = match prev {
            // Draw from the body units excluding the previous one.
            Some(p) => {
                let raw = rng.gen_range(0..bodies - 1);
                if raw >= p {
                    raw + 1
                } else {
                    raw
                }
            }
            None => rng.gen_range(0..bodies),
        };
        word.push((initials + next) as UnitId);
        prev = Some(next);
    }
    word
}

fn sample_inventory(k: usize, config: &WorldConfig, rng: &mut Rng) -> Result<Vec<UnitSequence>> {
    let mut words: Vec<UnitSequence> = Vec::with_capacity(config.inventory);
    let mut attempts = 0usize;
    while words.len() < config.inventory {
        attempts += 1;
        if attempts > 10_000 * config.inventory {
            return Err(Error::Data(
                "could not sample a distinct word inventory; \
                 inventory too close to the constructible limit"
                    .into(),
            ));
        }
        let word = sample_word(k, config.word_length_range, rng);
        if !words.contains(&word) {
            words.push(word);
        }
    }
    Ok(words)
}

fn sample_centroids(
    k: usize,
    config: &WorldConfig,
    language: Language,
    rng: &mut Rng,
) -> Result<Codebook> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Config(format!(
                    "cannot place centroid {i} with separation {}; \
                     lower min_separation or the alphabet size",
                    config.min_separation
                )));
            }
            let candidate: Vec<f64> = (0..config.feature_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let ok = centroids.iter().all(|c: &Vec<f64>| {
                let d: f64 = c
                    .iter()
                    .zip(&candidate)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                d >= config.min_separation
            });
            if ok {
                centroids.push(candidate);
                break;
            }
        }
    }
    Ok(Codebook {
        language,
        centroids,
        training_inertia: 0.0,
    })
}

/// Generate a world deterministically from a seed and config.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = stream_rng(seed, &[tag("world")]);
    let words_a = sample_inventory(config.alphabet_a, config, &mut rng)?;
    let words_b = sample_inventory(config.alphabet_b, config, &mut rng)?;
    let mut translation: Vec<usize> = (0..config.inventory).collect();
    translation.shuffle(&mut rng);
    let mut translation_inverse = vec![0usize; config.inventory];
    for (a, &b) in translation.iter().enumerate() {
        translation_inverse[b] = a;
    }
    let labels_a = (0..config.inventory).map(|i| format!("a{i}")).collect();
    let labels_b = (0..config.inventory).map(|i| format!("b{i}")).collect();
    let codebook_a = sample_centroids(config.alphabet_a, config, Language::A, &mut rng)?;
    let codebook_b = sample_centroids(config.alphabet_b, config, Language::B, &mut rng)?;
    Ok(SyntheticWorld {
        seed,
        config: config.clone(),
        words_a,
        words_b,
        translation,
        translation_inverse,
        labels_a,
        labels_b,
        codebook_a,
        codebook_b,
    })
}

/// Generate `n` parallel samples in one direction. The stream is keyed by
/// (seed, direction), so the two directions draw disjoint randomness from
/// one base seed.
pub fn generate_parallel_corpus(
    world: &SyntheticWorld,
    n: usize,
    direction: Direction,
    seed: u64,
) -> Vec<ParallelSample> {
    let mut rng = stream_rng(seed, &[tag("parallel"), tag(direction.name())]);
    let source = direction.source();
    let target = direction.target();
    (0..n)
        .map(|_| {
            let source_ids = world.sample_sentence(&mut rng);
            let target_ids = world.translate_word_ids(direction, &source_ids);
            let source_units = world.render_units(source, &source_ids, &mut rng);
            let target_units = world.render_units(target, &target_ids, &mut rng);
            ParallelSample {
                source_units,
                source_text: source_ids
                    .iter()
                    .map(|&w| world.labels(source)[w].clone())
                    .collect(),
                target_units,
                target_text: target_ids
                    .iter()
                    .map(|&w| world.labels(target)[w].clone())
                    .collect(),
                direction,
            }
        })
        .collect()
}

/// Generate `n` utterances of one language with no paired translation, on a
/// seed stream disjoint from parallel generation.
pub fn generate_monolingual_corpus(
    world: &SyntheticWorld,
    language: Language,
    n: usize,
    seed: u64,
) -> Vec<Utterance> {
    let mut rng = stream_rng(seed, &[tag("monolingual"), tag(language.tag())]);
    (0..n)
        .map(|_| {
            let ids = world.sample_sentence(&mut rng);
            let units = world.render_units(language, &ids, &mut rng);
            Utterance {
                units,
                transcript: ids
                    .iter()
                    .map(|&w| world.labels(language)[w].clone())
                    .collect(),
                language,
            }
        })
        .collect()
}

/// Expand one parallel sample into its five training examples: recognition
/// of both sides, text translation in both directions, and speech-to-speech
/// translation.
pub fn derive_tri_task(sample: &ParallelSample) -> Vec<TaskExample> {
    let direction = sample.direction;
    let source = direction.source();
    let target = direction.target();
    vec![
        TaskExample {
            task: Task::Asr,
            input_language: source,
            input: sample.source_units.clone(),
            output: TaskOutput::Text(sample.source_text.clone()),
            direction,
        },
        TaskExample {
            task: Task::Asr,
            input_language: target,
            input: sample.target_units.clone(),
            output: TaskOutput::Text(sample.target_text.clone()),
            direction,
        },
        TaskExample {
            task: Task::S2t,
            input_language: source,
            input: sample.source_units.clone(),
            output: TaskOutput::Text(sample.target_text.clone()),
            direction,
        },
        TaskExample {
            task: Task::S2t,
            input_language: target,
            input: sample.target_units.clone(),
            output: TaskOutput::Text(sample.source_text.clone()),
            direction,
        },
        TaskExample {
            task: Task::S2st,
            input_language: source,
            input: sample.source_units.clone(),
            output: TaskOutput::Units(sample.target_units.clone()),
            direction,
        },
    ]
}

/// Build the model vocabulary for a world: control tokens, the word labels
/// of both languages, then one unit token per codebook centroid. The order
/// is fixed so a world always maps to the same token ids.
pub fn world_vocabulary(world: &SyntheticWorld) -> Result<TokenVocabulary> {
    let mut base: Vec<String> = special::ALL.iter().map(|s| s.to_string()).collect();
    base.extend(world.labels(Language::A).iter().cloned());
    base.extend(world.labels(Language::B).iter().cloned());
    extend_vocabulary(&base, world.codebook(Language::A), world.codebook(Language::B))
}

/// Check a sample against the world oracle: transcripts must match the unit
/// streams and the target text must be the translated source text.
pub fn check_parallel_sample(world: &SyntheticWorld, sample: &ParallelSample) -> Result<()> {
    let direction = sample.direction;
    let source_transcript = world.transcribe(direction.source(), &sample.source_units)?;
    if source_transcript != sample.source_text {
        return Err(Error::Data("source transcript mismatch".into()));
    }
    let target_transcript = world.transcribe(direction.target(), &sample.target_units)?;
    if target_transcript != sample.target_text {
        return Err(Error::Data("target transcript mismatch".into()));
    }
    let translated = world.translate_text(direction, &sample.source_text)?;
    if translated != sample.target_text {
        return Err(Error::Data("target text is not the translated source".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> SyntheticWorld {
        generate_world(7, &WorldConfig::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = serde_json::to_string(&world()).unwrap();
        let b = serde_json::to_string(&world()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_world(8, &WorldConfig::default()).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn world_passes_its_own_validation() {
        world().validate().unwrap();
    }

    #[test]
    fn translation_round_trips_every_word() {
        let w = world();
        for a in 0..w.config.inventory {
            assert_eq!(w.translation_inverse[w.translation[a]], a);
        }
        for b in 0..w.config.inventory {
            assert_eq!(w.translation[w.translation_inverse[b]], b);
        }
    }

    #[test]
    fn oversized_inventory_is_rejected() {
        let config = WorldConfig {
            alphabet_a: 8,
            alphabet_b: 8,
            // 8 units: 2 initials, 6 bodies. Constructible words with
            // lengths 2..=2: 2 * 6 = 12 < 20 minimum inventory.
            word_length_range: (2, 2),
            ..WorldConfig::default()
        };
        let err = generate_world(0, &config).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = WorldConfig::default();
        for bad in [
            WorldConfig { alphabet_a: 4, ..base.clone() },
            WorldConfig { inventory: 10, ..base.clone() },
            WorldConfig { feature_dim: 2, ..base.clone() },
            WorldConfig { duration_range: (0, 3), ..base.clone() },
            WorldConfig { duration_range: (2, 5), ..base.clone() },
            WorldConfig { word_length_range: (1, 3), ..base.clone() },
            WorldConfig { sentence_length_range: (4, 2), ..base.clone() },
        ] {
            assert!(generate_world(1, &bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn centroid_separation_holds_exhaustively() {
        let w = world();
        for codebook in [&w.codebook_a, &w.codebook_b] {
            for i in 0..codebook.k() {
                for j in (i + 1)..codebook.k() {
                    let d: f64 = codebook.centroids[i]
                        .iter()
                        .zip(&codebook.centroids[j])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= w.config.min_separation);
                }
            }
        }
    }

    #[test]
    fn two_word_sentence_reverses() {
        let w = world();
        let labels = vec![w.labels_a[3].clone(), w.labels_a[1].clone()];
        let translated = w.translate_text(Direction::A2B, &labels).unwrap();
        assert_eq!(
            translated,
            vec![
                w.labels_b[w.translation[1]].clone(),
                w.labels_b[w.translation[3]].clone(),
            ]
        );
    }

    #[test]
    fn single_word_translation_is_dictionary_lookup() {
        let w = world();
        let labels = vec![w.labels_a[5].clone()];
        let translated = w.translate_text(Direction::A2B, &labels).unwrap();
        assert_eq!(translated, vec![w.labels_b[w.translation[5]].clone()]);
    }

    #[test]
    fn parallel_samples_pass_the_oracle() {
        let w = world();
        for direction in [Direction::A2B, Direction::B2A] {
            let corpus = generate_parallel_corpus(&w, 50, direction, 99);
            assert_eq!(corpus.len(), 50);
            for sample in &corpus {
                check_parallel_sample(&w, sample).unwrap();
            }
        }
    }

    #[test]
    fn durations_and_lengths_stay_in_range() {
        let w = world();
        let corpus = generate_parallel_corpus(&w, 200, Direction::A2B, 3);
        let (smin, smax) = w.config.sentence_length_range;
        let (dmin, dmax) = w.config.duration_range;
        for sample in &corpus {
            assert!(sample.source_text.len() >= smin && sample.source_text.len() <= smax);
            assert_eq!(sample.source_text.len(), sample.target_text.len());
            // Unit run lengths within each word stay inside duration_range;
            // check globally via run lengths of the raw stream, which can
            // only merge runs across equal adjacent units, never shorten.
            let mut run = 1usize;
            for i in 1..sample.source_units.len() {
                if sample.source_units[i] == sample.source_units[i - 1] {
                    run += 1;
                } else {
                    assert!(run >= dmin && run <= 2 * dmax);
                    run = 1;
                }
            }
        }
    }

    #[test]
    fn segmentation_ignores_duration_repeats() {
        let w = world();
        let corpus = generate_parallel_corpus(&w, 20, Direction::A2B, 17);
        for sample in &corpus {
            let collapsed = collapse_runs(&sample.source_units);
            let from_raw = w.segment(Language::A, &sample.source_units).unwrap();
            let from_collapsed = w.segment(Language::A, &collapsed).unwrap();
            assert_eq!(from_raw, from_collapsed);
        }
    }

    #[test]
    fn segmentation_rejects_foreign_streams() {
        let w = world();
        assert!(w.segment(Language::A, &[]).is_err());
        // A stream starting with a body unit has no leading word boundary.
        let body = initial_count(w.config.alphabet_a) as UnitId;
        assert!(w.segment(Language::A, &[body]).is_err());
    }

    #[test]
    fn tri_task_expansion_matches_the_recipe() {
        let w = world();
        let sample = &generate_parallel_corpus(&w, 1, Direction::A2B, 5)[0];
        let examples = derive_tri_task(sample);
        assert_eq!(examples.len(), 5);
        let tasks: Vec<Task> = examples.iter().map(|e| e.task).collect();
        assert_eq!(
            tasks,
            vec![Task::Asr, Task::Asr, Task::S2t, Task::S2t, Task::S2st]
        );

        assert_eq!(examples[0].input, sample.source_units);
        assert_eq!(examples[0].output, TaskOutput::Text(sample.source_text.clone()));
        assert_eq!(examples[1].output, TaskOutput::Text(sample.target_text.clone()));

        // Translating the reverse-direction text output must recover the
        // other side, by the inverse dictionary.
        let TaskOutput::Text(ref back) = examples[3].output else {
            panic!("S2T output must be text");
        };
        assert_eq!(back, &sample.source_text);
        assert_eq!(
            w.translate_text(Direction::B2A, &sample.target_text).unwrap(),
            sample.source_text
        );

        let TaskOutput::Units(ref units) = examples[4].output else {
            panic!("S2ST output must be units");
        };
        assert_eq!(units, &sample.target_units);
    }

    #[test]
    fn monolingual_corpus_behaves() {
        let w = world();
        assert!(generate_monolingual_corpus(&w, Language::B, 0, 1).is_empty());
        let a = generate_monolingual_corpus(&w, Language::A, 30, 21);
        let b = generate_monolingual_corpus(&w, Language::A, 30, 21);
        assert_eq!(a, b);
        for utterance in &a {
            let transcript = w.transcribe(utterance.language, &utterance.units).unwrap();
            assert_eq!(transcript, utterance.transcript);
        }
        // Different language or seed moves the stream.
        let c = generate_monolingual_corpus(&w, Language::B, 30, 21);
        assert_ne!(a[0].units, c[0].units);
    }

    #[test]
    fn world_serialization_round_trips() {
        let w = world();
        let json = serde_json::to_string(&w).unwrap();
        let back: SyntheticWorld = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
