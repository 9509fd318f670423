//! Step 2 of the pipeline: build preference pairs by round-trip scoring.
//!
//! For each monolingual source utterance the fine-tuned model samples
//! translation candidates, back-translates each one with the same model,
//! and scores the back-translation against the source (oracle transcripts
//! for the text metrics, detokenized frames for MCD). When the oriented
//! scores of the best and worst candidate differ by more than the margin
//! `delta`, the pair is kept with the higher-scored candidate as preferred.
//! No target references are ever read; the judge is the model itself.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{SyntheticWorld, Task, Utterance};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::metrics::{bleu, mcd, meteor_lite, wer, MetricKind, MetricScore, Smoothing};
use crate::model::{checkpoint_sha256, sample, CheckpointRole, DecodeConfig, ModelCheckpoint};
use crate::rng::{derive_seed, tag};
use crate::sft::{checkpoint_variant, generation_prompt, parse_s2st_response};
use crate::tokenizer::{detokenize, special};
use crate::types::{Direction, UnitId, UnitSequence};

/// Attempts per candidate slot after the first decode parses malformed.
pub const MALFORMED_RETRY_CAP: usize = 3;

/// Default margin per metric, in oriented-score units.
///
/// WER and METEOR move on a roughly unit scale, BLEU on a 0 to 100 scale,
/// MCD in decibels, so one margin value cannot serve all four.
pub fn default_delta(metric: MetricKind) -> f64 {
    match metric {
        MetricKind::Wer | MetricKind::Meteor => 0.1,
        MetricKind::Bleu => 2.0,
        MetricKind::Mcd => 0.5,
    }
}

/// Controls for one dataset construction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrefDataConfig {
    pub metric: MetricKind,
    /// Margin the oriented score difference must exceed for a pair to form.
    pub delta: f64,
    /// Candidates sampled per source; the pair is best versus worst.
    pub candidates: usize,
    /// Decoding for candidate generation. Sampling keeps the candidates
    /// diverse; a greedy setting produces identical candidates and no pairs.
    pub decode: DecodeConfig,
    /// Decoding for the back-translation judge, greedy by default so the
    /// same candidate always earns the same score.
    pub back_decode: DecodeConfig,
    pub seed: u64,
    /// Identifier of the source corpus recorded in provenance.
    pub corpus_id: String,
}

impl Default for PrefDataConfig {
    fn default() -> PrefDataConfig {
        PrefDataConfig {
            metric: MetricKind::Bleu,
            delta: default_delta(MetricKind::Bleu),
            candidates: 2,
            decode: DecodeConfig::default(),
            back_decode: DecodeConfig {
                greedy: true,
                ..DecodeConfig::default()
            },
            seed: 0,
            corpus_id: String::new(),
        }
    }
}

/// One sampled translation candidate with its decode metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledCandidate {
    pub units: UnitSequence,
    /// The derived seed this candidate was decoded with.
    pub seed: u64,
    pub truncated: bool,
}

/// A candidate together with its back-translation and round-trip score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub source: Utterance,
    pub candidate: UnitSequence,
    /// Empty when the back-translation decode was malformed; the score is
    /// then the worst sentinel.
    pub back_translation: UnitSequence,
    pub score: MetricScore,
    pub seed: u64,
    pub truncated: bool,
}

/// One preference pair, serialized as one JSON line of the dataset.
///
/// `e_p` and `e_r` are oriented scores, so `e_p - e_r > delta` holds for
/// every stored pair regardless of the metric's native direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub source_units: UnitSequence,
    pub preferred_units: UnitSequence,
    pub rejected_units: UnitSequence,
    pub e_p: f64,
    pub e_r: f64,
    pub metric: MetricKind,
    pub delta: f64,
}

/// A source that produced no pair, with the reason it was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSource {
    pub index: usize,
    pub reason: String,
}

/// Where a dataset came from: enough to reproduce it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub checkpoint_sha256: String,
    pub metric: MetricKind,
    pub delta: f64,
    pub seed: u64,
    pub source_corpus: String,
    pub direction: Direction,
    pub candidate_count: usize,
    pub skipped: Vec<SkippedSource>,
}

/// Preference pairs plus the provenance of their construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub provenance: DatasetProvenance,
}

/// Reject checkpoints that have not been through supervised fine-tuning.
/// Preference-optimized checkpoints stay eligible so construction can be
/// iterated.
pub(crate) fn check_tuned_role(model: &ModelCheckpoint) -> Result<()> {
    match model.role {
        CheckpointRole::Sft | CheckpointRole::Po => Ok(()),
        CheckpointRole::Base => Err(Error::ModelInput(
            "this step needs a fine-tuned checkpoint, got an untuned base model".into(),
        )),
    }
}

/// Sample `count` translation candidates for one source utterance.
///
/// Each candidate slot decodes with its own derived seed. A decode whose
/// response does not parse under the model's prompt format (for chain, a
/// missing modality separator) is resampled with a fresh seed up to
/// [`MALFORMED_RETRY_CAP`] extra attempts, then reported as an error so the
/// caller can skip the source.
pub fn sample_candidates(
    model: &ModelCheckpoint,
    source: &Utterance,
    direction: Direction,
    count: usize,
    decode: &DecodeConfig,
) -> Result<Vec<SampledCandidate>> {
    check_tuned_role(model)?;
    if count < 2 {
        return Err(Error::Config(format!(
            "need at least 2 candidates per source, got {count}"
        )));
    }
    if source.language != direction.source() {
        return Err(Error::Data(format!(
            "source utterance is in language {} but direction {} starts from {}",
            source.language.tag(),
            direction,
            direction.source().tag()
        )));
    }
    let variant = checkpoint_variant(model)?;
    let vocabulary = &model.vocabulary;
    let prompt = generation_prompt(Task::S2st, source.language, &source.units, vocabulary)?;
    let stop = vocabulary.require(special::END)?;
    let mut out = Vec::with_capacity(count);
    for slot in 0..count {
        let mut kept = None;
        for attempt in 0..=MALFORMED_RETRY_CAP {
            let seed = derive_seed(
                decode.seed,
                &[tag("candidate"), slot as u64, attempt as u64],
            );
            let cfg = DecodeConfig {
                seed,
                stop_tokens: vec![stop],
                ..decode.clone()
            };
            let outcome = sample(model, &prompt, &cfg)?;
            if let Ok(parsed) =
                parse_s2st_response(&outcome.tokens, variant, direction.target(), vocabulary)
            {
                kept = Some(SampledCandidate {
                    units: parsed.units,
                    seed,
                    truncated: outcome.truncated,
                });
                break;
            }
        }
        match kept {
            Some(candidate) => out.push(candidate),
            None => {
                return Err(Error::Data(format!(
                    "candidate {slot}: no well-formed decode in {} attempts",
                    MALFORMED_RETRY_CAP + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Translate a candidate back to the source language with the same model.
///
/// `direction` is the forward direction the candidate was produced under;
/// the decode runs the reverse task. A malformed response is an error, which
/// the pair builder turns into the worst-score sentinel.
pub fn back_translate(
    model: &ModelCheckpoint,
    candidate: &[UnitId],
    direction: Direction,
    decode: &DecodeConfig,
) -> Result<UnitSequence> {
    check_tuned_role(model)?;
    let variant = checkpoint_variant(model)?;
    let vocabulary = &model.vocabulary;
    let reverse = direction.reversed();
    let prompt = generation_prompt(Task::S2st, reverse.source(), candidate, vocabulary)?;
    let stop = vocabulary.require(special::END)?;
    let cfg = DecodeConfig {
        stop_tokens: vec![stop],
        ..decode.clone()
    };
    let outcome = sample(model, &prompt, &cfg)?;
    let parsed = parse_s2st_response(&outcome.tokens, variant, reverse.target(), vocabulary)?;
    Ok(parsed.units)
}

/// Score a back-translation against its source.
///
/// Text metrics compare oracle transcripts of the two unit sequences; MCD
/// compares their detokenized frame sequences. Anything unscorable (a unit
/// sequence that does not segment into known words, an empty frame
/// sequence) earns the worst-score sentinel rather than an error.
pub fn score_candidate(
    source: &Utterance,
    back_translation: &[UnitId],
    metric: MetricKind,
    world: &SyntheticWorld,
) -> MetricScore {
    let language = source.language;
    let raw = match metric {
        MetricKind::Mcd => {
            let codebook = world.codebook(language);
            let reference = detokenize(&source.units, codebook);
            let hypothesis = detokenize(back_translation, codebook);
            match (reference, hypothesis) {
                (Ok(reference), Ok(hypothesis)) => mcd(&reference, &hypothesis),
                _ => return MetricScore::worst(metric),
            }
        }
        _ => {
            let reference = world.transcribe(language, &source.units);
            let hypothesis = world.transcribe(language, back_translation);
            let (reference, hypothesis) = match (reference, hypothesis) {
                (Ok(reference), Ok(hypothesis)) => (reference, hypothesis),
                _ => return MetricScore::worst(metric),
            };
            match metric {
                MetricKind::Wer => wer(&reference, &hypothesis),
                MetricKind::Bleu => Ok(bleu(
                    &[reference.as_slice()],
                    &hypothesis,
                    4,
                    Smoothing::AddOne,
                )),
                MetricKind::Meteor => Ok(meteor_lite(&reference, &hypothesis)),
                MetricKind::Mcd => unreachable!(),
            }
        }
    };
    match raw {
        Ok(raw) => MetricScore::new(metric, raw),
        Err(_) => MetricScore::worst(metric),
    }
}

/// Pick the preference pair out of one source's scored candidates, or
/// explain why none forms. Best versus worst by oriented score; ties keep
/// the first best and the last worst so two distinct records are compared
/// whenever there are two, and the choice is deterministic.
fn select_pair(records: &[CandidateRecord], delta: f64) -> std::result::Result<PreferencePair, String> {
    let mut best = 0;
    let mut worst = 0;
    for (i, record) in records.iter().enumerate() {
        if record.score.oriented > records[best].score.oriented {
            best = i;
        }
        if record.score.oriented <= records[worst].score.oriented {
            worst = i;
        }
    }
    let (preferred, rejected) = (&records[best], &records[worst]);
    if preferred.candidate == rejected.candidate {
        return Err("candidates are identical".into());
    }
    if preferred.score.is_worst_sentinel() {
        return Err("no candidate could be scored".into());
    }
    let margin = preferred.score.oriented - rejected.score.oriented;
    if !(margin > delta) {
        return Err(format!(
            "margin {margin:.6} does not clear delta {delta}"
        ));
    }
    Ok(PreferencePair {
        source_units: preferred.source.units.clone(),
        preferred_units: preferred.candidate.clone(),
        rejected_units: rejected.candidate.clone(),
        e_p: preferred.score.oriented,
        e_r: rejected.score.oriented,
        metric: preferred.score.metric,
        delta,
    })
}

/// Build a preference dataset from monolingual sources.
///
/// Per source: sample candidates, back-translate and score each, and keep
/// the best-versus-worst pair when its margin clears `delta`. Sources that
/// produce no pair are recorded in the provenance with a reason; nothing
/// past the argument checks is fatal. The whole construction is a pure
/// function of (checkpoint, world, sources, direction, config).
pub fn build_preference_pairs(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    sources: &[Utterance],
    direction: Direction,
    cfg: &PrefDataConfig,
) -> Result<PreferenceDataset> {
    check_tuned_role(model)?;
    checkpoint_variant(model)?;
    if !(cfg.delta > 0.0) {
        return Err(Error::Config(format!(
            "margin delta must be positive, got {}",
            cfg.delta
        )));
    }
    if cfg.candidates < 2 {
        return Err(Error::Config(format!(
            "need at least 2 candidates per source, got {}",
            cfg.candidates
        )));
    }
    for (index, source) in sources.iter().enumerate() {
        if source.language != direction.source() {
            return Err(Error::Data(format!(
                "source {index} is in language {} but direction {} starts from {}",
                source.language.tag(),
                direction,
                direction.source().tag()
            )));
        }
    }

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (index, source) in sources.iter().enumerate() {
        let decode = DecodeConfig {
            seed: derive_seed(cfg.seed, &[tag("prefdata"), tag("source"), index as u64]),
            ..cfg.decode.clone()
        };
        let candidates =
            match sample_candidates(model, source, direction, cfg.candidates, &decode) {
                Ok(candidates) => candidates,
                Err(error) => {
                    skipped.push(SkippedSource {
                        index,
                        reason: error.to_string(),
                    });
                    continue;
                }
            };
        let records: Vec<CandidateRecord> = candidates
            .into_iter()
            .map(|candidate| {
                let (back_translation, score) =
                    match back_translate(model, &candidate.units, direction, &cfg.back_decode) {
                        Ok(back) => {
                            let score = score_candidate(source, &back, cfg.metric, world);
                            (back, score)
                        }
                        Err(_) => (Vec::new(), MetricScore::worst(cfg.metric)),
                    };
                CandidateRecord {
                    source: source.clone(),
                    candidate: candidate.units,
                    back_translation,
                    score,
                    seed: candidate.seed,
                    truncated: candidate.truncated,
                }
            })
            .collect();
        match select_pair(&records, cfg.delta) {
            Ok(pair) => pairs.push(pair),
            Err(reason) => skipped.push(SkippedSource { index, reason }),
        }
    }

    Ok(PreferenceDataset {
        pairs,
        provenance: DatasetProvenance {
            checkpoint_sha256: checkpoint_sha256(model)?,
            metric: cfg.metric,
            delta: cfg.delta,
            seed: cfg.seed,
            source_corpus: cfg.corpus_id.clone(),
            direction,
            candidate_count: cfg.candidates,
            skipped,
        },
    })
}

fn provenance_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("provenance.json")
}

/// Write pairs as JSON lines plus a `.provenance.json` sidecar.
pub fn save_dataset(path: &Path, dataset: &PreferenceDataset) -> Result<()> {
    write_jsonl(path, &dataset.pairs)?;
    let sidecar = provenance_path(path);
    let doc = serde_json::to_string_pretty(&dataset.provenance)
        .map_err(|e| Error::parse(&sidecar, e.to_string()))?;
    std::fs::write(&sidecar, doc).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

/// Read a dataset back and re-check the pair invariants.
pub fn load_dataset(path: &Path) -> Result<PreferenceDataset> {
    let pairs: Vec<PreferencePair> = read_jsonl(path)?;
    let sidecar = provenance_path(path);
    let doc = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let provenance: DatasetProvenance =
        serde_json::from_str(&doc).map_err(|e| Error::parse(&sidecar, e.to_string()))?;
    for (line, pair) in pairs.iter().enumerate() {
        if !(pair.e_p - pair.e_r > pair.delta) {
            return Err(Error::Data(format!(
                "pair {line} violates its margin: e_p {} minus e_r {} is not above delta {}",
                pair.e_p, pair.e_r, pair.delta
            )));
        }
        if pair.preferred_units == pair.rejected_units {
            return Err(Error::Data(format!(
                "pair {line} has identical preferred and rejected candidates"
            )));
        }
    }
    Ok(PreferenceDataset { pairs, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::WORST_ORIENTED;
    use crate::testutil::{tiny_world, trained_chain, trained_vanilla};
    use crate::types::Language;

    fn concat_words(world: &SyntheticWorld, language: Language, ids: &[usize]) -> UnitSequence {
        ids.iter()
            .flat_map(|&w| world.words(language)[w].iter().copied())
            .collect()
    }

    fn utterance_of(world: &SyntheticWorld, language: Language, ids: &[usize]) -> Utterance {
        Utterance {
            units: concat_words(world, language, ids),
            transcript: ids
                .iter()
                .map(|&w| world.labels(language)[w].clone())
                .collect(),
            language,
        }
    }

    #[test]
    fn identity_back_translation_scores_best() {
        let world = tiny_world();
        let source = utterance_of(&world, Language::A, &[0, 1, 2, 3]);
        let wer = score_candidate(&source, &source.units, MetricKind::Wer, &world);
        assert_eq!(wer.oriented, 0.0);
        let bleu = score_candidate(&source, &source.units, MetricKind::Bleu, &world);
        assert_eq!(bleu.oriented, 100.0);
        let meteor = score_candidate(&source, &source.units, MetricKind::Meteor, &world);
        assert!(meteor.oriented > 0.98 && meteor.oriented <= 1.0);
        let mcd = score_candidate(&source, &source.units, MetricKind::Mcd, &world);
        assert_eq!(mcd.oriented, 0.0);
    }

    #[test]
    fn one_word_of_four_costs_a_quarter_wer() {
        let world = tiny_world();
        let source = utterance_of(&world, Language::A, &[0, 1, 2, 3]);
        let hypothesis = concat_words(&world, Language::A, &[0, 1, 2, 4]);
        let score = score_candidate(&source, &hypothesis, MetricKind::Wer, &world);
        assert_eq!(score.raw, 0.25);
        assert_eq!(score.oriented, -0.25);
    }

    #[test]
    fn unscorable_back_translations_get_the_sentinel() {
        let world = tiny_world();
        let source = utterance_of(&world, Language::A, &[0, 1]);
        // Strip the word-initial unit so segmentation fails.
        let unsegmentable = source.units[1..].to_vec();
        for metric in [MetricKind::Wer, MetricKind::Bleu, MetricKind::Meteor] {
            let score = score_candidate(&source, &unsegmentable, metric, &world);
            assert!(score.is_worst_sentinel(), "{metric} missed the sentinel");
        }
        let empty = score_candidate(&source, &[], MetricKind::Mcd, &world);
        assert!(empty.is_worst_sentinel());
    }

    #[test]
    fn candidate_slots_use_distinct_seeds() {
        let fx = trained_vanilla();
        let source = fx.corpus[0].clone();
        let utterance = Utterance {
            units: source.source_units.clone(),
            transcript: source.source_text.clone(),
            language: Direction::A2B.source(),
        };
        let decode = DecodeConfig {
            seed: 9,
            ..DecodeConfig::default()
        };
        let candidates =
            sample_candidates(&fx.model, &utterance, Direction::A2B, 2, &decode).unwrap();
        assert_eq!(candidates.len(), 2);
        assert_ne!(candidates[0].seed, candidates[1].seed);
        let again = sample_candidates(&fx.model, &utterance, Direction::A2B, 2, &decode).unwrap();
        assert_eq!(candidates, again);
    }

    #[test]
    fn chain_candidates_are_unit_segments() {
        let fx = trained_chain();
        let sample = &fx.corpus[0];
        let utterance = Utterance {
            units: sample.source_units.clone(),
            transcript: sample.source_text.clone(),
            language: Direction::A2B.source(),
        };
        let decode = DecodeConfig {
            greedy: true,
            ..DecodeConfig::default()
        };
        let candidates =
            sample_candidates(&fx.model, &utterance, Direction::A2B, 2, &decode).unwrap();
        // The fixture memorizes its training set, so the greedy decode is the
        // reference response and the extracted candidate is its unit segment.
        assert_eq!(candidates[0].units, sample.target_units);
        assert_eq!(candidates[0].units, candidates[1].units);
    }

    #[test]
    fn retries_exhaust_on_a_format_mismatch() {
        // A vanilla-trained model never emits a modality separator, so
        // reading it as a chain model makes every decode malformed.
        let fx = trained_vanilla();
        let mut mislabeled = fx.model.clone();
        mislabeled.prompt_format = Some("chain".into());
        let utterance = Utterance {
            units: fx.corpus[0].source_units.clone(),
            transcript: fx.corpus[0].source_text.clone(),
            language: Language::A,
        };
        let err = sample_candidates(
            &mislabeled,
            &utterance,
            Direction::A2B,
            2,
            &DecodeConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("4 attempts"), "{err}");
    }

    #[test]
    fn back_translation_returns_source_language_units() {
        let fx = trained_vanilla();
        let sample = &fx.corpus[0];
        let greedy = DecodeConfig {
            greedy: true,
            ..DecodeConfig::default()
        };
        let back = back_translate(&fx.model, &sample.target_units, Direction::A2B, &greedy).unwrap();
        assert!(!back.is_empty());
        // The parser enforced the token range; transcription confirms the
        // units line up with real language A words.
        assert!(fx.world.transcribe(Language::A, &back).is_ok());
    }

    #[test]
    fn base_checkpoints_are_rejected() {
        let fx = trained_vanilla();
        let mut base = fx.model.clone();
        base.role = CheckpointRole::Base;
        let utterance = Utterance {
            units: fx.corpus[0].source_units.clone(),
            transcript: fx.corpus[0].source_text.clone(),
            language: Language::A,
        };
        assert!(sample_candidates(
            &base,
            &utterance,
            Direction::A2B,
            2,
            &DecodeConfig::default()
        )
        .is_err());
        assert!(back_translate(&base, &[0], Direction::A2B, &DecodeConfig::default()).is_err());
    }

    fn record(score: MetricScore, units: &[UnitId]) -> CandidateRecord {
        CandidateRecord {
            source: Utterance {
                units: vec![0, 1],
                transcript: vec!["w".into()],
                language: Language::A,
            },
            candidate: units.to_vec(),
            back_translation: Vec::new(),
            score,
            seed: 0,
            truncated: false,
        }
    }

    #[test]
    fn selection_prefers_the_higher_oriented_score() {
        let records = vec![
            record(MetricScore::new(MetricKind::Meteor, 0.6), &[1]),
            record(MetricScore::new(MetricKind::Meteor, 0.4), &[2]),
        ];
        let pair = select_pair(&records, 0.1).unwrap();
        assert_eq!(pair.preferred_units, vec![1]);
        assert_eq!(pair.rejected_units, vec![2]);
        assert_eq!(pair.e_p, 0.6);
        assert_eq!(pair.e_r, 0.4);
    }

    #[test]
    fn selection_skips_unmet_margins_and_duplicates() {
        let equal = vec![
            record(MetricScore::new(MetricKind::Meteor, 0.5), &[1]),
            record(MetricScore::new(MetricKind::Meteor, 0.5), &[2]),
        ];
        assert!(select_pair(&equal, 0.1).unwrap_err().contains("margin"));

        let close = vec![
            record(MetricScore::new(MetricKind::Meteor, 0.55), &[1]),
            record(MetricScore::new(MetricKind::Meteor, 0.5), &[2]),
        ];
        assert!(select_pair(&close, 0.1).unwrap_err().contains("margin"));

        let duplicate = vec![
            record(MetricScore::new(MetricKind::Meteor, 0.9), &[1]),
            record(MetricScore::new(MetricKind::Meteor, 0.1), &[1]),
        ];
        assert!(select_pair(&duplicate, 0.1)
            .unwrap_err()
            .contains("identical"));
    }

    #[test]
    fn sentinels_are_only_ever_rejected() {
        let one_sentinel = vec![
            record(MetricScore::worst(MetricKind::Wer), &[1]),
            record(MetricScore::new(MetricKind::Wer, 0.5), &[2]),
        ];
        let pair = select_pair(&one_sentinel, 0.1).unwrap();
        assert_eq!(pair.preferred_units, vec![2]);
        assert_eq!(pair.e_r, WORST_ORIENTED);

        let both = vec![
            record(MetricScore::worst(MetricKind::Wer), &[1]),
            record(MetricScore::worst(MetricKind::Wer), &[2]),
        ];
        assert!(select_pair(&both, 0.1).is_err());
    }

    #[test]
    fn extra_candidates_pair_best_against_worst() {
        let records = vec![
            record(MetricScore::new(MetricKind::Meteor, 0.5), &[1]),
            record(MetricScore::new(MetricKind::Meteor, 0.9), &[2]),
            record(MetricScore::new(MetricKind::Meteor, 0.2), &[3]),
        ];
        let pair = select_pair(&records, 0.1).unwrap();
        assert_eq!(pair.preferred_units, vec![2]);
        assert_eq!(pair.rejected_units, vec![3]);
    }

    fn fixture_sources(n: usize) -> Vec<Utterance> {
        let fx = trained_vanilla();
        crate::corpus::generate_monolingual_corpus(&fx.world, Language::A, n, 33)
    }

    #[test]
    fn datasets_are_deterministic() {
        let fx = trained_vanilla();
        let sources = fixture_sources(4);
        let cfg = PrefDataConfig {
            metric: MetricKind::Wer,
            delta: 0.05,
            seed: 17,
            ..PrefDataConfig::default()
        };
        let first = build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &cfg)
            .unwrap();
        let second = build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &cfg)
            .unwrap();
        assert_eq!(first, second);
        assert_eq!(
            first.provenance.checkpoint_sha256,
            checkpoint_sha256(&fx.model).unwrap()
        );
    }

    #[test]
    fn margins_hold_and_tighten_with_delta() {
        let fx = trained_vanilla();
        let sources = fixture_sources(8);
        let narrow = PrefDataConfig {
            metric: MetricKind::Wer,
            delta: 1e-6,
            seed: 40,
            ..PrefDataConfig::default()
        };
        let wide = PrefDataConfig {
            delta: 1.5,
            ..narrow.clone()
        };
        let loose = build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &narrow)
            .unwrap();
        let tight = build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &wide)
            .unwrap();
        assert!(!loose.pairs.is_empty(), "no pair cleared a tiny margin");
        assert!(loose.pairs.len() <= sources.len());
        assert!(tight.pairs.len() <= loose.pairs.len());
        for pair in loose.pairs.iter().chain(&tight.pairs) {
            assert!(pair.e_p - pair.e_r > pair.delta);
            assert_ne!(pair.preferred_units, pair.rejected_units);
        }
        assert_eq!(
            loose.pairs.len() + loose.provenance.skipped.len(),
            sources.len()
        );
    }

    #[test]
    fn greedy_candidates_never_pair() {
        let fx = trained_vanilla();
        let sources = fixture_sources(3);
        let cfg = PrefDataConfig {
            metric: MetricKind::Wer,
            delta: 0.05,
            decode: DecodeConfig {
                greedy: true,
                ..DecodeConfig::default()
            },
            ..PrefDataConfig::default()
        };
        let dataset =
            build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &cfg).unwrap();
        assert!(dataset.pairs.is_empty());
        assert_eq!(dataset.provenance.skipped.len(), sources.len());
        for skip in &dataset.provenance.skipped {
            assert!(skip.reason.contains("identical"), "{}", skip.reason);
        }
    }

    #[test]
    fn bad_arguments_are_config_errors() {
        let fx = trained_vanilla();
        let sources = fixture_sources(1);
        let zero_delta = PrefDataConfig {
            delta: 0.0,
            ..PrefDataConfig::default()
        };
        assert!(matches!(
            build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &zero_delta),
            Err(Error::Config(_))
        ));
        let one_candidate = PrefDataConfig {
            candidates: 1,
            ..PrefDataConfig::default()
        };
        assert!(matches!(
            build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &one_candidate),
            Err(Error::Config(_))
        ));
        // Language A sources cannot seed a B-to-A run.
        assert!(build_preference_pairs(
            &fx.model,
            &fx.world,
            &sources,
            Direction::B2A,
            &PrefDataConfig::default()
        )
        .is_err());
    }

    #[test]
    fn datasets_round_trip_through_disk() {
        let fx = trained_vanilla();
        let sources = fixture_sources(4);
        let cfg = PrefDataConfig {
            metric: MetricKind::Wer,
            delta: 1e-6,
            seed: 40,
            corpus_id: "mono-a-33".into(),
            ..PrefDataConfig::default()
        };
        let dataset =
            build_preference_pairs(&fx.model, &fx.world, &sources, Direction::A2B, &cfg).unwrap();
        assert!(!dataset.pairs.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_dataset(&path, &dataset).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(dataset, loaded);
        assert!(dir.path().join("pairs.provenance.json").exists());

        let line = serde_json::to_string(&dataset.pairs[0]).unwrap();
        for field in [
            "source_units",
            "preferred_units",
            "rejected_units",
            "e_p",
            "e_r",
            "metric",
            "delta",
        ] {
            assert!(line.contains(field), "missing {field} in {line}");
        }
    }

    #[test]
    fn corrupted_pairs_fail_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let dataset = PreferenceDataset {
            pairs: vec![PreferencePair {
                source_units: vec![0],
                preferred_units: vec![1],
                rejected_units: vec![1],
                e_p: 0.9,
                e_r: 0.1,
                metric: MetricKind::Meteor,
                delta: 0.1,
            }],
            provenance: DatasetProvenance {
                checkpoint_sha256: "0".repeat(64),
                metric: MetricKind::Meteor,
                delta: 0.1,
                seed: 0,
                source_corpus: String::new(),
                direction: Direction::A2B,
                candidate_count: 2,
                skipped: Vec::new(),
            },
        };
        save_dataset(&path, &dataset).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("identical"));
    }

    #[test]
    fn default_margins_match_each_metric_scale() {
        assert_eq!(default_delta(MetricKind::Wer), 0.1);
        assert_eq!(default_delta(MetricKind::Meteor), 0.1);
        assert_eq!(default_delta(MetricKind::Bleu), 2.0);
        assert_eq!(default_delta(MetricKind::Mcd), 0.5);
    }
}
