//! Evaluation harness: ASR-BLEU for speech output, text BLEU for
//! translation, and a cascaded synthesis baseline.
//!
//! Speech hypotheses cannot be compared to reference text directly, so the
//! harness transcribes them first with the world's exact inverse mapping
//! (the stand-in for an external recognizer) and scores corpus BLEU over
//! the transcripts. Decoding is always greedy here, which makes every
//! report a deterministic function of checkpoint and test set. Outputs
//! that fail to parse or transcribe stay in the report as empty hypotheses
//! rather than being dropped, so malformed speech costs BLEU instead of
//! shrinking the test set.

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelSample, SyntheticWorld, Task};
use crate::error::{Error, Result};
use crate::metrics::CorpusBleu;
use crate::model::{
    checkpoint_sha256, sample, DecodeConfig, ModelCheckpoint, SampleOutcome,
};
use crate::prefdata::check_tuned_role;
use crate::sft::{
    checkpoint_variant, generation_prompt, parse_s2st_response, parse_text_response,
    PromptVariant,
};
use crate::tokenizer::special;
use crate::types::{Direction, Language, UnitId, UnitSequence};

/// System tag for reports produced by a single end-to-end model.
pub const SYSTEM_DIRECT: &str = "direct";
/// System tag for the two-stage synthesis baseline.
pub const SYSTEM_CASCADED: &str = "cascaded";

/// One scored sentence. An empty hypothesis records a decode that failed
/// to parse or transcribe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

/// The outcome of evaluating one checkpoint on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub direction: Direction,
    pub task: Task,
    /// Corpus BLEU over transcribed speech (S2ST) or decoded text (S2T).
    pub corpus_bleu: f64,
    /// For cascaded runs, the text BLEU of the first stage before
    /// synthesis.
    pub text_bleu: Option<f64>,
    pub sentence_count: usize,
    pub sentences: Vec<SentenceRecord>,
    pub checkpoint_sha256: String,
    pub decode: DecodeConfig,
    /// Decodes whose response did not parse under the prompt format.
    pub parse_failures: usize,
    /// Parsed outputs that could not be transcribed or synthesized.
    pub unsegmentable: usize,
}

/// Recompute the corpus BLEU of a report from its stored sentences.
///
/// Scoring is a pure function of the records, so this always reproduces
/// `corpus_bleu` and gives downstream tooling a cheap integrity check.
pub fn rescore(report: &EvalReport) -> f64 {
    let mut bleu = CorpusBleu::new(4);
    for sentence in &report.sentences {
        bleu.push(&[sentence.reference.as_slice()], &sentence.hypothesis);
    }
    bleu.score()
}

/// Transcribe a unit sequence with the world's exact inverse mapping.
///
/// Empty input is an empty transcript; a sequence that does not segment
/// into inventory words is an error for the caller to count.
pub fn oracle_asr(
    world: &SyntheticWorld,
    language: Language,
    units: &[UnitId],
) -> Result<Vec<String>> {
    if units.is_empty() {
        return Ok(Vec::new());
    }
    world.transcribe(language, units)
}

/// Synthesize a unit sequence for a label sentence: inventory lookup plus
/// deterministic duration expansion. The inverse of [`oracle_asr`] on any
/// inventory sentence.
pub fn oracle_tts(
    world: &SyntheticWorld,
    language: Language,
    labels: &[String],
) -> Result<UnitSequence> {
    let repeats = world.config.duration_range.0;
    let mut units = Vec::new();
    for label in labels {
        let word = world.word_of_label(language, label).ok_or_else(|| {
            Error::Data(format!(
                "`{label}` is not a word of language {}",
                language.tag()
            ))
        })?;
        for &unit in &world.words(language)[word] {
            for _ in 0..repeats {
                units.push(unit);
            }
        }
    }
    Ok(units)
}

/// The one direction shared by every sample of a test set.
fn test_direction(test_set: &[ParallelSample]) -> Result<Direction> {
    let first = test_set
        .first()
        .ok_or_else(|| Error::Data("cannot evaluate on an empty test set".into()))?;
    for (index, sample) in test_set.iter().enumerate() {
        if sample.direction != first.direction {
            return Err(Error::Data(format!(
                "test set mixes directions: sample {index} is {} but sample 0 is {}",
                sample.direction, first.direction
            )));
        }
    }
    Ok(first.direction)
}

/// Force the evaluation decode policy onto a config: greedy, stopping at
/// the end token.
fn eval_decode(model: &ModelCheckpoint, decode: &DecodeConfig) -> Result<DecodeConfig> {
    let end = model.vocabulary.require(special::END)?;
    Ok(DecodeConfig {
        greedy: true,
        stop_tokens: vec![end],
        ..decode.clone()
    })
}

/// Decode one prompt, mapping per-sentence decode errors (context
/// overflow) to a parse failure instead of aborting the run.
fn try_decode(
    model: &ModelCheckpoint,
    prompt: &[crate::tokenizer::TokenId],
    cfg: &DecodeConfig,
) -> Option<SampleOutcome> {
    sample(model, prompt, cfg).ok()
}

/// ASR-BLEU evaluation of end-to-end speech translation.
///
/// Greedy-decodes every test source, extracts the unit response (the
/// segment after the modality separator under chain), transcribes it, and
/// scores corpus BLEU against the reference target text.
pub fn eval_s2st(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    test_set: &[ParallelSample],
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    check_tuned_role(model)?;
    let variant = checkpoint_variant(model)?;
    let direction = test_direction(test_set)?;
    let vocabulary = &model.vocabulary;
    let cfg = eval_decode(model, decode)?;
    let mut parse_failures = 0;
    let mut unsegmentable = 0;
    let mut bleu = CorpusBleu::new(4);
    let mut sentences = Vec::with_capacity(test_set.len());
    for sample in test_set {
        let prompt =
            generation_prompt(Task::S2st, direction.source(), &sample.source_units, vocabulary)?;
        let parsed = try_decode(model, &prompt, &cfg).and_then(|out| {
            parse_s2st_response(&out.tokens, variant, direction.target(), vocabulary).ok()
        });
        let hypothesis = match parsed {
            Some(response) => match oracle_asr(world, direction.target(), &response.units) {
                Ok(labels) => labels,
                Err(_) => {
                    unsegmentable += 1;
                    Vec::new()
                }
            },
            None => {
                parse_failures += 1;
                Vec::new()
            }
        };
        bleu.push(&[sample.target_text.as_slice()], &hypothesis);
        sentences.push(SentenceRecord {
            hypothesis,
            reference: sample.target_text.clone(),
        });
    }
    Ok(EvalReport {
        system: SYSTEM_DIRECT.into(),
        direction,
        task: Task::S2st,
        corpus_bleu: bleu.score(),
        text_bleu: None,
        sentence_count: test_set.len(),
        sentences,
        checkpoint_sha256: checkpoint_sha256(model)?,
        decode: cfg,
        parse_failures,
        unsegmentable,
    })
}

/// Decode the text translation of one source under the given variant.
///
/// Tri-task models answer a dedicated text-translation prompt; chain
/// models emit text as the first half of their speech response. `None`
/// records a parse failure.
fn decode_text(
    model: &ModelCheckpoint,
    variant: PromptVariant,
    direction: Direction,
    source_units: &[UnitId],
    cfg: &DecodeConfig,
) -> Result<Option<Vec<String>>> {
    let vocabulary = &model.vocabulary;
    let text = match variant {
        PromptVariant::Vanilla => {
            return Err(Error::Unsupported(
                "a vanilla checkpoint emits no text; text evaluation needs tri-task or chain"
                    .into(),
            ))
        }
        PromptVariant::TriTask => {
            let prompt =
                generation_prompt(Task::S2t, direction.source(), source_units, vocabulary)?;
            try_decode(model, &prompt, cfg)
                .and_then(|out| parse_text_response(&out.tokens, vocabulary).ok())
        }
        PromptVariant::Chain => {
            let prompt =
                generation_prompt(Task::S2st, direction.source(), source_units, vocabulary)?;
            try_decode(model, &prompt, cfg)
                .and_then(|out| {
                    parse_s2st_response(&out.tokens, variant, direction.target(), vocabulary).ok()
                })
                .and_then(|response| response.text)
        }
    };
    Ok(text)
}

/// Text BLEU evaluation of speech-to-text translation.
///
/// Only variants that emit text support this; asking it of a vanilla
/// checkpoint is an unsupported-operation error.
pub fn eval_s2t(
    model: &ModelCheckpoint,
    test_set: &[ParallelSample],
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    check_tuned_role(model)?;
    let variant = checkpoint_variant(model)?;
    let direction = test_direction(test_set)?;
    let cfg = eval_decode(model, decode)?;
    let mut parse_failures = 0;
    let mut bleu = CorpusBleu::new(4);
    let mut sentences = Vec::with_capacity(test_set.len());
    for sample in test_set {
        let text = decode_text(model, variant, direction, &sample.source_units, &cfg)?;
        let hypothesis = match text {
            Some(labels) => labels,
            None => {
                parse_failures += 1;
                Vec::new()
            }
        };
        bleu.push(&[sample.target_text.as_slice()], &hypothesis);
        sentences.push(SentenceRecord {
            hypothesis,
            reference: sample.target_text.clone(),
        });
    }
    Ok(EvalReport {
        system: SYSTEM_DIRECT.into(),
        direction,
        task: Task::S2t,
        corpus_bleu: bleu.score(),
        text_bleu: None,
        sentence_count: test_set.len(),
        sentences,
        checkpoint_sha256: checkpoint_sha256(model)?,
        decode: cfg,
        parse_failures,
        unsegmentable: 0,
    })
}

/// The two-stage baseline: speech-to-text translation followed by oracle
/// synthesis, scored with the same ASR-BLEU as the end-to-end systems.
///
/// `corpus_bleu` is the ASR-BLEU after synthesis; `text_bleu` records the
/// first stage alone. A sentence whose decoded text cannot be synthesized
/// (a wrong-language label) becomes an empty speech hypothesis.
pub fn cascaded_baseline(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    test_set: &[ParallelSample],
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    check_tuned_role(model)?;
    let variant = checkpoint_variant(model)?;
    let direction = test_direction(test_set)?;
    let cfg = eval_decode(model, decode)?;
    let target = direction.target();
    let mut parse_failures = 0;
    let mut unsegmentable = 0;
    let mut speech_bleu = CorpusBleu::new(4);
    let mut text_bleu = CorpusBleu::new(4);
    let mut sentences = Vec::with_capacity(test_set.len());
    for sample in test_set {
        let text = decode_text(model, variant, direction, &sample.source_units, &cfg)?;
        let text = match text {
            Some(labels) => labels,
            None => {
                parse_failures += 1;
                Vec::new()
            }
        };
        text_bleu.push(&[sample.target_text.as_slice()], &text);
        let hypothesis = match oracle_tts(world, target, &text) {
            Ok(units) => match oracle_asr(world, target, &units) {
                Ok(labels) => labels,
                Err(_) => {
                    unsegmentable += 1;
                    Vec::new()
                }
            },
            Err(_) => {
                unsegmentable += 1;
                Vec::new()
            }
        };
        speech_bleu.push(&[sample.target_text.as_slice()], &hypothesis);
        sentences.push(SentenceRecord {
            hypothesis,
            reference: sample.target_text.clone(),
        });
    }
    Ok(EvalReport {
        system: SYSTEM_CASCADED.into(),
        direction,
        task: Task::S2st,
        corpus_bleu: speech_bleu.score(),
        text_bleu: Some(text_bleu.score()),
        sentence_count: test_set.len(),
        sentences,
        checkpoint_sha256: checkpoint_sha256(model)?,
        decode: cfg,
        parse_failures,
        unsegmentable,
    })
}

/// Render reports as an aligned text table, one row per report.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let mut rows = vec![[
        "system".to_string(),
        "direction".to_string(),
        "task".to_string(),
        "bleu".to_string(),
        "text-bleu".to_string(),
        "sentences".to_string(),
        "failures".to_string(),
    ]];
    for report in reports {
        let task = match report.task {
            Task::Asr => "asr",
            Task::S2t => "s2t",
            Task::S2st => "s2st",
        };
        rows.push([
            report.system.clone(),
            report.direction.to_string(),
            task.to_string(),
            format!("{:.2}", report.corpus_bleu),
            report
                .text_bleu
                .map_or_else(|| "-".to_string(), |b| format!("{b:.2}")),
            report.sentence_count.to_string(),
            (report.parse_failures + report.unsegmentable).to_string(),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &rows {
        for (column, cell) in row.iter().enumerate() {
            widths[column] = widths[column].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(column, cell)| format!("{cell:<width$}", width = widths[column]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
