//! Prompt formatting and supervised fine-tuning.
//!
//! Three prompt regimes share one sequence shape: a task marker, the input
//! unit tokens, a response separator, then the response. The vanilla
//! variant answers with target units directly; the chain variant first
//! writes the target text and then the target units behind a modality
//! separator; the tri-task variant trains recognition, translation, and
//! speech-to-speech examples side by side, distinguished only by their
//! marker. Loss applies to the response tokens alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_tri_task, ParallelSample, Task, TaskExample, TaskOutput};
use crate::error::{Error, Result};
use crate::model::{train_step_ce, CheckpointRole, ModelCheckpoint, Trainer, TrainSequence};
use crate::rng::{stream_rng, tag};
use crate::tokenizer::{special, TokenId, TokenVocabulary};
use crate::types::{Language, UnitId};
use rand::seq::SliceRandom;

/// The three prompt regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptVariant {
    Vanilla,
    TriTask,
    Chain,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 3] =
        [PromptVariant::Vanilla, PromptVariant::TriTask, PromptVariant::Chain];

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Vanilla => "vanilla",
            PromptVariant::TriTask => "tri-task",
            PromptVariant::Chain => "chain",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<PromptVariant> {
        match s {
            "vanilla" => Ok(PromptVariant::Vanilla),
            "tri-task" => Ok(PromptVariant::TriTask),
            "chain" => Ok(PromptVariant::Chain),
            other => Err(Error::Config(format!(
                "unknown prompt variant {other:?}, expected vanilla, tri-task, or chain"
            ))),
        }
    }
}

/// The prompt variant recorded in a fine-tuned checkpoint.
pub fn checkpoint_variant(model: &ModelCheckpoint) -> Result<PromptVariant> {
    match &model.prompt_format {
        Some(name) => name.parse(),
        None => Err(Error::Unsupported(
            "checkpoint does not record a prompt format; fine-tune it first".into(),
        )),
    }
}

/// One formatted training sequence with its response mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub tokens: Vec<TokenId>,
    /// True exactly on the response tokens, a contiguous suffix starting
    /// right after the response separator and ending at the end token.
    pub loss_mask: Vec<bool>,
    pub variant: PromptVariant,
    pub task: Task,
}

impl PromptExample {
    /// Number of leading tokens before the response, separator included.
    pub fn prompt_len(&self) -> usize {
        self.loss_mask
            .iter()
            .position(|&m| m)
            .unwrap_or(self.loss_mask.len())
    }

    /// The instruction prefix ending with the response separator.
    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len()]
    }

    /// The response suffix, end token included.
    pub fn response(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len()..]
    }

    pub(crate) fn into_sequence(self) -> TrainSequence {
        TrainSequence {
            tokens: self.tokens,
            loss_mask: self.loss_mask,
        }
    }
}

/// Input to [`format_prompt`]: a raw bilingual sample or one derived task
/// example.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptSource {
    Parallel(ParallelSample),
    Task(TaskExample),
}

fn unit_tokens(
    vocabulary: &TokenVocabulary,
    language: Language,
    units: &[UnitId],
) -> Result<Vec<TokenId>> {
    units
        .iter()
        .map(|&u| vocabulary.unit_token(language, u))
        .collect()
}

fn text_tokens(vocabulary: &TokenVocabulary, labels: &[String]) -> Result<Vec<TokenId>> {
    labels.iter().map(|l| vocabulary.require(l)).collect()
}

fn marker_name(task: Task) -> &'static str {
    match task {
        Task::Asr => special::TASK_ASR,
        Task::S2t => special::TASK_S2T,
        Task::S2st => special::TASK_S2ST,
    }
}

/// Assemble `[marker, input units, separator, response..., end]` with the
/// response mask.
fn assemble(
    vocabulary: &TokenVocabulary,
    task: Task,
    input_language: Language,
    input: &[UnitId],
    response: Vec<TokenId>,
    variant: PromptVariant,
) -> Result<PromptExample> {
    let mut tokens = vec![vocabulary.require(marker_name(task))?];
    tokens.extend(unit_tokens(vocabulary, input_language, input)?);
    tokens.push(vocabulary.require(special::RESPONSE)?);
    let prompt_len = tokens.len();
    tokens.extend(response);
    tokens.push(vocabulary.require(special::END)?);
    let loss_mask = (0..tokens.len()).map(|i| i >= prompt_len).collect();
    Ok(PromptExample {
        tokens,
        loss_mask,
        variant,
        task,
    })
}

/// Format one example under a prompt variant.
///
/// Vanilla and chain expect a parallel sample (vanilla also accepts a
/// derived speech-to-speech task example); tri-task expects a derived task
/// example. Any other pairing is a format error.
pub fn format_prompt(
    source: &PromptSource,
    variant: PromptVariant,
    vocabulary: &TokenVocabulary,
) -> Result<PromptExample> {
    match (variant, source) {
        (PromptVariant::Vanilla, PromptSource::Parallel(sample)) => {
            let response = unit_tokens(
                vocabulary,
                sample.direction.target(),
                &sample.target_units,
            )?;
            assemble(
                vocabulary,
                Task::S2st,
                sample.direction.source(),
                &sample.source_units,
                response,
                variant,
            )
        }
        (PromptVariant::Vanilla, PromptSource::Task(example)) => match &example.output {
            TaskOutput::Units(units) if example.task == Task::S2st => {
                let response =
                    unit_tokens(vocabulary, example.input_language.other(), units)?;
                assemble(
                    vocabulary,
                    Task::S2st,
                    example.input_language,
                    &example.input,
                    response,
                    variant,
                )
            }
            _ => Err(Error::Format(format!(
                "vanilla formatting needs a speech-to-speech example, got {:?}",
                example.task
            ))),
        },
        (PromptVariant::Chain, PromptSource::Parallel(sample)) => {
            let mut response = text_tokens(vocabulary, &sample.target_text)?;
            response.push(vocabulary.require(special::MODALITY_SEP)?);
            response.extend(unit_tokens(
                vocabulary,
                sample.direction.target(),
                &sample.target_units,
            )?);
            assemble(
                vocabulary,
                Task::S2st,
                sample.direction.source(),
                &sample.source_units,
                response,
                variant,
            )
        }
        (PromptVariant::Chain, PromptSource::Task(_)) => Err(Error::Format(
            "chain formatting needs a full parallel sample with target text and units".into(),
        )),
        (PromptVariant::TriTask, PromptSource::Task(example)) => {
            let response = match &example.output {
                TaskOutput::Text(labels) => text_tokens(vocabulary, labels)?,
                TaskOutput::Units(units) => {
                    unit_tokens(vocabulary, example.input_language.other(), units)?
                }
            };
            assemble(
                vocabulary,
                example.task,
                example.input_language,
                &example.input,
                response,
                variant,
            )
        }
        (PromptVariant::TriTask, PromptSource::Parallel(_)) => Err(Error::Format(
            "tri-task formatting works on derived task examples; derive them from the sample first"
                .into(),
        )),
    }
}

/// Format a parallel corpus under a variant: one example per sample for
/// vanilla and chain, the five derived task examples per sample for
/// tri-task.
pub fn format_corpus(
    samples: &[ParallelSample],
    variant: PromptVariant,
    vocabulary: &TokenVocabulary,
) -> Result<Vec<PromptExample>> {
    let mut out = Vec::new();
    for sample in samples {
        out.extend(format_sample(sample, variant, vocabulary)?);
    }
    Ok(out)
}

fn format_sample(
    sample: &ParallelSample,
    variant: PromptVariant,
    vocabulary: &TokenVocabulary,
) -> Result<Vec<PromptExample>> {
    match variant {
        PromptVariant::Vanilla | PromptVariant::Chain => Ok(vec![format_prompt(
            &PromptSource::Parallel(sample.clone()),
            variant,
            vocabulary,
        )?]),
        PromptVariant::TriTask => derive_tri_task(sample)
            .into_iter()
            .map(|example| format_prompt(&PromptSource::Task(example), variant, vocabulary))
            .collect(),
    }
}

/// A parsed speech-to-speech generation: the unit sequence, plus the text
/// stage when the variant produces one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct S2stResponse {
    pub text: Option<Vec<String>>,
    pub units: Vec<UnitId>,
}

fn label_token(vocabulary: &TokenVocabulary, id: TokenId) -> Result<String> {
    let name = vocabulary
        .name_of(id)
        .ok_or_else(|| Error::Format(format!("token id {id} is out of the vocabulary")))?;
    if vocabulary.is_unit_token(id) || special::ALL.contains(&name) {
        return Err(Error::Format(format!(
            "expected a word label, got {name}"
        )));
    }
    Ok(name.to_string())
}

fn unit_of(vocabulary: &TokenVocabulary, id: TokenId, target: Language) -> Result<UnitId> {
    match vocabulary.unit_of_token(id) {
        Some((language, unit)) if language == target => Ok(unit),
        Some((language, _)) => Err(Error::Format(format!(
            "unit token of language {} where language {} was expected",
            language.tag(),
            target.tag()
        ))),
        None => Err(Error::Format(format!(
            "expected a unit token, got {}",
            vocabulary.name_of(id).unwrap_or("<unknown>")
        ))),
    }
}

/// Strip one trailing end token; a stop token anywhere else is malformed.
fn strip_end<'a>(tokens: &'a [TokenId], vocabulary: &TokenVocabulary) -> Result<&'a [TokenId]> {
    let end = vocabulary.require(special::END)?;
    let body = match tokens.split_last() {
        Some((&last, rest)) if last == end => rest,
        _ => tokens,
    };
    if body.contains(&end) {
        return Err(Error::Format("end token in the middle of a response".into()));
    }
    Ok(body)
}

/// Parse a generated speech-to-speech response under a variant.
///
/// Vanilla and tri-task responses must be target-language unit tokens;
/// chain responses must be word labels, one modality separator, then
/// target-language unit tokens. A missing trailing end token (truncation)
/// is tolerated; any other structural violation is a format error.
pub fn parse_s2st_response(
    tokens: &[TokenId],
    variant: PromptVariant,
    target: Language,
    vocabulary: &TokenVocabulary,
) -> Result<S2stResponse> {
    let body = strip_end(tokens, vocabulary)?;
    match variant {
        PromptVariant::Vanilla | PromptVariant::TriTask => {
            let units = body
                .iter()
                .map(|&t| unit_of(vocabulary, t, target))
                .collect::<Result<Vec<UnitId>>>()?;
            Ok(S2stResponse { text: None, units })
        }
        PromptVariant::Chain => {
            let sep = vocabulary.require(special::MODALITY_SEP)?;
            let split = body
                .iter()
                .position(|&t| t == sep)
                .ok_or_else(|| Error::Format("missing modality separator".into()))?;
            if body[split + 1..].contains(&sep) {
                return Err(Error::Format("more than one modality separator".into()));
            }
            let text = body[..split]
                .iter()
                .map(|&t| label_token(vocabulary, t))
                .collect::<Result<Vec<String>>>()?;
            let units = body[split + 1..]
                .iter()
                .map(|&t| unit_of(vocabulary, t, target))
                .collect::<Result<Vec<UnitId>>>()?;
            Ok(S2stResponse {
                text: Some(text),
                units,
            })
        }
    }
}

/// Parse a generated text response (recognition or translation tasks) into
/// word labels.
pub fn parse_text_response(
    tokens: &[TokenId],
    vocabulary: &TokenVocabulary,
) -> Result<Vec<String>> {
    strip_end(tokens, vocabulary)?
        .iter()
        .map(|&t| label_token(vocabulary, t))
        .collect()
}

/// The decoding prefix for a task: `[marker, input units, separator]`.
pub fn generation_prompt(
    task: Task,
    input_language: Language,
    input: &[UnitId],
    vocabulary: &TokenVocabulary,
) -> Result<Vec<TokenId>> {
    let mut tokens = vec![vocabulary.require(marker_name(task))?];
    tokens.extend(unit_tokens(vocabulary, input_language, input)?);
    tokens.push(vocabulary.require(special::RESPONSE)?);
    Ok(tokens)
}

/// Supervised fine-tuning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub variant: PromptVariant,
}

impl Default for SftHyper {
    fn default() -> SftHyper {
        SftHyper {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            variant: PromptVariant::Vanilla,
        }
    }
}

/// A fine-tuned checkpoint with its per-epoch mean loss curve.
#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub model: ModelCheckpoint,
    pub loss_curve: Vec<f64>,
}

/// Fine-tune on a parallel corpus under one prompt variant.
///
/// Epochs visit the formatted examples in a seeded shuffled order; the
/// returned checkpoint carries the variant so later stages can parse its
/// generations.
pub fn run_sft(
    model: &ModelCheckpoint,
    corpus: &[ParallelSample],
    hyper: &SftHyper,
) -> Result<SftOutcome> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot fine-tune on an empty corpus".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if !hyper.lr.is_finite() || hyper.lr < 0.0 {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {}",
            hyper.lr
        )));
    }

    let mut sequences: Vec<TrainSequence> = Vec::new();
    for (index, sample) in corpus.iter().enumerate() {
        for example in format_sample(sample, hyper.variant, &model.vocabulary)? {
            if example.tokens.len() > model.config.context_length {
                return Err(Error::ModelInput(format!(
                    "sample {index}: formatted example of {} tokens exceeds the context length {}",
                    example.tokens.len(),
                    model.config.context_length
                )));
            }
            sequences.push(example.into_sequence());
        }
    }

    let mut out = model.clone();
    out.role = CheckpointRole::Sft;
    out.prompt_format = Some(hyper.variant.name().to_string());

    let target_counts: Vec<usize> = sequences
        .iter()
        .map(|s| s.loss_mask.iter().filter(|&&m| m).count())
        .collect();
    let mut trainer = Trainer::new(&out);
    let mut rng = stream_rng(hyper.seed, &[tag("sft"), tag("shuffle")]);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut total_targets = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<TrainSequence> =
                chunk.iter().map(|&i| sequences[i].clone()).collect();
            let loss = train_step_ce(&mut trainer, &mut out, &batch, hyper.lr)?;
            let targets: usize = chunk.iter().map(|&i| target_counts[i]).sum();
            weighted += loss * targets as f64;
            total_targets += targets;
        }
        loss_curve.push(weighted / total_targets as f64);
    }
    Ok(SftOutcome {
        model: out,
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_parallel_corpus;
    use crate::model::train_loss;
    use crate::testutil::{tiny_setup, tiny_world};
    use crate::types::Direction;

    fn one_sample() -> (ParallelSample, TokenVocabulary, ModelCheckpoint) {
        let (world, vocab, model) = tiny_setup();
        let corpus = generate_parallel_corpus(&world, 1, Direction::A2B, 3);
        (corpus.into_iter().next().unwrap(), vocab, model)
    }

    #[test]
    fn vanilla_layout_has_no_text_in_the_response() {
        let (sample, vocab, _) = one_sample();
        let example =
            format_prompt(&PromptSource::Parallel(sample.clone()), PromptVariant::Vanilla, &vocab)
                .unwrap();
        let mut expected = vec![vocab.require(special::TASK_S2ST).unwrap()];
        for &u in &sample.source_units {
            expected.push(vocab.unit_token(Language::A, u).unwrap());
        }
        expected.push(vocab.require(special::RESPONSE).unwrap());
        for &u in &sample.target_units {
            expected.push(vocab.unit_token(Language::B, u).unwrap());
        }
        expected.push(vocab.require(special::END).unwrap());
        assert_eq!(example.tokens, expected);

        let end = vocab.require(special::END).unwrap();
        for (&t, &m) in example.tokens.iter().zip(&example.loss_mask) {
            if m {
                assert!(vocab.is_unit_token(t) || t == end, "text token in response");
            }
        }
    }

    #[test]
    fn chain_response_is_text_then_separator_then_units() {
        let (sample, vocab, _) = one_sample();
        let example =
            format_prompt(&PromptSource::Parallel(sample.clone()), PromptVariant::Chain, &vocab)
                .unwrap();
        let mut response = Vec::new();
        for label in &sample.target_text {
            response.push(vocab.require(label).unwrap());
        }
        response.push(vocab.require(special::MODALITY_SEP).unwrap());
        for &u in &sample.target_units {
            response.push(vocab.unit_token(Language::B, u).unwrap());
        }
        response.push(vocab.require(special::END).unwrap());
        assert_eq!(example.response(), response.as_slice());
        assert_eq!(
            example.prompt().last(),
            Some(&vocab.require(special::RESPONSE).unwrap())
        );
    }

    #[test]
    fn masks_are_contiguous_response_suffixes() {
        let (sample, vocab, _) = one_sample();
        for variant in PromptVariant::ALL {
            let examples = format_corpus(&[sample.clone()], variant, &vocab).unwrap();
            for example in examples {
                let resp = vocab.require(special::RESPONSE).unwrap();
                let split = example.prompt_len();
                assert_eq!(example.tokens[split - 1], resp);
                assert!(example.loss_mask[..split].iter().all(|&m| !m));
                assert!(example.loss_mask[split..].iter().all(|&m| m));
                assert_eq!(
                    *example.tokens.last().unwrap(),
                    vocab.require(special::END).unwrap()
                );
            }
        }
    }

    #[test]
    fn tri_task_yields_five_examples_covering_all_markers() {
        let (sample, vocab, _) = one_sample();
        let examples = format_corpus(&[sample], PromptVariant::TriTask, &vocab).unwrap();
        assert_eq!(examples.len(), 5);
        let markers: Vec<TokenId> = examples.iter().map(|e| e.tokens[0]).collect();
        let id = |name: &str| vocab.require(name).unwrap();
        assert_eq!(
            markers,
            vec![
                id(special::TASK_ASR),
                id(special::TASK_ASR),
                id(special::TASK_S2T),
                id(special::TASK_S2T),
                id(special::TASK_S2ST),
            ]
        );
    }

    #[test]
    fn variant_source_mismatches_are_rejected() {
        let (sample, vocab, _) = one_sample();
        let derived = derive_tri_task(&sample);
        let asr = PromptSource::Task(derived[0].clone());
        let s2st = PromptSource::Task(derived[4].clone());
        let parallel = PromptSource::Parallel(sample);
        assert!(format_prompt(&asr, PromptVariant::Vanilla, &vocab).is_err());
        assert!(format_prompt(&s2st, PromptVariant::Vanilla, &vocab).is_ok());
        assert!(format_prompt(&asr, PromptVariant::Chain, &vocab).is_err());
        assert!(format_prompt(&parallel, PromptVariant::TriTask, &vocab).is_err());
    }

    #[test]
    fn generation_prompt_matches_the_formatted_prefix() {
        let (sample, vocab, _) = one_sample();
        let example =
            format_prompt(&PromptSource::Parallel(sample.clone()), PromptVariant::Vanilla, &vocab)
                .unwrap();
        let prompt =
            generation_prompt(Task::S2st, Language::A, &sample.source_units, &vocab).unwrap();
        assert_eq!(example.prompt(), prompt.as_slice());
    }

    #[test]
    fn loss_reads_only_the_response_region() {
        // Two prompts that differ in one unit token whose embeddings are
        // forced equal: every hidden state matches, so the losses can only
        // differ if prompt positions were scored.
        let (sample, vocab, mut model) = one_sample();
        let ua0 = vocab.unit_token(Language::A, 0).unwrap() as usize;
        let ua1 = vocab.unit_token(Language::A, 1).unwrap() as usize;
        let row = model.params[0].row(ua0).to_vec();
        model.params[0].row_mut(ua1).copy_from_slice(&row);

        let base =
            format_prompt(&PromptSource::Parallel(sample), PromptVariant::Vanilla, &vocab)
                .unwrap();
        let mut swapped = base.clone();
        let position = swapped.tokens[..swapped.prompt_len()]
            .iter()
            .position(|&t| t == ua0 as TokenId || t == ua1 as TokenId)
            .expect("prompt contains a twin unit token");
        swapped.tokens[position] = if swapped.tokens[position] == ua0 as TokenId {
            ua1 as TokenId
        } else {
            ua0 as TokenId
        };

        let a = train_loss(&model, &[base.into_sequence()]).unwrap();
        let b = train_loss(&model, &[swapped.into_sequence()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_returns_the_input_weights() {
        let (world, _, model) = tiny_setup();
        let corpus = generate_parallel_corpus(&world, 4, Direction::A2B, 5);
        let hyper = SftHyper {
            epochs: 0,
            ..SftHyper::default()
        };
        let out = run_sft(&model, &corpus, &hyper).unwrap();
        assert_eq!(out.model.params, model.params);
        assert_eq!(out.model.role, CheckpointRole::Sft);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn fine_tuning_reduces_the_loss() {
        let (world, _, model) = tiny_setup();
        let corpus = generate_parallel_corpus(&world, 24, Direction::A2B, 5);
        let hyper = SftHyper {
            epochs: 3,
            batch_size: 8,
            seed: 2,
            ..SftHyper::default()
        };
        let out = run_sft(&model, &corpus, &hyper).unwrap();
        assert_eq!(out.loss_curve.len(), 3);
        assert!(
            out.loss_curve[2] < out.loss_curve[0],
            "curve did not descend: {:?}",
            out.loss_curve
        );
        assert_eq!(out.model.prompt_format.as_deref(), Some("vanilla"));
    }

    #[test]
    fn same_seed_reproduces_the_checkpoint() {
        let (world, _, model) = tiny_setup();
        let corpus = generate_parallel_corpus(&world, 8, Direction::B2A, 6);
        let hyper = SftHyper {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            ..SftHyper::default()
        };
        let a = run_sft(&model, &corpus, &hyper).unwrap();
        let b = run_sft(&model, &corpus, &hyper).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.loss_curve, b.loss_curve);
        let c = run_sft(
            &model,
            &corpus,
            &SftHyper {
                seed: 10,
                ..hyper
            },
        )
        .unwrap();
        assert_ne!(a.model.params, c.model.params);
    }

    #[test]
    fn context_overflow_names_the_sample() {
        let (world, vocab, model) = tiny_setup();
        let mut config = model.config;
        config.context_length = 8;
        let small = crate::model::init_model(&config, vocab).unwrap();
        let corpus = generate_parallel_corpus(&world, 2, Direction::A2B, 5);
        let err = run_sft(&small, &corpus, &SftHyper::default()).unwrap_err();
        assert!(err.to_string().contains("sample 0"), "{err}");
    }

    #[test]
    fn parsing_inverts_formatting() {
        let (sample, vocab, _) = one_sample();
        for variant in PromptVariant::ALL {
            if variant == PromptVariant::TriTask {
                continue;
            }
            let example =
                format_prompt(&PromptSource::Parallel(sample.clone()), variant, &vocab).unwrap();
            let parsed =
                parse_s2st_response(example.response(), variant, Language::B, &vocab).unwrap();
            assert_eq!(parsed.units, sample.target_units);
            match variant {
                PromptVariant::Chain => {
                    assert_eq!(parsed.text.as_deref(), Some(sample.target_text.as_slice()));
                }
                _ => assert_eq!(parsed.text, None),
            }
        }
    }

    #[test]
    fn parser_rejects_structural_violations() {
        let (sample, vocab, _) = one_sample();
        let end = vocab.require(special::END).unwrap();
        let sep = vocab.require(special::MODALITY_SEP).unwrap();
        let ua0 = vocab.unit_token(Language::A, 0).unwrap();
        let ub0 = vocab.unit_token(Language::B, 0).unwrap();
        let label = vocab.require(&sample.target_text[0]).unwrap();

        // Wrong-language unit under vanilla.
        assert!(parse_s2st_response(&[ua0, end], PromptVariant::Vanilla, Language::B, &vocab)
            .is_err());
        // Text token under vanilla.
        assert!(parse_s2st_response(&[label, end], PromptVariant::Vanilla, Language::B, &vocab)
            .is_err());
        // Truncated output without the end token still parses.
        let truncated =
            parse_s2st_response(&[ub0, ub0], PromptVariant::Vanilla, Language::B, &vocab).unwrap();
        assert_eq!(truncated.units, vec![0, 0]);
        // Chain without a separator, or with two.
        assert!(parse_s2st_response(&[label, ub0, end], PromptVariant::Chain, Language::B, &vocab)
            .is_err());
        assert!(parse_s2st_response(
            &[label, sep, ub0, sep, end],
            PromptVariant::Chain,
            Language::B,
            &vocab
        )
        .is_err());
        // End token in the middle.
        assert!(
            parse_s2st_response(&[ub0, end, ub0], PromptVariant::Vanilla, Language::B, &vocab)
                .is_err()
        );
        // Text parse accepts labels and rejects markers.
        assert_eq!(
            parse_text_response(&[label, end], &vocab).unwrap(),
            vec![sample.target_text[0].clone()]
        );
        assert!(parse_text_response(&[sep], &vocab).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for variant in PromptVariant::ALL {
            assert_eq!(variant.name().parse::<PromptVariant>().unwrap(), variant);
        }
        assert!("chained".parse::<PromptVariant>().is_err());
        let json = serde_json::to_string(&PromptVariant::TriTask).unwrap();
        assert_eq!(json, "\"tri-task\"");
    }

    #[test]
    fn world_tokens_are_all_known_to_the_vocabulary() {
        let world = tiny_world();
        let vocab = crate::corpus::world_vocabulary(&world).unwrap();
        let corpus = generate_parallel_corpus(&world, 6, Direction::A2B, 1);
        for variant in PromptVariant::ALL {
            format_corpus(&corpus, variant, &vocab).unwrap();
        }
    }
}
