//! Step 3 of the pipeline: preference optimization over pair datasets.
//!
//! Two objectives are implemented. DPO scores each completion under both
//! the policy and a frozen reference model and pushes the policy to widen
//! the preferred-minus-rejected gap of the log-ratios; SimPO drops the
//! reference model and works with length-normalized policy log-probs
//! against a target margin. Both reduce to a logistic loss on a scalar
//! margin, so their gradients are the margin's sigmoid times the ordinary
//! cross-entropy gradients of the two completions, which is how training
//! reuses the model module's backward pass. The optimizer state, batching,
//! and LoRA handling mirror supervised fine-tuning.

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelSample, SyntheticWorld, Task, TaskExample, TaskOutput, Utterance};
use crate::error::{Error, Result};
use crate::eval::{eval_s2st, EvalReport};
use crate::model::net::{backward_nll, forward_with_state, masked_logprob};
use crate::model::{
    apply_lora, checkpoint_sha256, lora, merge_lora, sequence_logprob, CheckpointRole,
    DecodeConfig, Mat, ModelCheckpoint, ModelConfig, ParamSchema, Trainer, TrainSequence,
};
use crate::prefdata::{
    build_preference_pairs, check_tuned_role, PrefDataConfig, PreferenceDataset, PreferencePair,
};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sft::{checkpoint_variant, format_prompt, PromptSource, PromptVariant};
use crate::types::Direction;

use rand::seq::SliceRandom;

/// The two preference objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoAlgorithm {
    Dpo,
    Simpo,
}

impl PoAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            PoAlgorithm::Dpo => "dpo",
            PoAlgorithm::Simpo => "simpo",
        }
    }
}

impl std::fmt::Display for PoAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PoAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpo" => Ok(PoAlgorithm::Dpo),
            "simpo" => Ok(PoAlgorithm::Simpo),
            other => Err(Error::Config(format!(
                "unknown preference algorithm `{other}` (expected dpo or simpo)"
            ))),
        }
    }
}

/// Preference optimization knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoConfig {
    pub algorithm: PoAlgorithm,
    /// Margin scaling shared by both objectives.
    pub beta: f64,
    /// SimPO target margin; DPO ignores it.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub use_lora: bool,
    pub lora_rank: usize,
    pub seed: u64,
}

impl Default for PoConfig {
    fn default() -> PoConfig {
        PoConfig {
            algorithm: PoAlgorithm::Dpo,
            beta: 0.1,
            gamma: 0.5,
            epochs: 3,
            batch_size: 16,
            lr: 2e-4,
            use_lora: true,
            lora_rank: 8,
            seed: 0,
        }
    }
}

impl PoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be a positive real, got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma must be a non-negative real, got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative real, got {}",
                self.lr
            )));
        }
        if self.use_lora && self.lora_rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// DPO loss from the four completion log-probs: the logistic loss of
/// `beta` times the difference of policy-to-reference log-ratios.
pub fn dpo_loss_value(
    policy_preferred: f64,
    policy_rejected: f64,
    reference_preferred: f64,
    reference_rejected: f64,
    beta: f64,
) -> f64 {
    let margin =
        (policy_preferred - reference_preferred) - (policy_rejected - reference_rejected);
    softplus(-beta * margin)
}

/// SimPO loss from the two policy log-probs and completion lengths:
/// logistic loss of the length-normalized margin minus `gamma`, with no
/// reference model.
pub fn simpo_loss_value(
    policy_preferred: f64,
    preferred_len: usize,
    policy_rejected: f64,
    rejected_len: usize,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    if preferred_len == 0 || rejected_len == 0 {
        return Err(Error::ModelInput(
            "SimPO needs non-empty completions to length-normalize".into(),
        ));
    }
    let margin = beta * policy_preferred / preferred_len as f64
        - beta * policy_rejected / rejected_len as f64
        - gamma;
    Ok(softplus(-margin))
}

/// Format one completion of a pair as a full prompt example under the
/// checkpoint's prompt variant.
///
/// Vanilla and tri-task sequences need only the unit data the pair already
/// carries. The chain format interleaves target text, which the pair does
/// not store, so it is reconstructed by oracle transcription; units that
/// do not transcribe make the pair unusable for chain training.
fn completion_example(
    world: &SyntheticWorld,
    variant: PromptVariant,
    direction: Direction,
    pair: &PreferencePair,
    preferred: bool,
    vocabulary: &crate::tokenizer::TokenVocabulary,
) -> Result<crate::sft::PromptExample> {
    let units = if preferred {
        &pair.preferred_units
    } else {
        &pair.rejected_units
    };
    let source = match variant {
        PromptVariant::Vanilla | PromptVariant::TriTask => PromptSource::Task(TaskExample {
            task: Task::S2st,
            input_language: direction.source(),
            input: pair.source_units.clone(),
            output: TaskOutput::Units(units.clone()),
            direction,
        }),
        PromptVariant::Chain => {
            let source_text = world.transcribe(direction.source(), &pair.source_units)?;
            let target_text = world.transcribe(direction.target(), units)?;
            PromptSource::Parallel(ParallelSample {
                source_units: pair.source_units.clone(),
                source_text,
                target_units: units.clone(),
                target_text,
                direction,
            })
        }
    };
    format_prompt(&source, variant, vocabulary)
}

/// A pair ready for optimization: both completions tokenized, with the
/// reference log-probs cached when the objective needs them.
struct PreparedPair {
    preferred: TrainSequence,
    rejected: TrainSequence,
    reference: Option<(f64, f64)>,
}

fn response_len(sequence: &TrainSequence) -> usize {
    sequence.loss_mask.iter().filter(|&&m| m).count()
}

/// Loss of one pair and its gradient contribution, scaled by `scale`
/// (1/batch for mean-over-pairs training). The gradient of the logistic
/// pair loss is the margin sigmoid times each completion's cross-entropy
/// gradient, so both completions go through the shared backward pass with
/// the appropriate coefficients.
fn pair_loss_and_grads(
    params: &[Mat],
    config: &ModelConfig,
    pair: &PreparedPair,
    cfg: &PoConfig,
    scale: f64,
    grads: &mut [Mat],
) -> Result<f64> {
    let state_p = forward_with_state(params, config, &pair.preferred.tokens)?;
    let state_r = forward_with_state(params, config, &pair.rejected.tokens)?;
    let lp_p = masked_logprob(&state_p, &pair.preferred.loss_mask);
    let lp_r = masked_logprob(&state_r, &pair.rejected.loss_mask);
    let (loss, coefficient_p, coefficient_r) = match cfg.algorithm {
        PoAlgorithm::Dpo => {
            let (ref_p, ref_r) = pair
                .reference
                .expect("reference log-probs are precomputed for DPO");
            let margin = (lp_p - ref_p) - (lp_r - ref_r);
            let z = cfg.beta * margin;
            // d loss / d lp_p = -beta * sigmoid(-z); backward_nll applies
            // gradients of the negated log-prob, flipping the sign.
            let s = sigmoid(-z);
            (softplus(-z), cfg.beta * s, -cfg.beta * s)
        }
        PoAlgorithm::Simpo => {
            let len_p = response_len(&pair.preferred) as f64;
            let len_r = response_len(&pair.rejected) as f64;
            let z = cfg.beta * lp_p / len_p - cfg.beta * lp_r / len_r - cfg.gamma;
            let s = sigmoid(-z);
            (softplus(-z), cfg.beta * s / len_p, -cfg.beta * s / len_r)
        }
    };
    backward_nll(
        params,
        config,
        &state_p,
        &pair.preferred.loss_mask,
        coefficient_p * scale,
        grads,
    );
    backward_nll(
        params,
        config,
        &state_r,
        &pair.rejected.loss_mask,
        coefficient_r * scale,
        grads,
    );
    Ok(loss)
}

/// Check that two checkpoints can play policy and reference to each other.
fn check_reference_compatible(
    policy: &ModelCheckpoint,
    reference: &ModelCheckpoint,
) -> Result<()> {
    if policy.vocabulary != reference.vocabulary {
        return Err(Error::ModelInput(
            "policy and reference checkpoints have mismatched vocabularies".into(),
        ));
    }
    if policy.prompt_format != reference.prompt_format {
        return Err(Error::ModelInput(
            "policy and reference checkpoints disagree on the prompt format".into(),
        ));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!(
            "beta must be a positive real, got {beta}"
        )));
    }
    Ok(())
}

/// DPO loss of one pair under explicit policy and reference checkpoints.
pub fn dpo_loss(
    policy: &ModelCheckpoint,
    reference: &ModelCheckpoint,
    world: &SyntheticWorld,
    pair: &PreferencePair,
    direction: Direction,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    check_reference_compatible(policy, reference)?;
    let variant = checkpoint_variant(policy)?;
    let mut logprobs = [0.0; 4];
    for (slot, (model, preferred)) in [
        (policy, true),
        (policy, false),
        (reference, true),
        (reference, false),
    ]
    .into_iter()
    .enumerate()
    {
        let example =
            completion_example(world, variant, direction, pair, preferred, &model.vocabulary)?;
        logprobs[slot] = sequence_logprob(model, example.prompt(), example.response())?;
    }
    Ok(dpo_loss_value(
        logprobs[0], logprobs[1], logprobs[2], logprobs[3], beta,
    ))
}

/// DPO loss of one pair and its exact gradient for every policy parameter
/// tensor, in schema order. For a policy carrying adapters, gradients are
/// taken with respect to the effective (adapter-merged) parameters.
pub fn dpo_grads(
    policy: &ModelCheckpoint,
    reference: &ModelCheckpoint,
    world: &SyntheticWorld,
    pair: &PreferencePair,
    direction: Direction,
    beta: f64,
) -> Result<(f64, Vec<Mat>)> {
    check_beta(beta)?;
    check_reference_compatible(policy, reference)?;
    let variant = checkpoint_variant(policy)?;
    let preferred = completion_example(world, variant, direction, pair, true, &policy.vocabulary)?;
    let rejected = completion_example(world, variant, direction, pair, false, &policy.vocabulary)?;
    let reference_logprobs = (
        sequence_logprob(reference, preferred.prompt(), preferred.response())?,
        sequence_logprob(reference, rejected.prompt(), rejected.response())?,
    );
    let prepared = PreparedPair {
        preferred: preferred.into_sequence(),
        rejected: rejected.into_sequence(),
        reference: Some(reference_logprobs),
    };
    let cfg = PoConfig {
        algorithm: PoAlgorithm::Dpo,
        beta,
        ..PoConfig::default()
    };
    pair_grads(policy, &prepared, &cfg)
}

/// SimPO loss of one pair and its exact gradient for every policy
/// parameter tensor, in schema order.
pub fn simpo_grads(
    policy: &ModelCheckpoint,
    world: &SyntheticWorld,
    pair: &PreferencePair,
    direction: Direction,
    beta: f64,
    gamma: f64,
) -> Result<(f64, Vec<Mat>)> {
    check_beta(beta)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "gamma must be a non-negative real, got {gamma}"
        )));
    }
    let variant = checkpoint_variant(policy)?;
    let preferred = completion_example(world, variant, direction, pair, true, &policy.vocabulary)?;
    let rejected = completion_example(world, variant, direction, pair, false, &policy.vocabulary)?;
    let prepared = PreparedPair {
        preferred: preferred.into_sequence(),
        rejected: rejected.into_sequence(),
        reference: None,
    };
    let cfg = PoConfig {
        algorithm: PoAlgorithm::Simpo,
        beta,
        gamma,
        ..PoConfig::default()
    };
    pair_grads(policy, &prepared, &cfg)
}

fn pair_grads(
    policy: &ModelCheckpoint,
    prepared: &PreparedPair,
    cfg: &PoConfig,
) -> Result<(f64, Vec<Mat>)> {
    let config = &policy.config;
    let shapes = ParamSchema::new(config).shapes(config);
    let mut grads: Vec<Mat> = shapes.iter().map(|&(_, r, c)| Mat::zeros(r, c)).collect();
    let params = lora::effective_params(policy)?;
    let loss = pair_loss_and_grads(&params, config, prepared, cfg, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// SimPO loss of one pair under a policy checkpoint alone.
pub fn simpo_loss(
    policy: &ModelCheckpoint,
    world: &SyntheticWorld,
    pair: &PreferencePair,
    direction: Direction,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    check_beta(beta)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "gamma must be a non-negative real, got {gamma}"
        )));
    }
    let variant = checkpoint_variant(policy)?;
    let mut logprobs = [0.0; 2];
    let mut lengths = [0usize; 2];
    for (slot, preferred) in [true, false].into_iter().enumerate() {
        let example =
            completion_example(world, variant, direction, pair, preferred, &policy.vocabulary)?;
        lengths[slot] = example.response().len();
        logprobs[slot] = sequence_logprob(policy, example.prompt(), example.response())?;
    }
    simpo_loss_value(
        logprobs[0], lengths[0], logprobs[1], lengths[1], beta, gamma,
    )
}

/// A trained policy before merging, with its per-epoch mean losses and the
/// count of pairs the formatter had to drop.
pub(crate) struct TrainedPolicy {
    pub policy: ModelCheckpoint,
    pub loss_curve: Vec<f64>,
    pub skipped_pairs: usize,
}

/// The optimization loop behind [`run_po`], stopping before the merge so
/// adapter state stays observable.
pub(crate) fn train_policy(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    dataset: &PreferenceDataset,
    cfg: &PoConfig,
) -> Result<TrainedPolicy> {
    check_tuned_role(model)?;
    cfg.validate()?;
    if dataset.pairs.is_empty() {
        return Err(Error::Data(
            "preference dataset is empty; nothing to optimize".into(),
        ));
    }
    let variant = checkpoint_variant(model)?;
    let direction = dataset.provenance.direction;
    let config = &model.config;

    let mut prepared = Vec::new();
    let mut skipped_pairs = 0usize;
    for (index, pair) in dataset.pairs.iter().enumerate() {
        let examples = completion_example(world, variant, direction, pair, true, &model.vocabulary)
            .and_then(|preferred| {
                let rejected =
                    completion_example(world, variant, direction, pair, false, &model.vocabulary)?;
                Ok((preferred, rejected))
            });
        let (preferred, rejected) = match examples {
            Ok(both) => both,
            Err(_) => {
                // Only chain formatting can fail here, when a candidate's
                // units do not transcribe to text.
                skipped_pairs += 1;
                continue;
            }
        };
        for example in [&preferred, &rejected] {
            if example.tokens.len() > config.context_length {
                return Err(Error::ModelInput(format!(
                    "pair {index}: formatted sequence of {} tokens exceeds the context length {}",
                    example.tokens.len(),
                    config.context_length
                )));
            }
        }
        let reference = match cfg.algorithm {
            PoAlgorithm::Dpo => Some((
                sequence_logprob(model, preferred.prompt(), preferred.response())?,
                sequence_logprob(model, rejected.prompt(), rejected.response())?,
            )),
            PoAlgorithm::Simpo => None,
        };
        prepared.push(PreparedPair {
            preferred: preferred.into_sequence(),
            rejected: rejected.into_sequence(),
            reference,
        });
    }
    if prepared.is_empty() {
        return Err(Error::Data(format!(
            "all {skipped_pairs} pairs were dropped during formatting; nothing to optimize"
        )));
    }

    let mut policy = if cfg.use_lora {
        let lora_seed = derive_seed(cfg.seed, &[tag("po"), tag("lora")]);
        apply_lora(
            model,
            cfg.lora_rank,
            2.0 * cfg.lora_rank as f64,
            lora_seed,
        )?
    } else {
        model.clone()
    };
    let mut trainer = Trainer::new(&policy);
    let mut rng = stream_rng(cfg.seed, &[tag("po"), tag("shuffle")]);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let shapes = ParamSchema::new(config).shapes(config);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Mat> =
                shapes.iter().map(|&(_, r, c)| Mat::zeros(r, c)).collect();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            {
                let params = lora::effective_params(&policy)?;
                for &index in batch {
                    batch_loss +=
                        pair_loss_and_grads(&params, config, &prepared[index], cfg, scale, &mut grads)?;
                }
            }
            epoch_loss += batch_loss;
            trainer.apply_full_grads(&mut policy, &grads, cfg.lr)?;
        }
        loss_curve.push(epoch_loss / prepared.len() as f64);
    }
    Ok(TrainedPolicy {
        policy,
        loss_curve,
        skipped_pairs,
    })
}

/// Outcome of one preference optimization run.
#[derive(Debug, Clone)]
pub struct PoOutcome {
    /// The optimized checkpoint, adapters merged, role set to
    /// preference-optimized.
    pub model: ModelCheckpoint,
    /// Mean pair loss per epoch, measured before each update.
    pub loss_curve: Vec<f64>,
    /// Pairs dropped because their units could not be formatted (chain
    /// text reconstruction).
    pub skipped_pairs: usize,
}

/// Optimize a fine-tuned checkpoint on a preference dataset.
///
/// With `use_lora` only adapter factors train and the result is merged
/// back into plain weights; the input checkpoint serves as the frozen DPO
/// reference throughout. Zero epochs returns a forward-equivalent copy
/// with the preference-optimized role.
pub fn run_po(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    dataset: &PreferenceDataset,
    cfg: &PoConfig,
) -> Result<PoOutcome> {
    let trained = train_policy(model, world, dataset, cfg)?;
    let mut merged = if cfg.use_lora {
        merge_lora(&trained.policy)?
    } else {
        trained.policy
    };
    merged.role = CheckpointRole::Po;
    Ok(PoOutcome {
        model: merged,
        loss_curve: trained.loss_curve,
        skipped_pairs: trained.skipped_pairs,
    })
}

/// Controls for iterated dataset construction and optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationConfig {
    pub pref: PrefDataConfig,
    pub po: PoConfig,
    pub iterations: usize,
    /// Fresh sources consumed per iteration.
    pub samples_per_iteration: usize,
}

impl Default for IterationConfig {
    fn default() -> IterationConfig {
        IterationConfig {
            pref: PrefDataConfig::default(),
            po: PoConfig::default(),
            iterations: 1,
            samples_per_iteration: 32,
        }
    }
}

/// One iteration's bookkeeping: dataset size, losses, evaluation, and the
/// checkpoint hashes that chain consecutive iterations together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub input_checkpoint: String,
    pub output_checkpoint: String,
    pub pairs: usize,
    pub skipped_sources: usize,
    pub skipped_pairs: usize,
    pub loss_curve: Vec<f64>,
    pub eval: EvalReport,
}

/// Run dataset construction and optimization for several rounds.
///
/// Each iteration consumes its own slice of `sources`, builds pairs with
/// the current checkpoint, optimizes, and evaluates on `eval_set`. An
/// iteration that yields no pairs ends the loop early with a report for
/// the unchanged checkpoint. Construction and optimization seeds are
/// re-derived per iteration so rounds stay decorrelated.
pub fn run_iterations(
    model: &ModelCheckpoint,
    world: &SyntheticWorld,
    sources: &[Utterance],
    direction: Direction,
    eval_set: &[ParallelSample],
    cfg: &IterationConfig,
) -> Result<(ModelCheckpoint, Vec<IterationReport>)> {
    if cfg.iterations == 0 {
        return Err(Error::Config("need at least one iteration".into()));
    }
    let needed = cfg.iterations * cfg.samples_per_iteration;
    if sources.len() < needed {
        return Err(Error::Data(format!(
            "{} iterations of {} sources need {needed} sources, got {}",
            cfg.iterations,
            cfg.samples_per_iteration,
            sources.len()
        )));
    }
    let mut current = model.clone();
    let mut reports = Vec::new();
    for iteration in 0..cfg.iterations {
        let slice = &sources
            [iteration * cfg.samples_per_iteration..(iteration + 1) * cfg.samples_per_iteration];
        let pref = PrefDataConfig {
            seed: derive_seed(cfg.pref.seed, &[tag("iteration"), iteration as u64]),
            ..cfg.pref.clone()
        };
        let input_checkpoint = checkpoint_sha256(&current)?;
        let dataset = build_preference_pairs(&current, world, slice, direction, &pref)?;
        if dataset.pairs.is_empty() {
            let eval = eval_s2st(&current, world, eval_set, &DecodeConfig::default())?;
            reports.push(IterationReport {
                iteration,
                output_checkpoint: input_checkpoint.clone(),
                input_checkpoint,
                pairs: 0,
                skipped_sources: dataset.provenance.skipped.len(),
                skipped_pairs: 0,
                loss_curve: Vec::new(),
                eval,
            });
            break;
        }
        let po = PoConfig {
            seed: derive_seed(cfg.po.seed, &[tag("iteration"), iteration as u64]),
            ..cfg.po.clone()
        };
        let outcome = run_po(&current, world, &dataset, &po)?;
        current = outcome.model;
        let eval = eval_s2st(&current, world, eval_set, &DecodeConfig::default())?;
        reports.push(IterationReport {
            iteration,
            input_checkpoint,
            output_checkpoint: checkpoint_sha256(&current)?,
            pairs: dataset.pairs.len(),
            skipped_sources: dataset.provenance.skipped.len(),
            skipped_pairs: outcome.skipped_pairs,
            loss_curve: outcome.loss_curve,
            eval,
        });
    }
    Ok((current, reports))
}
