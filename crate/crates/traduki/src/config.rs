//! Pipeline configuration: one TOML document drives every stage.
//!
//! Each subcommand reads the section it needs and ignores the rest, so a
//! single file describes a whole experiment and stays valid as it moves
//! between stages. Every field has a default; an empty document is a
//! complete, runnable configuration. All randomness flows from the named
//! seed fields in here, never from ambient entropy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::WorldConfig;
use crate::error::{Error, Result};
use crate::model::{DecodeConfig, ModelConfig};
use crate::po::PoConfig;
use crate::prefdata::PrefDataConfig;
use crate::sft::SftHyper;
use crate::types::Direction;

/// World generation controls: the generative parameters plus the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSection {
    pub seed: u64,
    #[serde(flatten)]
    pub config: WorldConfig,
}

impl Default for WorldSection {
    fn default() -> WorldSection {
        WorldSection {
            seed: 0,
            config: WorldConfig::default(),
        }
    }
}

/// Corpus sizes and seeds for the generation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Parallel training pairs per direction.
    pub train_pairs: usize,
    /// Generate training pairs in both directions.
    pub bidirectional: bool,
    /// Held-out parallel pairs for evaluation, in the primary direction.
    pub eval_pairs: usize,
    /// Monolingual source utterances for preference data, in the primary
    /// direction's source language.
    pub monolingual_sources: usize,
    /// Primary translation direction of the experiment.
    pub direction: Direction,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> CorpusSection {
        CorpusSection {
            train_pairs: 128,
            bidirectional: true,
            eval_pairs: 32,
            monolingual_sources: 64,
            direction: Direction::A2B,
            seed: 1,
        }
    }
}

/// Model architecture. The vocabulary size is not configurable: it comes
/// from the world the model trains against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_length: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> ModelSection {
        ModelSection {
            context_length: 256,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 256,
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            context_length: self.context_length,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            feedforward_dim: self.feedforward_dim,
            seed: self.seed,
        }
    }
}

/// Iterated construction-and-optimization rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateSection {
    pub iterations: usize,
    pub samples_per_iteration: usize,
}

impl Default for IterateSection {
    fn default() -> IterateSection {
        IterateSection {
            iterations: 2,
            samples_per_iteration: 16,
        }
    }
}

/// Which task the evaluation stage decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    S2st,
    S2t,
}

impl EvalTask {
    pub fn name(self) -> &'static str {
        match self {
            EvalTask::S2st => "s2st",
            EvalTask::S2t => "s2t",
        }
    }
}

impl std::fmt::Display for EvalTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2st" => Ok(EvalTask::S2st),
            "s2t" => Ok(EvalTask::S2t),
            other => Err(Error::Config(format!(
                "unknown eval task `{other}` (expected s2st or s2t)"
            ))),
        }
    }
}

/// Evaluation controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub task: EvalTask,
    /// Also score the cascaded text-then-synthesis baseline.
    pub cascaded: bool,
    pub decode: DecodeConfig,
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        EvalSection {
            task: EvalTask::S2st,
            cascaded: false,
            decode: DecodeConfig::default(),
        }
    }
}

/// The whole pipeline document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub world: WorldSection,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub sft: SftHyper,
    pub prefdata: PrefDataConfig,
    pub po: PoConfig,
    pub iterate: IterateSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// Cross-field checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        // A probe vocabulary size; the architecture constraints being
        // checked do not depend on it.
        self.model.to_model_config(2).validate()?;
        self.po.validate()?;
        if self.sft.batch_size == 0 {
            return Err(Error::Config("sft batch size must be at least 1".into()));
        }
        if !self.sft.lr.is_finite() || self.sft.lr < 0.0 {
            return Err(Error::Config(format!(
                "sft learning rate must be a non-negative real, got {}",
                self.sft.lr
            )));
        }
        if !(self.prefdata.delta > 0.0) {
            return Err(Error::Config(format!(
                "prefdata delta must be positive, got {}",
                self.prefdata.delta
            )));
        }
        if self.prefdata.candidates < 2 {
            return Err(Error::Config(
                "prefdata needs at least 2 candidates per source".into(),
            ));
        }
        if self.iterate.iterations == 0 || self.iterate.samples_per_iteration == 0 {
            return Err(Error::Config(
                "iterate counts must be at least 1".into(),
            ));
        }
        if self.corpus.train_pairs == 0 || self.corpus.eval_pairs == 0 {
            return Err(Error::Config("corpus sizes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parse a pipeline document from TOML text. `origin` names the source in
/// errors.
pub fn parse_config(text: &str, origin: &str) -> Result<PipelineConfig> {
    let config: PipelineConfig =
        toml::from_str(text).map_err(|e| Error::parse(origin, e.message()))?;
    config.validate()?;
    Ok(config)
}

/// Load and validate a pipeline document from a file.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;
    use crate::po::PoAlgorithm;
    use crate::sft::PromptVariant;

    #[test]
    fn an_empty_document_is_a_complete_config() {
        let config = parse_config("", "inline").unwrap();
        assert_eq!(config, PipelineConfig::default());
        assert_eq!(config.model.embed_dim, 64);
        assert_eq!(config.po.beta, 0.1);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = PipelineConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back = parse_config(&text, "inline").unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let text = r#"
            [world]
            seed = 9
            inventory = 30

            [sft]
            variant = "tri-task"
            epochs = 4

            [prefdata]
            metric = "wer"
            delta = 0.05

            [po]
            algorithm = "simpo"

            [eval]
            task = "s2t"
        "#;
        let config = parse_config(text, "inline").unwrap();
        assert_eq!(config.world.seed, 9);
        assert_eq!(config.world.config.inventory, 30);
        assert_eq!(config.world.config.alphabet_a, 16);
        assert_eq!(config.sft.variant, PromptVariant::TriTask);
        assert_eq!(config.sft.epochs, 4);
        assert_eq!(config.sft.batch_size, SftHyper::default().batch_size);
        assert_eq!(config.prefdata.metric, MetricKind::Wer);
        assert_eq!(config.prefdata.delta, 0.05);
        assert_eq!(config.po.algorithm, PoAlgorithm::Simpo);
        assert_eq!(config.po.beta, 0.1);
        assert_eq!(config.eval.task, EvalTask::S2t);
    }

    #[test]
    fn unknown_sections_and_bad_values_are_rejected() {
        assert!(matches!(
            parse_config("[sfft]\nepochs = 1", "inline"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_config("[corpus]\ntrain_paris = 10", "inline"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_config("[po]\nbeta = 0.0", "inline"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config("[model]\nembed_dim = 30", "inline"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config("[prefdata]\ncandidates = 1", "inline"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_files_name_the_path() {
        let err = load_config("/nonexistent/pipeline.toml").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/pipeline.toml"));
    }

    #[test]
    fn eval_task_names_round_trip() {
        for task in [EvalTask::S2st, EvalTask::S2t] {
            assert_eq!(task.name().parse::<EvalTask>().unwrap(), task);
        }
        assert!("asr".parse::<EvalTask>().is_err());
    }
}
