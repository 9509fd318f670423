//! Small shared fixtures for module tests.

use std::sync::OnceLock;

use crate::corpus::{
    generate_parallel_corpus, generate_world, world_vocabulary, ParallelSample, SyntheticWorld,
    WorldConfig,
};
use crate::model::{init_model, ModelCheckpoint, ModelConfig};
use crate::sft::{run_sft, PromptVariant, SftHyper};
use crate::tokenizer::TokenVocabulary;
use crate::types::Direction;

pub(crate) fn tiny_world_config() -> WorldConfig {
    WorldConfig {
        alphabet_a: 8,
        alphabet_b: 8,
        inventory: 20,
        feature_dim: 4,
        duration_range: (1, 2),
        word_length_range: (2, 3),
        sentence_length_range: (2, 4),
        min_separation: 1.0,
    }
}

pub(crate) fn tiny_world() -> SyntheticWorld {
    generate_world(7, &tiny_world_config()).unwrap()
}

/// A world, its vocabulary, and a freshly initialized base model sized for
/// unit tests.
pub(crate) fn tiny_setup() -> (SyntheticWorld, TokenVocabulary, ModelCheckpoint) {
    let world = tiny_world();
    let vocabulary = world_vocabulary(&world).unwrap();
    let config = ModelConfig {
        vocab_size: vocabulary.len(),
        context_length: 96,
        embed_dim: 16,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 24,
        seed: 11,
    };
    let model = init_model(&config, vocabulary.clone()).unwrap();
    (world, vocabulary, model)
}

/// A world plus a model fine-tuned on a small bidirectional corpus, shared
/// by tests that need a checkpoint capable of decoding.
pub(crate) struct TrainedFixture {
    pub world: SyntheticWorld,
    pub vocabulary: TokenVocabulary,
    pub corpus: Vec<ParallelSample>,
    pub model: ModelCheckpoint,
}

fn train_fixture(variant: PromptVariant, epochs: usize) -> TrainedFixture {
    let world = tiny_world();
    let vocabulary = world_vocabulary(&world).unwrap();
    let config = ModelConfig {
        vocab_size: vocabulary.len(),
        context_length: 96,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 64,
        seed: 11,
    };
    let base = init_model(&config, vocabulary.clone()).unwrap();
    let mut corpus = generate_parallel_corpus(&world, 12, Direction::A2B, 21);
    corpus.extend(generate_parallel_corpus(&world, 12, Direction::B2A, 22));
    let hyper = SftHyper {
        epochs,
        batch_size: 8,
        lr: 3e-3,
        seed: 5,
        variant,
    };
    let model = run_sft(&base, &corpus, &hyper).unwrap().model;
    TrainedFixture {
        world,
        vocabulary,
        corpus,
        model,
    }
}

pub(crate) fn trained_vanilla() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| train_fixture(PromptVariant::Vanilla, 150))
}

pub(crate) fn trained_chain() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| train_fixture(PromptVariant::Chain, 150))
}

pub(crate) fn trained_tri() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| train_fixture(PromptVariant::TriTask, 150))
}

