//! Tiny decoder-only autoregressive model with exact gradients.
//!
//! The network is a pre-norm transformer over a learned token plus position
//! embedding: each block is RMS-normed causal multi-head attention and an
//! RMS-normed two-layer ReLU feedforward, both with residual connections,
//! followed by a final RMS norm and an untied output projection. All
//! parameters are f64 and every gradient is computed by hand, so training
//! is exactly reproducible and checkable against finite differences.
//!
//! Parameters live in a flat `Vec<Mat>` whose order is fixed by
//! [`ParamSchema`]; the optimizer, the low-rank adapters, and the
//! checkpoint file format all address tensors through that schema.

pub mod io;
pub mod lora;
pub mod math;
pub mod net;
pub mod optim;
pub mod sample;

pub use io::{checkpoint_sha256, file_sha256, load_checkpoint, save_checkpoint};
pub use lora::{apply_lora, merge_lora, LoraAdapter};
pub use math::Mat;
pub use net::{
    forward_logits, sequence_logprob, train_loss, train_loss_and_grads, TrainBatch, TrainSequence,
};
pub use optim::{train_step_ce, AdamState, Trainer};
pub use sample::{sample, DecodeConfig, SampleOutcome};

use rand::prelude::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};
use crate::tokenizer::TokenVocabulary;

/// Architecture and initialization seed of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            vocab_size: 2,
            context_length: 256,
            embed_dim: 128,
            num_layers: 4,
            num_heads: 4,
            feedforward_dim: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.context_length == 0
            || self.embed_dim == 0
            || self.num_layers == 0
            || self.num_heads == 0
            || self.feedforward_dim == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Total learnable parameter count.
    pub fn param_count(&self) -> usize {
        ParamSchema::new(self)
            .shapes(self)
            .iter()
            .map(|&(_, r, c)| r * c)
            .sum()
    }
}

/// The six weight matrices of one transformer block, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMat {
    Wq,
    Wk,
    Wv,
    Wo,
    W1,
    W2,
}

impl LayerMat {
    pub const ALL: [LayerMat; 6] = [
        LayerMat::Wq,
        LayerMat::Wk,
        LayerMat::Wv,
        LayerMat::Wo,
        LayerMat::W1,
        LayerMat::W2,
    ];

    fn offset(self) -> usize {
        match self {
            LayerMat::Wq => 0,
            LayerMat::Wk => 1,
            LayerMat::Wv => 2,
            LayerMat::Wo => 3,
            LayerMat::W1 => 4,
            LayerMat::W2 => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            LayerMat::Wq => "wq",
            LayerMat::Wk => "wk",
            LayerMat::Wv => "wv",
            LayerMat::Wo => "wo",
            LayerMat::W1 => "w1",
            LayerMat::W2 => "w2",
        }
    }
}

/// Fixed addressing of the flat parameter vector: token embedding, position
/// embedding, six matrices per layer, output head.
#[derive(Debug, Clone, Copy)]
pub struct ParamSchema {
    pub num_layers: usize,
}

impl ParamSchema {
    pub fn new(config: &ModelConfig) -> ParamSchema {
        ParamSchema {
            num_layers: config.num_layers,
        }
    }

    pub const TOK_EMBEDDING: usize = 0;
    pub const POS_EMBEDDING: usize = 1;

    pub fn layer(self, layer: usize, which: LayerMat) -> usize {
        debug_assert!(layer < self.num_layers);
        2 + 6 * layer + which.offset()
    }

    pub fn head(self) -> usize {
        2 + 6 * self.num_layers
    }

    pub fn tensor_count(self) -> usize {
        self.head() + 1
    }

    /// True when the tensor index is one of a block's weight matrices, the
    /// adapter target set.
    pub fn is_layer_mat(self, index: usize) -> bool {
        index >= 2 && index < self.head()
    }

    /// Names and shapes of every tensor, in storage order.
    pub fn shapes(self, config: &ModelConfig) -> Vec<(String, usize, usize)> {
        let d = config.embed_dim;
        let mut shapes = vec![
            ("tok_embedding".to_string(), config.vocab_size, d),
            ("pos_embedding".to_string(), config.context_length, d),
        ];
        for layer in 0..self.num_layers {
            for which in LayerMat::ALL {
                let (rows, cols) = match which {
                    LayerMat::Wq | LayerMat::Wk | LayerMat::Wv | LayerMat::Wo => (d, d),
                    LayerMat::W1 => (config.feedforward_dim, d),
                    LayerMat::W2 => (d, config.feedforward_dim),
                };
                shapes.push((format!("layer{layer}.{}", which.name()), rows, cols));
            }
        }
        shapes.push(("lm_head".to_string(), config.vocab_size, d));
        shapes
    }
}

/// Provenance of a checkpoint within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointRole {
    Base,
    Sft,
    Po,
}

impl std::fmt::Display for CheckpointRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckpointRole::Base => "base",
            CheckpointRole::Sft => "sft",
            CheckpointRole::Po => "po",
        })
    }
}

/// A complete model: config, parameters, vocabulary, provenance, and an
/// optional low-rank adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub role: CheckpointRole,
    /// Prompt format tag recorded at fine-tuning time, if any.
    pub prompt_format: Option<String>,
    pub params: Vec<Mat>,
    pub vocabulary: TokenVocabulary,
    pub lora: Option<LoraAdapter>,
}

impl ModelCheckpoint {
    pub fn schema(&self) -> ParamSchema {
        ParamSchema::new(&self.config)
    }

    /// Check parameter shapes and finiteness against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.vocabulary.len() != self.config.vocab_size {
            return Err(Error::Data(format!(
                "vocabulary has {} tokens but config expects {}",
                self.vocabulary.len(),
                self.config.vocab_size
            )));
        }
        let shapes = self.schema().shapes(&self.config);
        if self.params.len() != shapes.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, schema expects {}",
                self.params.len(),
                shapes.len()
            )));
        }
        for (mat, (name, rows, cols)) in self.params.iter().zip(&shapes) {
            if mat.rows != *rows || mat.cols != *cols {
                return Err(Error::Data(format!(
                    "tensor {name} has shape {}x{}, expected {rows}x{cols}",
                    mat.rows, mat.cols
                )));
            }
            if mat.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("tensor {name} has non-finite values")));
            }
        }
        if let Some(lora) = &self.lora {
            lora.validate(&self.config)?;
        }
        Ok(())
    }
}

/// Initialize a model from its config seed: Gaussian weights with standard
/// deviation 0.02, residual output projections scaled down by
/// 1/sqrt(2 * num_layers) so depth does not blow up activations.
pub fn init_model(config: &ModelConfig, vocabulary: TokenVocabulary) -> Result<ModelCheckpoint> {
    config.validate()?;
    if vocabulary.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but config expects vocab_size {}",
            vocabulary.len(),
            config.vocab_size
        )));
    }
    let schema = ParamSchema::new(config);
    let shapes = schema.shapes(config);
    let residual_scale = 1.0 / (2.0 * config.num_layers as f64).sqrt();
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut params = Vec::with_capacity(shapes.len());
    for (index, (name, rows, cols)) in shapes.iter().enumerate() {
        let mut rng = stream_rng(config.seed, &[tag("init"), index as u64]);
        let scale = if name.ends_with(".wo") || name.ends_with(".w2") {
            residual_scale
        } else {
            1.0
        };
        let mut mat = Mat::zeros(*rows, *cols);
        for x in &mut mat.data {
            *x = normal.sample(&mut rng) * scale;
        }
        params.push(mat);
    }
    Ok(ModelCheckpoint {
        config: *config,
        role: CheckpointRole::Base,
        prompt_format: None,
        params,
        vocabulary,
        lora: None,
    })
}

#[cfg(test)]
pub(crate) fn test_vocabulary(size: usize) -> TokenVocabulary {
    use crate::tokenizer::{extend_vocabulary, Codebook};
    use crate::types::Language;
    assert!(size > 4, "test vocabulary needs room for unit tokens");
    let base: Vec<String> = (0..size - 4).map(|i| format!("t{i}")).collect();
    let cb = |language| Codebook {
        language,
        centroids: vec![vec![0.0]; 2],
        training_inertia: 0.0,
    };
    extend_vocabulary(&base, &cb(Language::A), &cb(Language::B)).unwrap()
}

#[cfg(test)]
pub(crate) fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        context_length: 16,
        embed_dim: 16,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 24,
        seed: 1234,
    }
}
