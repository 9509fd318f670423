//! Autoregressive decoding with a per-layer key/value cache.
//!
//! Each generated position runs one incremental forward step against the
//! cached attention state instead of re-encoding the whole prefix, so
//! decoding a sequence costs the same attention work as one training
//! forward over it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::lora;
use crate::model::math::{dot, rmsnorm_row, softmax_in_place, Mat};
use crate::model::net::check_tokens;
use crate::model::{LayerMat, ModelCheckpoint, ModelConfig, ParamSchema};
use crate::rng::{stream_rng, tag, Rng};
use crate::tokenizer::TokenId;
use rand::Rng as _;

/// Decoding controls. `greedy` ignores `temperature`, `top_k`, and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
    pub stop_tokens: Vec<TokenId>,
    pub seed: u64,
    pub greedy: bool,
}

impl Default for DecodeConfig {
    fn default() -> DecodeConfig {
        DecodeConfig {
            temperature: 1.0,
            top_k: 20,
            max_new_tokens: 256,
            stop_tokens: Vec::new(),
            seed: 0,
            greedy: false,
        }
    }
}

/// Result of one decode call. `tokens` holds only the generated suffix,
/// including the stop token when one was produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub tokens: Vec<TokenId>,
    /// True when decoding hit `max_new_tokens` or the context limit without
    /// producing a stop token.
    pub truncated: bool,
}

/// Growable per-layer attention cache, one d-wide row per seen position.
struct LayerKv {
    k: Vec<f64>,
    v: Vec<f64>,
}

struct Decoder<'a> {
    params: &'a [Mat],
    config: &'a ModelConfig,
    schema: ParamSchema,
    caches: Vec<LayerKv>,
    /// Number of positions already folded into the caches.
    len: usize,
}

impl<'a> Decoder<'a> {
    fn new(params: &'a [Mat], config: &'a ModelConfig) -> Decoder<'a> {
        let caches = (0..config.num_layers)
            .map(|_| LayerKv {
                k: Vec::new(),
                v: Vec::new(),
            })
            .collect();
        Decoder {
            params,
            config,
            schema: ParamSchema::new(config),
            caches,
            len: 0,
        }
    }

    /// Feed one token at the next position and return the logits row
    /// predicting its successor.
    fn step(&mut self, token: TokenId) -> Vec<f64> {
        let d = self.config.embed_dim;
        let heads = self.config.num_heads;
        let head_dim = self.config.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let pos = self.len;

        let tok = &self.params[ParamSchema::TOK_EMBEDDING];
        let pe = &self.params[ParamSchema::POS_EMBEDDING];
        let mut h: Vec<f64> = tok
            .row(token as usize)
            .iter()
            .zip(pe.row(pos))
            .map(|(a, b)| a + b)
            .collect();

        let mut normed = vec![0.0; d];
        let mut q = vec![0.0; d];
        let mut ctx = vec![0.0; d];
        for layer in 0..self.config.num_layers {
            let wq = &self.params[self.schema.layer(layer, LayerMat::Wq)];
            let wk = &self.params[self.schema.layer(layer, LayerMat::Wk)];
            let wv = &self.params[self.schema.layer(layer, LayerMat::Wv)];
            let wo = &self.params[self.schema.layer(layer, LayerMat::Wo)];
            let w1 = &self.params[self.schema.layer(layer, LayerMat::W1)];
            let w2 = &self.params[self.schema.layer(layer, LayerMat::W2)];

            rmsnorm_row(&h, &mut normed);
            for j in 0..d {
                q[j] = dot(wq.row(j), &normed);
            }
            let cache = &mut self.caches[layer];
            for j in 0..d {
                cache.k.push(dot(wk.row(j), &normed));
            }
            for j in 0..d {
                cache.v.push(dot(wv.row(j), &normed));
            }

            ctx.fill(0.0);
            let mut scores = vec![0.0; pos + 1];
            for head in 0..heads {
                let lo = head * head_dim;
                let hi = lo + head_dim;
                for (s, score) in scores.iter_mut().enumerate() {
                    let ks = &cache.k[s * d + lo..s * d + hi];
                    *score = dot(&q[lo..hi], ks) * scale;
                }
                softmax_in_place(&mut scores);
                for (s, &w) in scores.iter().enumerate() {
                    let vs = &cache.v[s * d + lo..s * d + hi];
                    for (c, &value) in ctx[lo..hi].iter_mut().zip(vs) {
                        *c += w * value;
                    }
                }
            }
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += dot(wo.row(j), &ctx);
            }

            rmsnorm_row(&h, &mut normed);
            let mut a1 = vec![0.0; self.config.feedforward_dim];
            for (j, a) in a1.iter_mut().enumerate() {
                *a = dot(w1.row(j), &normed).max(0.0);
            }
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += dot(w2.row(j), &a1);
            }
        }

        rmsnorm_row(&h, &mut normed);
        let head_mat = &self.params[self.schema.head()];
        self.len += 1;
        (0..self.config.vocab_size)
            .map(|t| dot(head_mat.row(t), &normed))
            .collect()
    }
}

/// Pick the next token from a logits row.
fn pick(logits: &[f64], cfg: &DecodeConfig, rng: &mut Rng) -> TokenId {
    if cfg.greedy {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    order.truncate(cfg.top_k.min(logits.len()));

    let mut probs: Vec<f64> = order
        .iter()
        .map(|&t| logits[t] / cfg.temperature)
        .collect();
    softmax_in_place(&mut probs);

    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (&t, &p) in order.iter().zip(&probs) {
        cum += p;
        if u < cum {
            return t as TokenId;
        }
    }
    *order.last().expect("top_k >= 1") as TokenId
}

fn argmax(logits: &[f64]) -> TokenId {
    let mut best = 0;
    for (t, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = t;
        }
    }
    best as TokenId
}

/// Decode a continuation of `prompt`. Generation ends at the first stop
/// token (kept in the output), at `max_new_tokens`, or when the context
/// window fills, whichever comes first.
pub fn sample(
    model: &ModelCheckpoint,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<SampleOutcome> {
    let config = &model.config;
    check_tokens(config, prompt)?;
    if prompt.is_empty() {
        return Err(Error::ModelInput("cannot decode from an empty prompt".into()));
    }
    if prompt.len() >= config.context_length {
        return Err(Error::ModelInput(format!(
            "prompt of {} tokens leaves no room in a context of {}",
            prompt.len(),
            config.context_length
        )));
    }
    if cfg.max_new_tokens == 0 {
        return Err(Error::ModelInput("max_new_tokens must be at least 1".into()));
    }
    if !cfg.greedy {
        if cfg.top_k == 0 {
            return Err(Error::ModelInput("top_k must be at least 1".into()));
        }
        if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
            return Err(Error::ModelInput(format!(
                "temperature must be finite and positive, got {}",
                cfg.temperature
            )));
        }
    }

    let params = lora::effective_params(model)?;
    let mut decoder = Decoder::new(&params, config);
    let mut rng = stream_rng(cfg.seed, &[tag("sample")]);

    let mut logits = Vec::new();
    for &t in prompt {
        logits = decoder.step(t);
    }

    let mut out = Vec::new();
    loop {
        // The next token lands at position decoder.len; afterwards there is
        // room to continue only while decoder.len + 1 < context_length.
        let next = pick(&logits, cfg, &mut rng);
        out.push(next);
        if cfg.stop_tokens.contains(&next) {
            return Ok(SampleOutcome {
                tokens: out,
                truncated: false,
            });
        }
        if out.len() == cfg.max_new_tokens || decoder.len + 1 == config.context_length {
            return Ok(SampleOutcome {
                tokens: out,
                truncated: true,
            });
        }
        logits = decoder.step(next);
    }
}
