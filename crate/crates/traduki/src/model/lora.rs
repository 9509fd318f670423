//! Low-rank adapters over the block weight matrices.
//!
//! An adapter adds scale * up * down to each target matrix, where the
//! targets are every block matrix (attention and feedforward projections)
//! and never the embeddings or the output head. The up factor starts at
//! zero, so a freshly applied adapter is an exact no-op; training moves only
//! the factors while the base weights stay frozen.

use std::borrow::Cow;

use rand::prelude::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::math::{accumulate_outer, axpy, matmul_nt, Mat};
use crate::model::{ModelCheckpoint, ModelConfig, ParamSchema};
use crate::rng::{stream_rng, tag};

/// One target matrix's factor pair: `down` is rank x in, `up` is out x rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraFactors {
    pub down: Mat,
    pub up: Mat,
}

/// A low-rank adapter aligned with the parameter schema: `factors[i]` is
/// `Some` exactly when tensor `i` is a block weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub factors: Vec<Option<LoraFactors>>,
}

impl LoraAdapter {
    /// The multiplier applied to every up * down product.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Data("adapter rank must be at least 1".into()));
        }
        let schema = ParamSchema::new(config);
        let shapes = schema.shapes(config);
        if self.factors.len() != shapes.len() {
            return Err(Error::Data("adapter factor list does not match schema".into()));
        }
        for (index, factors) in self.factors.iter().enumerate() {
            match factors {
                Some(f) => {
                    if !schema.is_layer_mat(index) {
                        return Err(Error::Data(format!(
                            "adapter targets tensor {index}, which is not a block matrix"
                        )));
                    }
                    let (_, rows, cols) = shapes[index];
                    if f.up.rows != rows
                        || f.up.cols != self.rank
                        || f.down.rows != self.rank
                        || f.down.cols != cols
                    {
                        return Err(Error::Data(format!(
                            "adapter factors for tensor {index} have inconsistent shapes"
                        )));
                    }
                }
                None => {
                    if schema.is_layer_mat(index) {
                        return Err(Error::Data(format!(
                            "block matrix {index} is missing its adapter factors"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Attach a fresh adapter: `down` factors are small Gaussians, `up` factors
/// are zero, so the model's function is unchanged until training moves them.
pub fn apply_lora(
    model: &ModelCheckpoint,
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<ModelCheckpoint> {
    if model.lora.is_some() {
        return Err(Error::Unsupported(
            "model already carries an adapter; merge it first".into(),
        ));
    }
    if rank == 0 {
        return Err(Error::Config("adapter rank must be at least 1".into()));
    }
    let schema = model.schema();
    let shapes = schema.shapes(&model.config);
    for (index, (name, rows, cols)) in shapes.iter().enumerate() {
        if schema.is_layer_mat(index) && rank > *rows.min(cols) {
            return Err(Error::Config(format!(
                "rank {rank} exceeds the smaller dimension of {name} ({rows}x{cols})"
            )));
        }
    }
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let factors = shapes
        .iter()
        .enumerate()
        .map(|(index, &(_, rows, cols))| {
            if !schema.is_layer_mat(index) {
                return None;
            }
            let mut rng = stream_rng(seed, &[tag("lora"), index as u64]);
            let mut down = Mat::zeros(rank, cols);
            for x in &mut down.data {
                *x = normal.sample(&mut rng);
            }
            Some(LoraFactors {
                down,
                up: Mat::zeros(rows, rank),
            })
        })
        .collect();
    let mut with = model.clone();
    with.lora = Some(LoraAdapter {
        rank,
        alpha,
        seed,
        factors,
    });
    Ok(with)
}

/// Add `scale * up * down` into `target`.
fn add_delta(target: &mut Mat, factors: &LoraFactors, scale: f64) {
    for o in 0..target.rows {
        for r in 0..factors.down.rows {
            let coef = factors.up.row(o)[r] * scale;
            if coef != 0.0 {
                axpy(coef, factors.down.row(r), target.row_mut(o));
            }
        }
    }
}

/// Parameters with any adapter folded in; borrows when there is none.
pub(crate) fn effective_params(model: &ModelCheckpoint) -> Result<Cow<'_, [Mat]>> {
    match &model.lora {
        None => Ok(Cow::Borrowed(&model.params)),
        Some(adapter) => {
            adapter.validate(&model.config)?;
            Ok(Cow::Owned(materialize(&model.params, adapter)))
        }
    }
}

pub(crate) fn materialize(params: &[Mat], adapter: &LoraAdapter) -> Vec<Mat> {
    let scale = adapter.scale();
    params
        .iter()
        .zip(&adapter.factors)
        .map(|(mat, factors)| {
            let mut out = mat.clone();
            if let Some(f) = factors {
                add_delta(&mut out, f, scale);
            }
            out
        })
        .collect()
}

/// Project full weight gradients onto the adapter factors:
/// d_up = scale * dW * down^T and d_down = scale * up^T * dW.
pub(crate) fn project_grads(adapter: &LoraAdapter, full: &[Mat]) -> Vec<Option<LoraFactors>> {
    let scale = adapter.scale();
    adapter
        .factors
        .iter()
        .zip(full)
        .map(|(factors, dw)| {
            factors.as_ref().map(|f| {
                let mut d_up = Mat::zeros(f.up.rows, f.up.cols);
                matmul_nt(dw, &f.down, &mut d_up);
                for x in &mut d_up.data {
                    *x *= scale;
                }
                let mut d_down = Mat::zeros(f.down.rows, f.down.cols);
                accumulate_outer(&f.up, dw, &mut d_down);
                for x in &mut d_down.data {
                    *x *= scale;
                }
                LoraFactors {
                    down: d_down,
                    up: d_up,
                }
            })
        })
        .collect()
}

/// Fold the adapter into the base weights and drop it.
pub fn merge_lora(model: &ModelCheckpoint) -> Result<ModelCheckpoint> {
    let adapter = model
        .lora
        .as_ref()
        .ok_or_else(|| Error::Unsupported("model has no adapter to merge".into()))?;
    adapter.validate(&model.config)?;
    let mut merged = model.clone();
    merged.params = materialize(&model.params, adapter);
    merged.lora = None;
    Ok(merged)
}
