//! Adam optimization over full parameters or adapter factors.
//!
//! A [`Trainer`] owns the optimizer state and is bound at construction to
//! the model's training mode: full fine-tuning when the checkpoint has no
//! adapter, factor-only training when it does. Base weights are never
//! touched in adapter mode.

use crate::error::{Error, Result};
use crate::model::math::Mat;
use crate::model::net::{ce_loss_and_grads, TrainBatch};
use crate::model::{lora, ModelCheckpoint};

/// Adam moment estimates for a fixed list of trainable tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over all tensors; `params[i]` and `grads[i]` must have the
    /// length given at construction. Call once per optimization step.
    fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    Adapter,
}

/// Optimizer bound to one model's trainable tensors.
#[derive(Debug, Clone)]
pub struct Trainer {
    mode: Mode,
    adam: AdamState,
}

impl Trainer {
    pub fn new(model: &ModelCheckpoint) -> Trainer {
        match &model.lora {
            None => {
                let sizes: Vec<usize> = model.params.iter().map(Mat::len).collect();
                Trainer {
                    mode: Mode::Full,
                    adam: AdamState::new(&sizes),
                }
            }
            Some(adapter) => {
                let mut sizes = Vec::new();
                for factors in adapter.factors.iter().flatten() {
                    sizes.push(factors.down.len());
                    sizes.push(factors.up.len());
                }
                Trainer {
                    mode: Mode::Adapter,
                    adam: AdamState::new(&sizes),
                }
            }
        }
    }

    fn check_mode(&self, model: &ModelCheckpoint) -> Result<()> {
        let expected = if model.lora.is_some() {
            Mode::Adapter
        } else {
            Mode::Full
        };
        if self.mode != expected {
            return Err(Error::Unsupported(
                "trainer was built for a different training mode than this model".into(),
            ));
        }
        Ok(())
    }

    /// Apply one Adam step from full weight gradients. In adapter mode the
    /// gradients are first projected onto the factors and the base weights
    /// stay untouched.
    pub(crate) fn apply_full_grads(
        &mut self,
        model: &mut ModelCheckpoint,
        full_grads: &[Mat],
        lr: f64,
    ) -> Result<()> {
        self.check_mode(model)?;
        match self.mode {
            Mode::Full => {
                let mut params: Vec<&mut [f64]> = model
                    .params
                    .iter_mut()
                    .map(|m| m.data.as_mut_slice())
                    .collect();
                let grads: Vec<&[f64]> = full_grads.iter().map(|m| m.data.as_slice()).collect();
                self.adam.update(&mut params, &grads, lr);
            }
            Mode::Adapter => {
                let adapter = model.lora.as_mut().expect("checked by mode");
                let factor_grads = lora::project_grads(adapter, full_grads);
                let mut params: Vec<&mut [f64]> = Vec::new();
                let mut grads: Vec<&[f64]> = Vec::new();
                for (factors, grad) in adapter.factors.iter_mut().zip(&factor_grads) {
                    if let (Some(f), Some(g)) = (factors, grad) {
                        params.push(f.down.data.as_mut_slice());
                        grads.push(g.down.data.as_slice());
                        params.push(f.up.data.as_mut_slice());
                        grads.push(g.up.data.as_slice());
                    }
                }
                self.adam.update(&mut params, &grads, lr);
            }
        }
        Ok(())
    }
}

/// One optimizer step on mean masked cross-entropy. Returns the loss
/// measured before the update.
pub fn train_step_ce(
    trainer: &mut Trainer,
    model: &mut ModelCheckpoint,
    batch: &TrainBatch,
    lr: f64,
) -> Result<f64> {
    trainer.check_mode(model)?;
    if batch.is_empty() {
        return Err(Error::ModelInput("cannot train on an empty batch".into()));
    }
    let effective = lora::effective_params(model)?;
    let (loss, grads) = ce_loss_and_grads(&effective, &model.config, batch)?;
    drop(effective);
    trainer.apply_full_grads(model, &grads, lr)?;
    Ok(loss)
}
