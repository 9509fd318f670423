//! Forward pass, exact backward pass, and sequence scoring.
//!
//! The backward pass is hand-derived against the forward pass in this file;
//! the unit tests pin it to central finite differences. Gradients flow from
//! an arbitrary per-position logit gradient, so cross-entropy training and
//! preference losses share the same machinery: both reduce to a coefficient
//! on (softmax - onehot) rows at target positions.

use crate::error::{Error, Result};
use crate::model::math::{
    accumulate_outer, axpy, dot, log_softmax_at, matmul_nn, matmul_nt, rmsnorm_backward_row,
    rmsnorm_row, softmax_in_place, Mat,
};
use crate::model::{lora, LayerMat, ModelCheckpoint, ModelConfig, ParamSchema};
use crate::tokenizer::TokenId;

/// One training sequence: tokens plus a mask marking which positions are
/// loss targets (predicted from the previous position).
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
}

/// A batch of training sequences.
pub type TrainBatch = [TrainSequence];

pub(crate) struct LayerState {
    h_in: Mat,
    inv_a: Vec<f64>,
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    att: Vec<Mat>,
    ctx: Mat,
    h_mid: Mat,
    inv_b: Vec<f64>,
    b: Mat,
    z1: Mat,
    a1: Mat,
}

pub(crate) struct ForwardState {
    tokens: Vec<TokenId>,
    layers: Vec<LayerState>,
    h_last: Mat,
    inv_f: Vec<f64>,
    hf: Mat,
    pub(crate) logits: Mat,
}

pub(crate) fn check_tokens(config: &ModelConfig, tokens: &[TokenId]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::ModelInput("cannot run the model on no tokens".into()));
    }
    if tokens.len() > config.context_length {
        return Err(Error::ModelInput(format!(
            "sequence of {} tokens exceeds context length {}",
            tokens.len(),
            config.context_length
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| (t as usize) >= config.vocab_size) {
        return Err(Error::ModelInput(format!(
            "token id {bad} is outside the vocabulary of size {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Full forward pass keeping every intermediate needed by the backward.
pub(crate) fn forward_with_state(
    params: &[Mat],
    config: &ModelConfig,
    tokens: &[TokenId],
) -> Result<ForwardState> {
    check_tokens(config, tokens)?;
    let schema = ParamSchema::new(config);
    let t_len = tokens.len();
    let d = config.embed_dim;
    let heads = config.num_heads;
    let head_dim = config.head_dim();
    let inv_sqrt_dh = 1.0 / (head_dim as f64).sqrt();

    let tok_emb = &params[ParamSchema::TOK_EMBEDDING];
    let pos_emb = &params[ParamSchema::POS_EMBEDDING];
    let mut h = Mat::zeros(t_len, d);
    for (t, &token) in tokens.iter().enumerate() {
        let row = h.row_mut(t);
        row.copy_from_slice(tok_emb.row(token as usize));
        axpy(1.0, pos_emb.row(t), row);
    }

    let mut layers = Vec::with_capacity(config.num_layers);
    for layer in 0..config.num_layers {
        let h_in = h.clone();
        let mut a = Mat::zeros(t_len, d);
        let mut inv_a = vec![0.0; t_len];
        for t in 0..t_len {
            inv_a[t] = rmsnorm_row(h_in.row(t), a.row_mut(t));
        }
        let wq = &params[schema.layer(layer, LayerMat::Wq)];
        let wk = &params[schema.layer(layer, LayerMat::Wk)];
        let wv = &params[schema.layer(layer, LayerMat::Wv)];
        let mut q = Mat::zeros(t_len, d);
        let mut k = Mat::zeros(t_len, d);
        let mut v = Mat::zeros(t_len, d);
        matmul_nt(&a, wq, &mut q);
        matmul_nt(&a, wk, &mut k);
        matmul_nt(&a, wv, &mut v);

        let mut att = Vec::with_capacity(heads);
        let mut ctx = Mat::zeros(t_len, d);
        for head in 0..heads {
            let lo = head * head_dim;
            let hi = lo + head_dim;
            let mut p = Mat::zeros(t_len, t_len);
            for t in 0..t_len {
                {
                    let row = p.row_mut(t);
                    for j in 0..=t {
                        row[j] = dot(&q.row(t)[lo..hi], &k.row(j)[lo..hi]) * inv_sqrt_dh;
                    }
                    softmax_in_place(&mut row[..=t]);
                }
                for j in 0..=t {
                    let w = p.row(t)[j];
                    if w != 0.0 {
                        axpy(w, &v.row(j)[lo..hi], &mut ctx.row_mut(t)[lo..hi]);
                    }
                }
            }
            att.push(p);
        }

        let wo = &params[schema.layer(layer, LayerMat::Wo)];
        let mut attn_out = Mat::zeros(t_len, d);
        matmul_nt(&ctx, wo, &mut attn_out);
        let mut h_mid = h_in.clone();
        for t in 0..t_len {
            axpy(1.0, attn_out.row(t), h_mid.row_mut(t));
        }

        let mut b = Mat::zeros(t_len, d);
        let mut inv_b = vec![0.0; t_len];
        for t in 0..t_len {
            inv_b[t] = rmsnorm_row(h_mid.row(t), b.row_mut(t));
        }
        let w1 = &params[schema.layer(layer, LayerMat::W1)];
        let w2 = &params[schema.layer(layer, LayerMat::W2)];
        let mut z1 = Mat::zeros(t_len, config.feedforward_dim);
        matmul_nt(&b, w1, &mut z1);
        let mut a1 = z1.clone();
        for x in &mut a1.data {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let mut mlp_out = Mat::zeros(t_len, d);
        matmul_nt(&a1, w2, &mut mlp_out);
        let mut h_next = h_mid.clone();
        for t in 0..t_len {
            axpy(1.0, mlp_out.row(t), h_next.row_mut(t));
        }

        layers.push(LayerState {
            h_in,
            inv_a,
            a,
            q,
            k,
            v,
            att,
            ctx,
            h_mid,
            inv_b,
            b,
            z1,
            a1,
        });
        h = h_next;
    }

    let h_last = h;
    let mut hf = Mat::zeros(t_len, d);
    let mut inv_f = vec![0.0; t_len];
    for t in 0..t_len {
        inv_f[t] = rmsnorm_row(h_last.row(t), hf.row_mut(t));
    }
    let head_w = &params[schema.head()];
    let mut logits = Mat::zeros(t_len, config.vocab_size);
    matmul_nt(&hf, head_w, &mut logits);

    Ok(ForwardState {
        tokens: tokens.to_vec(),
        layers,
        h_last,
        inv_f,
        hf,
        logits,
    })
}

/// Sum of log softmax probabilities of the masked tokens, each conditioned
/// on its full prefix.
pub(crate) fn masked_logprob(state: &ForwardState, mask: &[bool]) -> f64 {
    let mut total = 0.0;
    for (t, &m) in mask.iter().enumerate() {
        if m {
            debug_assert!(t > 0, "position 0 has no prefix to predict from");
            total += log_softmax_at(state.logits.row(t - 1), state.tokens[t] as usize);
        }
    }
    total
}

/// Accumulate `coefficient` times the gradient of the masked negative log
/// likelihood into `grads`, which must mirror the parameter shapes.
pub(crate) fn backward_nll(
    params: &[Mat],
    config: &ModelConfig,
    state: &ForwardState,
    mask: &[bool],
    coefficient: f64,
    grads: &mut [Mat],
) {
    let t_len = state.tokens.len();
    let mut dlogits = Mat::zeros(t_len, config.vocab_size);
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let row = dlogits.row_mut(t - 1);
        row.copy_from_slice(state.logits.row(t - 1));
        softmax_in_place(row);
        for x in row.iter_mut() {
            *x *= coefficient;
        }
        row[state.tokens[t] as usize] -= coefficient;
    }
    backward_from_dlogits(params, config, state, &dlogits, grads);
}

/// Backpropagate an arbitrary logit gradient through the whole network.
pub(crate) fn backward_from_dlogits(
    params: &[Mat],
    config: &ModelConfig,
    state: &ForwardState,
    dlogits: &Mat,
    grads: &mut [Mat],
) {
    let schema = ParamSchema::new(config);
    let t_len = state.tokens.len();
    let d = config.embed_dim;
    let heads = config.num_heads;
    let head_dim = config.head_dim();
    let inv_sqrt_dh = 1.0 / (head_dim as f64).sqrt();

    // Output head and final norm.
    accumulate_outer(dlogits, &state.hf, &mut grads[schema.head()]);
    let mut dhf = Mat::zeros(t_len, d);
    matmul_nn(dlogits, &params[schema.head()], &mut dhf);
    let mut dh = Mat::zeros(t_len, d);
    for t in 0..t_len {
        rmsnorm_backward_row(
            state.h_last.row(t),
            state.inv_f[t],
            dhf.row(t),
            dh.row_mut(t),
        );
    }

    for layer in (0..config.num_layers).rev() {
        let st = &state.layers[layer];

        // Feedforward: h = h_mid + relu(b W1^T) W2^T.
        let w1 = &params[schema.layer(layer, LayerMat::W1)];
        let w2 = &params[schema.layer(layer, LayerMat::W2)];
        accumulate_outer(&dh, &st.a1, &mut grads[schema.layer(layer, LayerMat::W2)]);
        let mut da1 = Mat::zeros(t_len, config.feedforward_dim);
        matmul_nn(&dh, w2, &mut da1);
        for (g, &z) in da1.data.iter_mut().zip(&st.z1.data) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        accumulate_outer(&da1, &st.b, &mut grads[schema.layer(layer, LayerMat::W1)]);
        let mut db = Mat::zeros(t_len, d);
        matmul_nn(&da1, w1, &mut db);
        // Residual: dh_mid = dh + rmsnorm-back(db).
        let mut dh_mid = dh;
        for t in 0..t_len {
            rmsnorm_backward_row(st.h_mid.row(t), st.inv_b[t], db.row(t), dh_mid.row_mut(t));
        }

        // Attention: h_mid = h_in + (att-weighted V) Wo^T.
        let wo = &params[schema.layer(layer, LayerMat::Wo)];
        accumulate_outer(&dh_mid, &st.ctx, &mut grads[schema.layer(layer, LayerMat::Wo)]);
        let mut dctx = Mat::zeros(t_len, d);
        matmul_nn(&dh_mid, wo, &mut dctx);

        let mut dq = Mat::zeros(t_len, d);
        let mut dk = Mat::zeros(t_len, d);
        let mut dv = Mat::zeros(t_len, d);
        for head in 0..heads {
            let lo = head * head_dim;
            let hi = lo + head_dim;
            let p = &st.att[head];
            let mut datt = Mat::zeros(t_len, t_len);
            for t in 0..t_len {
                let dctx_row = &dctx.row(t)[lo..hi];
                let datt_row = datt.row_mut(t);
                for j in 0..=t {
                    datt_row[j] = dot(dctx_row, &st.v.row(j)[lo..hi]);
                }
            }
            for t in 0..t_len {
                for j in 0..=t {
                    let w = p.row(t)[j];
                    if w != 0.0 {
                        axpy(w, &dctx.row(t)[lo..hi], &mut dv.row_mut(j)[lo..hi]);
                    }
                }
            }
            // Softmax backward per row, then split into q and k.
            for t in 0..t_len {
                let p_row = &p.row(t)[..=t];
                let datt_row = &datt.row(t)[..=t];
                let inner = dot(p_row, datt_row);
                for j in 0..=t {
                    let ds = p_row[j] * (datt_row[j] - inner) * inv_sqrt_dh;
                    if ds != 0.0 {
                        axpy(ds, &st.k.row(j)[lo..hi], &mut dq.row_mut(t)[lo..hi]);
                        axpy(ds, &st.q.row(t)[lo..hi], &mut dk.row_mut(j)[lo..hi]);
                    }
                }
            }
        }

        let wq = &params[schema.layer(layer, LayerMat::Wq)];
        let wk = &params[schema.layer(layer, LayerMat::Wk)];
        let wv = &params[schema.layer(layer, LayerMat::Wv)];
        accumulate_outer(&dq, &st.a, &mut grads[schema.layer(layer, LayerMat::Wq)]);
        accumulate_outer(&dk, &st.a, &mut grads[schema.layer(layer, LayerMat::Wk)]);
        accumulate_outer(&dv, &st.a, &mut grads[schema.layer(layer, LayerMat::Wv)]);
        let mut da = Mat::zeros(t_len, d);
        let mut tmp = Mat::zeros(t_len, d);
        matmul_nn(&dq, wq, &mut tmp);
        for (o, x) in da.data.iter_mut().zip(&tmp.data) {
            *o += x;
        }
        matmul_nn(&dk, wk, &mut tmp);
        for (o, x) in da.data.iter_mut().zip(&tmp.data) {
            *o += x;
        }
        matmul_nn(&dv, wv, &mut tmp);
        for (o, x) in da.data.iter_mut().zip(&tmp.data) {
            *o += x;
        }

        // Residual: dh_in = dh_mid + rmsnorm-back(da).
        let mut dh_in = dh_mid;
        for t in 0..t_len {
            rmsnorm_backward_row(st.h_in.row(t), st.inv_a[t], da.row(t), dh_in.row_mut(t));
        }
        dh = dh_in;
    }

    // Embeddings.
    for (t, &token) in state.tokens.iter().enumerate() {
        axpy(
            1.0,
            dh.row(t),
            grads[ParamSchema::TOK_EMBEDDING].row_mut(token as usize),
        );
        axpy(1.0, dh.row(t), grads[ParamSchema::POS_EMBEDDING].row_mut(t));
    }
}

fn check_mask(tokens: &[TokenId], mask: &[bool]) -> Result<usize> {
    if mask.len() != tokens.len() {
        return Err(Error::ModelInput(format!(
            "loss mask length {} does not match token length {}",
            mask.len(),
            tokens.len()
        )));
    }
    if mask.first() == Some(&true) {
        return Err(Error::ModelInput(
            "position 0 cannot be a loss target; it has no prefix".into(),
        ));
    }
    Ok(mask.iter().filter(|&&m| m).count())
}

/// Mean masked cross-entropy of a batch, without touching gradients.
pub fn train_loss(model: &ModelCheckpoint, batch: &TrainBatch) -> Result<f64> {
    let params = lora::effective_params(model)?;
    let mut total_targets = 0usize;
    for seq in batch {
        total_targets += check_mask(&seq.tokens, &seq.loss_mask)?;
    }
    if total_targets == 0 {
        return Err(Error::ModelInput(
            "batch has no loss targets; every position is masked out".into(),
        ));
    }
    let mut nll = 0.0;
    for seq in batch {
        let state = forward_with_state(&params, &model.config, &seq.tokens)?;
        nll -= masked_logprob(&state, &seq.loss_mask);
    }
    Ok(nll / total_targets as f64)
}

/// Mean masked cross-entropy of a batch and its exact gradient for every
/// parameter tensor, in schema order. The loss matches [`train_loss`].
/// For a checkpoint carrying adapters, gradients are taken with respect
/// to the effective (adapter-merged) parameters.
pub fn train_loss_and_grads(
    model: &ModelCheckpoint,
    batch: &TrainBatch,
) -> Result<(f64, Vec<Mat>)> {
    let params = lora::effective_params(model)?;
    ce_loss_and_grads(&params, &model.config, batch)
}

/// Mean masked cross-entropy and its gradient for every parameter tensor.
pub(crate) fn ce_loss_and_grads(
    params: &[Mat],
    config: &ModelConfig,
    batch: &TrainBatch,
) -> Result<(f64, Vec<Mat>)> {
    let mut total_targets = 0usize;
    for seq in batch {
        total_targets += check_mask(&seq.tokens, &seq.loss_mask)?;
    }
    if total_targets == 0 {
        return Err(Error::ModelInput(
            "batch has no loss targets; every position is masked out".into(),
        ));
    }
    let shapes = ParamSchema::new(config).shapes(config);
    let mut grads: Vec<Mat> = shapes.iter().map(|&(_, r, c)| Mat::zeros(r, c)).collect();
    let coefficient = 1.0 / total_targets as f64;
    let mut nll = 0.0;
    for seq in batch {
        let state = forward_with_state(params, config, &seq.tokens)?;
        nll -= masked_logprob(&state, &seq.loss_mask);
        backward_nll(params, config, &state, &seq.loss_mask, coefficient, &mut grads);
    }
    Ok((nll * coefficient, grads))
}

/// Per-position next-token logits for a token sequence.
pub fn forward_logits(model: &ModelCheckpoint, tokens: &[TokenId]) -> Result<Mat> {
    let params = lora::effective_params(model)?;
    Ok(forward_with_state(&params, &model.config, tokens)?.logits)
}

/// Log probability of `completion` given `prompt`: the sum over completion
/// tokens of the log softmax of the realized token.
pub fn sequence_logprob(
    model: &ModelCheckpoint,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<f64> {
    let params = lora::effective_params(model)?;
    sequence_logprob_with(&params, &model.config, prompt, completion)
}

pub(crate) fn sequence_logprob_with(
    params: &[Mat],
    config: &ModelConfig,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<f64> {
    if completion.is_empty() {
        return Err(Error::ModelInput(
            "sequence log probability of an empty completion is undefined".into(),
        ));
    }
    if prompt.is_empty() {
        return Err(Error::ModelInput(
            "a completion needs a non-empty prompt to condition on".into(),
        ));
    }
    let mut tokens = Vec::with_capacity(prompt.len() + completion.len());
    tokens.extend_from_slice(prompt);
    tokens.extend_from_slice(completion);
    let state = forward_with_state(params, config, &tokens)?;
    let mut mask = vec![false; tokens.len()];
    for m in &mut mask[prompt.len()..] {
        *m = true;
    }
    Ok(masked_logprob(&state, &mask))
}
