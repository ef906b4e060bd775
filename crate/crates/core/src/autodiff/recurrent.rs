use serde::{Deserialize, Serialize};

use super::graph::{Graph, Mask, Var};
use super::params::ParamId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Parameters of one LSTM layer. Gate blocks are laid out `[input, forget, candidate, output]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[input_dim, 4 * hidden]`
    pub kernel: ParamId,
    /// `[hidden, 4 * hidden]`
    pub recurrent: ParamId,
    /// `[4 * hidden]`
    pub bias: ParamId,
    pub hidden: usize,
}

pub struct LstmOutput {
    /// `[batch, time, hidden]`; masked steps repeat the previous state.
    pub states: Var,
    pub final_hidden: Var,
    pub final_cell: Var,
}

/// Runs an LSTM over `x: [batch, time, input]`.
///
/// Masked steps copy `(h, c)` through unchanged, so the final state is the
/// state after the last unmasked step in the direction of travel.
pub fn lstm_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    mask: &Mask,
    p: &LstmParams,
    direction: Direction,
) -> Result<LstmOutput> {
    let (b, steps, d) = match *g.shape(x) {
        [b, t, d] => (b, t, d),
        ref s => return Err(Error::shape("lstm", s, &[0, 0, 0])),
    };
    if mask.len() != b * steps {
        return Err(Error::shape("lstm", &[b, steps], &[mask.len()]));
    }
    if steps == 0 {
        return Err(Error::invalid("lstm", "empty sequence"));
    }
    let h = p.hidden;
    let kernel = g.param(p.kernel);
    let recurrent = g.param(p.recurrent);
    let bias = g.param(p.bias);
    if g.shape(kernel) != [d, 4 * h] || g.shape(recurrent) != [h, 4 * h] {
        return Err(Error::shape("lstm", &[d, 4 * h], g.shape(kernel)));
    }

    let flat = g.reshape(x, &[b * steps, d])?;
    let projected = g.dense(flat, kernel, bias)?;
    let projected = g.reshape(projected, &[b, steps, 4 * h])?;

    let zeros = super::tensor::Tensor::zeros(&[b, h]);
    let mut hidden = g.input(zeros.clone());
    let mut cell = g.input(zeros);
    let mut states = vec![hidden; steps];

    let order: Vec<usize> = match direction {
        Direction::Forward => (0..steps).collect(),
        Direction::Backward => (0..steps).rev().collect(),
    };
    for t in order {
        let live: Vec<bool> = (0..b).map(|i| mask[i * steps + t]).collect();
        let xt = g.time_step(projected, t)?;
        let rec = g.matmul(hidden, recurrent)?;
        let z = g.add(xt, rec)?;
        let i_gate = g.slice_cols(z, 0, h)?;
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.slice_cols(z, h, h)?;
        let f_gate = g.sigmoid(f_gate);
        let cand = g.slice_cols(z, 2 * h, h)?;
        let cand = g.tanh(cand);
        let o_gate = g.slice_cols(z, 3 * h, h)?;
        let o_gate = g.sigmoid(o_gate);

        let kept = g.mul(f_gate, cell)?;
        let written = g.mul(i_gate, cand)?;
        let new_cell = g.add(kept, written)?;
        let squashed = g.tanh(new_cell);
        let new_hidden = g.mul(o_gate, squashed)?;

        cell = g.select_rows(&live, new_cell, cell)?;
        hidden = g.select_rows(&live, new_hidden, hidden)?;
        states[t] = hidden;
    }
    let states = g.stack_time(&states)?;
    Ok(LstmOutput {
        states,
        final_hidden: hidden,
        final_cell: cell,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// `e_t = v · tanh(W h_t + b)`
    Feedforward,
    /// `e_t = cos(tanh(W h_t + b), u)` with a learned context vector `u`
    ContextCosine,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// `[hidden, attention]`
    pub proj: ParamId,
    /// `[attention]`
    pub proj_bias: ParamId,
    /// `[attention, 1]` scoring vector or `[attention]` context vector.
    pub score: ParamId,
    pub variant: AttentionVariant,
}

/// Softmax-weighted sum of `states: [batch, time, hidden]` over unmasked steps.
///
/// Returns `(pooled [batch, hidden], weights [batch, time])`.
pub fn attention_pool<T: Scalar>(
    g: &mut Graph<'_, T>,
    states: Var,
    mask: &Mask,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let (b, steps, h) = match *g.shape(states) {
        [b, t, h] => (b, t, h),
        ref s => return Err(Error::shape("attention", s, &[0, 0, 0])),
    };
    let proj = g.param(p.proj);
    let proj_bias = g.param(p.proj_bias);
    let score = g.param(p.score);
    let flat = g.reshape(states, &[b * steps, h])?;
    let hidden = g.dense(flat, proj, proj_bias)?;
    let hidden = g.tanh(hidden);
    let scores = match p.variant {
        AttentionVariant::Feedforward => g.matmul(hidden, score)?,
        AttentionVariant::ContextCosine => g.cosine_rows(hidden, score)?,
    };
    let scores = g.reshape(scores, &[b, steps])?;
    let weights = g.masked_softmax_time(scores, mask)?;
    let pooled = g.weighted_sum_time(states, weights)?;
    Ok((pooled, weights))
}
