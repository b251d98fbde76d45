use rand::Rng;

use super::dense::glorot;
use super::ops::weighted_sum;
use super::AttentionOutput;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FimSlot {
    /// `[dim_l, D]` projection, present only when the slot is not already `D` wide.
    pub proj: Option<ParamId>,
    /// `[D, 1]`
    pub w: ParamId,
    /// `[1]`
    pub b: ParamId,
}

/// Softmax-weighted combination of feature slots scored by `tanh(r_l W_l + b_l)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fim {
    pub dim: usize,
    pub slot_dims: Vec<usize>,
    pub slots: Vec<FimSlot>,
}

impl Fim {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        slot_dims: &[usize],
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let slots = slot_dims
            .iter()
            .enumerate()
            .map(|(l, &sd)| FimSlot {
                proj: (sd != dim)
                    .then(|| params.add(format!("{name}.{l}.proj"), glorot(sd, dim, rng))),
                w: params.add(format!("{name}.{l}.w"), glorot(dim, 1, rng)),
                b: params.add(format!("{name}.{l}.b"), Tensor::zeros(&[1])),
            })
            .collect();
        Self {
            dim,
            slot_dims: slot_dims.to_vec(),
            slots,
        }
    }

    /// `slots[l]: [B, dim_l]` → pooled `[B, D]`, weights `[B, L]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        slots: &[Var],
    ) -> Result<AttentionOutput> {
        self.forward_shifted(tape, bound, slots, 0.0)
    }

    /// Same as [`Fim::forward`] with `shift` added to every slot score.
    pub(crate) fn forward_shifted(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        slots: &[Var],
        shift: f64,
    ) -> Result<AttentionOutput> {
        if slots.is_empty() || slots.len() != self.slots.len() {
            return Err(Error::contract(format!(
                "feature interaction expects {} slots, got {}",
                self.slots.len(),
                slots.len()
            )));
        }
        let batch = tape.shape(slots[0])[0];
        let shift = (shift != 0.0).then(|| tape.constant(Tensor::scalar(shift)));
        let mut projected = Vec::with_capacity(slots.len());
        let mut scores = Vec::with_capacity(slots.len());
        for ((&r, p), &sd) in slots.iter().zip(&self.slots).zip(&self.slot_dims) {
            let s = tape.shape(r);
            if s != [batch, sd] {
                return Err(Error::dim("fim", s, &[batch, sd]));
            }
            let r = match p.proj {
                Some(w) => tape.matmul(r, bound.get(w))?,
                None => r,
            };
            let s = tape.matmul(r, bound.get(p.w))?;
            let s = tape.add_bias(s, bound.get(p.b))?;
            let mut s = tape.tanh(s);
            if let Some(c) = shift {
                s = tape.add(s, c)?;
            }
            projected.push(r);
            scores.push(s);
        }
        let scores = tape.concat(&scores, 1)?;
        let weights = tape.softmax_masked(scores, &vec![true; batch * slots.len()])?;
        let stacked = tape.concat(&projected, 1)?;
        let stacked = tape.reshape(stacked, &[batch, slots.len(), self.dim])?;
        let pooled = weighted_sum(tape, weights, stacked)?;
        Ok(AttentionOutput { weights, pooled })
    }
}
