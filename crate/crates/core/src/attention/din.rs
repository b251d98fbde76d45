use rand::Rng;

use super::dense::{glorot, Mlp};
use super::ops::{repeat_rows, weighted_sum};
use super::AttentionOutput;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

pub const DIN_HIDDEN: [usize; 2] = [32, 16];

/// Target attention whose activation unit scores `[q; k; q - k; q ⊙ k]` with a small MLP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DinAttention {
    pub dim: usize,
    /// First layer, `[4D, hidden[0]]`, rows ordered as the four input blocks.
    pub w1: ParamId,
    pub b1: ParamId,
    /// Remaining layers down to the scalar logit.
    pub tail: Mlp,
}

impl DinAttention {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let h1 = hidden.first().copied().unwrap_or(1);
        let w1 = params.add(format!("{name}.w1"), glorot(4 * dim, h1, rng));
        let b1 = params.add(format!("{name}.b1"), Tensor::zeros(&[h1]));
        let mut dims = hidden.to_vec();
        dims.push(1);
        let tail = Mlp::init(params, &format!("{name}.mlp"), &dims, rng);
        Self { dim, w1, b1, tail }
    }

    fn block(&self, tape: &mut Tape, w1: Var, k: usize) -> Result<Var> {
        let rows: Vec<Option<usize>> = (k * self.dim..(k + 1) * self.dim).map(Some).collect();
        tape.gather_rows(w1, &rows)
    }

    /// Per-key logits, `[B, T]`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        query: Var,
        keys: Var,
    ) -> Result<Var> {
        let (qs, ks) = (tape.shape(query).to_vec(), tape.shape(keys).to_vec());
        if qs.len() != 2
            || ks.len() != 3
            || qs[0] != ks[0]
            || qs[1] != self.dim
            || ks[2] != self.dim
        {
            return Err(Error::dim("din_attention", &qs, &ks));
        }
        let (b, t, d) = (ks[0], ks[1], ks[2]);
        // [q; k; q-k; q*k] W1 == q (Wa + Wc) + k (Wb - Wc) + (q*k) Wd
        let w1 = bound.get(self.w1);
        let (wa, wb, wc, wd) = (
            self.block(tape, w1, 0)?,
            self.block(tape, w1, 1)?,
            self.block(tape, w1, 2)?,
            self.block(tape, w1, 3)?,
        );
        let wq = tape.add(wa, wc)?;
        let wk = tape.sub(wb, wc)?;
        let kf = tape.reshape(keys, &[b * t, d])?;
        let qh = tape.matmul(query, wq)?;
        let qh = repeat_rows(tape, qh, t)?;
        let kh = tape.matmul(kf, wk)?;
        let qr = repeat_rows(tape, query, t)?;
        let qk = tape.mul(qr, kf)?;
        let qkh = tape.matmul(qk, wd)?;
        let h = tape.add(qh, kh)?;
        let h = tape.add(h, qkh)?;
        let h = tape.add_bias(h, bound.get(self.b1))?;
        let h = tape.relu(h);
        let out = self.tail.forward(tape, bound, h)?;
        tape.reshape(out, &[b, t])
    }

    /// `query: [B, D]`, `keys: [B, T, D]`, `mask: [B * T]`. An all-masked row pools to zero.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        query: Var,
        keys: Var,
        mask: &[bool],
    ) -> Result<AttentionOutput> {
        let logits = self.logits(tape, bound, query, keys)?;
        let weights = tape.softmax_masked_or_zero(logits, mask)?;
        let pooled = weighted_sum(tape, weights, keys)?;
        Ok(AttentionOutput { weights, pooled })
    }
}
