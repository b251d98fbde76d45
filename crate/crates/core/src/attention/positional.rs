use rand::Rng;

use super::dense::glorot;
use super::ops::{tile_rows, weighted_sum};
use super::AttentionOutput;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

/// Attention whose query is a learned embedding of each behavior's position:
/// `logit_t = zᵀ tanh(p_t W_p + e_t W_e + b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionalAttention {
    pub max_len: usize,
    /// `[T_max, d_p]`
    pub positions: ParamId,
    /// `[d_p, d_h]`
    pub w_p: ParamId,
    /// `[D, d_h]`
    pub w_e: ParamId,
    /// `[d_h]`
    pub b: ParamId,
    /// `[d_h, 1]`
    pub z: ParamId,
}

impl PositionalAttention {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        max_len: usize,
        dim: usize,
        d_p: usize,
        d_h: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (d_p as f64).sqrt();
        let table = (0..max_len * d_p)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let positions = params.add(
            format!("{name}.positions"),
            Tensor::new(&[max_len, d_p], table).expect("positive dims"),
        );
        Self {
            max_len,
            positions,
            w_p: params.add(format!("{name}.w_p"), glorot(d_p, d_h, rng)),
            w_e: params.add(format!("{name}.w_e"), glorot(dim, d_h, rng)),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[d_h])),
            z: params.add(format!("{name}.z"), glorot(d_h, 1, rng)),
        }
    }

    /// `keys: [B, T, D]`; position of slot `t` is `t`. `mask` selects the sub-sequence.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        keys: Var,
        mask: &[bool],
    ) -> Result<AttentionOutput> {
        let ks = tape.shape(keys).to_vec();
        if ks.len() != 3 || ks[1] > self.max_len {
            return Err(Error::dim("positional_attention", &ks, &[self.max_len]));
        }
        let (b, t, d) = (ks[0], ks[1], ks[2]);
        let rows: Vec<Option<usize>> = (0..t).map(Some).collect();
        let p = tape.gather_rows(bound.get(self.positions), &rows)?;
        let pw = tape.matmul(p, bound.get(self.w_p))?;
        let pw = tile_rows(tape, pw, b)?;
        let kf = tape.reshape(keys, &[b * t, d])?;
        let ew = tape.matmul(kf, bound.get(self.w_e))?;
        let h = tape.add(pw, ew)?;
        let h = tape.add_bias(h, bound.get(self.b))?;
        let h = tape.tanh(h);
        let logits = tape.matmul(h, bound.get(self.z))?;
        let logits = tape.reshape(logits, &[b, t])?;
        let weights = tape.softmax_masked_or_zero(logits, mask)?;
        let pooled = weighted_sum(tape, weights, keys)?;
        Ok(AttentionOutput { weights, pooled })
    }
}
