//! The building blocks of the full model, each usable on its own.

use crate::attention::{ops, AttentionOutput, Dense, DinAttention, Fim, Mhsa, PositionalAttention};
use crate::error::{Error, Result};
use crate::features::Batch;
use crate::tensor::{BoundParams, Tape, Tensor, Var};

pub const PROB_EPS: f64 = 1e-7;

pub(crate) fn clip_prob(tape: &mut Tape, p: Var) -> Var {
    tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

/// Intent network: attention over behaviors with the trigger as query, then
/// `[V_U; E_u; E_t] → hidden → D (sigmoid gate) → 1 (sigmoid probability)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Uin {
    pub din: DinAttention,
    pub hidden: Dense,
    pub gate: Dense,
    pub head: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct UinOutput {
    /// `[B, 1]`, clipped
    pub p: Var,
    /// `[B, D]`, each coordinate in (0, 1)
    pub vt: Var,
    pub weights: Var,
}

pub fn uin_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    uin: &Uin,
    e_u: Var,
    e_b: Var,
    e_t: Var,
    mask: &[bool],
) -> Result<UinOutput> {
    let att = uin.din.forward(tape, bound, e_t, e_b, mask)?;
    let x = tape.concat(&[att.pooled, e_u, e_t], 1)?;
    let h = uin.hidden.forward(tape, bound, x)?;
    let h = tape.relu(h);
    let g = uin.gate.forward(tape, bound, h)?;
    let vt = tape.sigmoid(g);
    let logit = uin.head.forward(tape, bound, vt)?;
    let p = tape.sigmoid(logit);
    Ok(UinOutput {
        p: clip_prob(tape, p),
        vt,
        weights: att.weights,
    })
}

/// `FE_t = g ⊙ E_t + (1 - g) ⊙ E_i`. The gate is `[B, D]`, or `[B, 1]` for a per-sample scalar.
pub fn fem_fuse(tape: &mut Tape, gate: Var, e_t: Var, e_i: Var) -> Result<Var> {
    let (gs, ts) = (tape.shape(gate).to_vec(), tape.shape(e_t).to_vec());
    if ts != tape.shape(e_i) || ts.len() != 2 || gs.len() != 2 || gs[0] != ts[0] {
        return Err(Error::dim("fem_fuse", &gs, &ts));
    }
    if tape
        .value(gate)
        .data()
        .iter()
        .any(|g| !(0.0..=1.0).contains(g))
    {
        return Err(Error::contract("fusion gate outside [0, 1]"));
    }
    let gate = if gs[1] == ts[1] {
        gate
    } else if gs[1] == 1 {
        let ones = tape.constant(Tensor::ones(&[1, ts[1]]));
        tape.matmul(gate, ones)?
    } else {
        return Err(Error::dim("fem_fuse", &gs, &ts));
    };
    let one = tape.constant(Tensor::scalar(1.0));
    let neg = tape.scale(gate, -1.0);
    let rest = tape.add(neg, one)?;
    let a = tape.mul(gate, e_t)?;
    let b = tape.mul(rest, e_i)?;
    tape.add(a, b)
}

/// Positions (in sequence order) whose attribute equals the trigger's.
pub fn hard_filter(attrs: &[usize], trigger: usize) -> Vec<usize> {
    attrs
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == trigger)
        .map(|(t, _)| t)
        .collect()
}

/// `[B * T]` mask of valid behaviors whose item field `field` matches the trigger.
pub fn hard_filter_mask(batch: &Batch, field: usize) -> Vec<bool> {
    let t_max = batch.max_len;
    let mut mask = vec![false; batch.size * t_max];
    for b in 0..batch.size {
        let attrs = &batch.behaviors[field][b * t_max..b * t_max + batch.lengths[b]];
        for t in hard_filter(attrs, batch.trigger[field][b]) {
            mask[b * t_max + t] = true;
        }
    }
    mask
}

/// Hard branch: one positional pool per filter attribute, combined with `E_u` by [`Fim`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hsm {
    /// Item-field index of each filter attribute.
    pub fields: Vec<usize>,
    pub pools: Vec<PositionalAttention>,
    pub fim: Fim,
}

#[derive(Clone, Debug)]
pub struct HsmOutput {
    /// `EH_b`, `[B, D]`
    pub pooled: Var,
    pub pool_weights: Vec<Var>,
    pub fim_weights: Var,
}

pub fn hsm_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    hsm: &Hsm,
    batch: &Batch,
    e_b: Var,
    e_u: Var,
) -> Result<HsmOutput> {
    let mut slots = vec![e_u];
    let mut pool_weights = Vec::with_capacity(hsm.pools.len());
    for (&field, pool) in hsm.fields.iter().zip(&hsm.pools) {
        let mask = hard_filter_mask(batch, field);
        let out = pool.forward(tape, bound, e_b, &mask)?;
        slots.push(out.pooled);
        pool_weights.push(out.weights);
    }
    let fim = hsm.fim.forward(tape, bound, &slots)?;
    Ok(HsmOutput {
        pooled: fim.pooled,
        pool_weights,
        fim_weights: fim.weights,
    })
}

/// Soft branch: self-attention over behaviors, then attention with the fused query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ssm {
    pub mhsa: Mhsa,
    pub din: DinAttention,
}

pub fn ssm_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    ssm: &Ssm,
    e_b: Var,
    fe_t: Var,
    mask: &[bool],
) -> Result<AttentionOutput> {
    let transformed = ssm.mhsa.forward(tape, bound, e_b, mask)?;
    ssm.din.forward(tape, bound, fe_t, transformed, mask)
}

/// Mean of the valid rows of `[B, T, D]`; an empty sequence gives zeros.
pub(crate) fn masked_mean(tape: &mut Tape, e_b: Var, batch: &Batch) -> Result<Var> {
    let t = batch.max_len;
    let w: Vec<f64> = (0..batch.size)
        .flat_map(|b| {
            let n = batch.lengths[b];
            (0..t).map(move |i| if i < n { 1.0 / n as f64 } else { 0.0 })
        })
        .collect();
    let w = tape.constant(Tensor::new(&[batch.size, t], w)?);
    ops::weighted_sum(tape, w, e_b)
}
