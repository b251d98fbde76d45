use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Batch-mean negative log-likelihood of `p: [B, 1]` (or `[B]`) against 0/1 labels.
pub fn nll(tape: &mut Tape, p: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.value(p).numel();
    if n != labels.len() || n == 0 {
        return Err(Error::dim("nll", tape.shape(p), &[labels.len()]));
    }
    let p = tape.reshape(p, &[n])?;
    let y = tape.constant(Tensor::vector(labels.to_vec())?);
    let not_y = tape.constant(Tensor::vector(labels.iter().map(|y| 1.0 - y).collect())?);
    let one = tape.constant(Tensor::scalar(1.0));
    let neg = tape.scale(p, -1.0);
    let q = tape.add(neg, one)?;
    let lp = tape.ln(p)?;
    let lq = tape.ln(q)?;
    let a = tape.mul(y, lp)?;
    let b = tape.mul(not_y, lq)?;
    let s = tape.add(a, b)?;
    let s = tape.sum_all(s)?;
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// `α · NLL(p_trigger, y_t) + β · NLL(p_target, y)`. Without a trigger head only the target term remains.
pub fn joint_loss(
    tape: &mut Tape,
    p_target: Var,
    labels: &[f64],
    p_trigger: Option<Var>,
    trigger_labels: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::contract("loss weights must be non-negative"));
    }
    let target = nll(tape, p_target, labels)?;
    let target = tape.scale(target, beta);
    match p_trigger {
        Some(p) => {
            let trigger = nll(tape, p, trigger_labels)?;
            let trigger = tape.scale(trigger, alpha);
            tape.add(trigger, target)
        }
        None => Ok(target),
    }
}
