//! Small shape helpers built from tape primitives.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `[B, C]` → `[B * times, C]`, each row repeated `times` times in place.
pub(crate) fn repeat_rows(tape: &mut Tape, x: Var, times: usize) -> Result<Var> {
    let rows = tape.shape(x)[0];
    let idx: Vec<Option<usize>> = (0..rows)
        .flat_map(|r| std::iter::repeat_n(Some(r), times))
        .collect();
    tape.gather_rows(x, &idx)
}

/// `[R, C]` → `[times * R, C]`, the whole block stacked `times` times.
pub(crate) fn tile_rows(tape: &mut Tape, x: Var, times: usize) -> Result<Var> {
    let rows = tape.shape(x)[0];
    let idx: Vec<Option<usize>> = (0..times).flat_map(|_| (0..rows).map(Some)).collect();
    tape.gather_rows(x, &idx)
}

/// `Σ_t weights[b, t] · values[b, t, :]` for `weights: [B, T]`, `values: [B, T, D]`.
pub(crate) fn weighted_sum(tape: &mut Tape, weights: Var, values: Var) -> Result<Var> {
    let (b, t) = (tape.shape(weights)[0], tape.shape(weights)[1]);
    let d = tape.shape(values)[2];
    let w = tape.reshape(weights, &[b, 1, t])?;
    let pooled = tape.batch_matmul(w, values, false)?;
    tape.reshape(pooled, &[b, d])
}

/// Zeroes the rows of `x` (viewed as `[mask.len(), C]`) whose mask entry is false.
pub(crate) fn zero_masked_rows(tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    if mask.is_empty() || !n.is_multiple_of(mask.len()) {
        return Err(Error::dim("zero_masked_rows", &shape, &[mask.len()]));
    }
    let c = n / mask.len();
    let data = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, c))
        .collect();
    let m = tape.constant(Tensor::new(&shape, data)?);
    tape.mul(x, m)
}
