//! Attention pools and the dense layers they are built from.
//!
//! Everything is batched: sequences are `[B, T, D]` with a flat `[B * T]` validity mask.

mod dense;
mod din;
mod fim;
mod mhsa;
pub(crate) mod ops;
mod positional;

pub use dense::{Dense, Mlp};
pub use din::{DinAttention, DIN_HIDDEN};
pub use fim::{Fim, FimSlot};
pub use mhsa::{Ffn, Head, Mhsa, MhsaLayer};
pub use positional::PositionalAttention;

use crate::tensor::Var;

/// Normalized weights `[B, T]` and the pooled vectors `[B, D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub weights: Var,
    pub pooled: Var,
}
