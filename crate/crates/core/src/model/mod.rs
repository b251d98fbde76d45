//! The full model, its variants, and checkpointing.

mod checkpoint;
mod components;
mod loss;
mod variant;

pub use components::{
    fem_fuse, hard_filter, hard_filter_mask, hsm_forward, ssm_forward, uin_forward, Hsm, HsmOutput,
    Ssm, Uin, UinOutput, PROB_EPS,
};
pub use loss::{joint_loss, nll};
pub use variant::ModelVariant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Dense, DinAttention, Fim, Mhsa, Mlp, PositionalAttention};
use crate::error::{Error, Result};
use crate::features::{lookup_embeddings, Batch, EmbeddingTables, FeatureSchema};
use crate::tensor::{BoundParams, ParamSet, Tape, Var};
use components::{clip_prob, masked_mean};

/// Layer sizes. `d_ff = None` means `2 D`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub heads: usize,
    pub layers: usize,
    pub d_ff: Option<usize>,
    pub pos_dim: usize,
    pub pos_hidden: usize,
    pub din_hidden: Vec<usize>,
    pub uin_hidden: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            heads: 2,
            layers: 1,
            d_ff: None,
            pos_dim: 16,
            pos_hidden: 16,
            din_hidden: crate::attention::DIN_HIDDEN.to_vec(),
            uin_hidden: 32,
            head_hidden: vec![64, 32],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Query {
    Target,
    Trigger,
}

/// How the behavior sequence is summarized for the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pooling {
    Soft(Ssm),
    Mean,
    Attention {
        din: DinAttention,
        query: Query,
    },
    ConcatQuery {
        proj: Dense,
        din: DinAttention,
    },
    TwoTower {
        trigger: DinAttention,
        target: DinAttention,
    },
}

/// Attention weights exposed for inspection.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub intent: Option<Var>,
    pub sequence: Vec<Var>,
    pub hard: Vec<Var>,
    pub interaction: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[B, 1]`, clipped to `[1e-7, 1 - 1e-7]`
    pub p_target: Var,
    /// `[B, 1]`; absent for variants without an intent network
    pub p_trigger: Option<Var>,
    /// `[B, D]` fusion gate
    pub vt: Option<Var>,
    pub diagnostics: Diagnostics,
}

/// Plain-value predictions. Variants without an intent network report `p_trigger = 0.5`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p_target: Vec<f64>,
    pub p_trigger: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub variant: ModelVariant,
    pub hyper: ModelHyper,
    pub schema: FeatureSchema,
    pub params: ParamSet,
    pub tables: EmbeddingTables,
    pub uin: Option<Uin>,
    pub hsm: Option<Hsm>,
    pub pooling: Pooling,
    pub head: Mlp,
}

/// Allocates and initializes every parameter the variant routes through.
pub fn build_variant(
    variant: ModelVariant,
    schema: &FeatureSchema,
    hyper: &ModelHyper,
    seed: u64,
) -> Result<Model> {
    if hyper.din_hidden.is_empty() || hyper.head_hidden.is_empty() || hyper.layers == 0 {
        return Err(Error::Config(
            "hidden layer lists and layer count must be non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let rng = &mut rng;
    let p = &mut params;
    let d = schema.item_dim();
    let du = schema.user_dim();
    let dc = schema.context_dim();
    let tables = EmbeddingTables::init(schema, p, rng);

    let uin = variant.has_intent().then(|| Uin {
        din: DinAttention::init(p, "uin.att", d, &hyper.din_hidden, rng),
        hidden: Dense::init(p, "uin.hidden", 2 * d + du, hyper.uin_hidden, rng),
        gate: Dense::init(p, "uin.gate", hyper.uin_hidden, d, rng),
        head: Dense::init(p, "uin.head", d, 1, rng),
    });

    let hsm = variant.has_hard_branch().then(|| {
        let fields = schema.hard_filter_fields().to_vec();
        let pools = fields
            .iter()
            .map(|&f| {
                let name = format!("hsm.{}", schema.item_fields()[f].name);
                PositionalAttention::init(
                    p,
                    &name,
                    schema.max_behaviors(),
                    d,
                    hyper.pos_dim,
                    hyper.pos_hidden,
                    rng,
                )
            })
            .collect();
        let mut slot_dims = vec![du];
        slot_dims.extend(std::iter::repeat_n(d, fields.len()));
        Hsm {
            fim: Fim::init(p, "hsm.fim", &slot_dims, d, rng),
            fields,
            pools,
        }
    });

    let din = |p: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str| {
        DinAttention::init(p, name, d, &hyper.din_hidden, rng)
    };
    let pooling = match variant {
        ModelVariant::Dihn | ModelVariant::DihnScalar | ModelVariant::DihnNoHsm => {
            let d_ff = hyper.d_ff.unwrap_or(2 * d);
            Pooling::Soft(Ssm {
                mhsa: Mhsa::init(p, "ssm.mhsa", d, hyper.heads, d_ff, hyper.layers, rng)?,
                din: din(p, rng, "ssm.att"),
            })
        }
        ModelVariant::DihnNoSsmMean => Pooling::Mean,
        ModelVariant::DihnNoSsmTarget | ModelVariant::DinBaseline => Pooling::Attention {
            din: din(p, rng, "seq.att"),
            query: Query::Target,
        },
        ModelVariant::DihnNoSsmTrigger => Pooling::Attention {
            din: din(p, rng, "seq.att"),
            query: Query::Trigger,
        },
        ModelVariant::DihnNoSsmConcat => Pooling::ConcatQuery {
            proj: Dense::init(p, "seq.query", 2 * d, d, rng),
            din: din(p, rng, "seq.att"),
        },
        ModelVariant::Din2Ta => Pooling::TwoTower {
            trigger: din(p, rng, "seq.trigger_att"),
            target: din(p, rng, "seq.target_att"),
        },
    };

    let pooled_width = match pooling {
        Pooling::TwoTower { .. } => 2 * d,
        _ => d,
    };
    let hard_width = if hsm.is_some() { d } else { 0 };
    let trigger_width = if variant.uses_trigger() { d } else { 0 };
    let mut dims = vec![pooled_width + hard_width + du + trigger_width + d + dc];
    dims.extend(&hyper.head_hidden);
    dims.push(1);
    let head = Mlp::init(p, "head", &dims, rng);

    Ok(Model {
        variant,
        hyper: hyper.clone(),
        schema: schema.clone(),
        params,
        tables,
        uin,
        hsm,
        pooling,
        head,
    })
}

impl Model {
    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let s = &self.schema;
        let ok = batch.max_len == s.max_behaviors()
            && batch.user.len() == s.user_fields().len()
            && batch.behaviors.len() == s.item_fields().len()
            && batch.trigger.len() == s.item_fields().len()
            && batch.target.len() == s.item_fields().len()
            && batch.context.len() == s.context_fields().len();
        if ok {
            Ok(())
        } else {
            Err(Error::contract(
                "batch was not encoded with this model's schema",
            ))
        }
    }

    /// Full forward pass on `bound`, which must come from binding `self.params` (or a
    /// same-shaped copy) on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
    ) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let e = lookup_embeddings(tape, bound, &self.tables, batch)?;
        let mask = &batch.mask;
        let mut diag = Diagnostics::default();

        let intent = match &self.uin {
            Some(uin) => {
                let out = uin_forward(tape, bound, uin, e.user, e.behaviors, e.trigger, mask)?;
                diag.intent = Some(out.weights);
                Some(out)
            }
            None => None,
        };

        let hard = match &self.hsm {
            Some(hsm) => {
                let out = hsm_forward(tape, bound, hsm, batch, e.behaviors, e.user)?;
                diag.hard = out.pool_weights.clone();
                diag.interaction = Some(out.fim_weights);
                Some(out.pooled)
            }
            None => None,
        };

        let mut pooled = Vec::with_capacity(2);
        match &self.pooling {
            Pooling::Soft(ssm) => {
                let u = intent.expect("soft branch variants carry an intent network");
                let gate = if self.variant == ModelVariant::DihnScalar {
                    u.p
                } else {
                    u.vt
                };
                let fused = fem_fuse(tape, gate, e.trigger, e.target)?;
                let out = ssm_forward(tape, bound, ssm, e.behaviors, fused, mask)?;
                diag.sequence.push(out.weights);
                pooled.push(out.pooled);
            }
            Pooling::Mean => pooled.push(masked_mean(tape, e.behaviors, batch)?),
            Pooling::Attention { din, query } => {
                let q = match query {
                    Query::Target => e.target,
                    Query::Trigger => e.trigger,
                };
                let out = din.forward(tape, bound, q, e.behaviors, mask)?;
                diag.sequence.push(out.weights);
                pooled.push(out.pooled);
            }
            Pooling::ConcatQuery { proj, din } => {
                let both = tape.concat(&[e.trigger, e.target], 1)?;
                let q = proj.forward(tape, bound, both)?;
                let out = din.forward(tape, bound, q, e.behaviors, mask)?;
                diag.sequence.push(out.weights);
                pooled.push(out.pooled);
            }
            Pooling::TwoTower { trigger, target } => {
                for (din, q) in [(trigger, e.trigger), (target, e.target)] {
                    let out = din.forward(tape, bound, q, e.behaviors, mask)?;
                    diag.sequence.push(out.weights);
                    pooled.push(out.pooled);
                }
            }
        }

        let mut parts = pooled;
        parts.extend(hard);
        parts.push(e.user);
        if self.variant.uses_trigger() {
            parts.push(e.trigger);
        }
        parts.push(e.target);
        parts.extend(e.context);
        let x = tape.concat(&parts, 1)?;
        let logit = self.head.forward(tape, bound, x)?;
        let p = tape.sigmoid(logit);
        Ok(ForwardOutput {
            p_target: clip_prob(tape, p),
            p_trigger: intent.map(|u| u.p),
            vt: intent.map(|u| u.vt),
            diagnostics: diag,
        })
    }

    /// Forward pass plus the weighted joint loss.
    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        alpha: f64,
        beta: f64,
    ) -> Result<(ForwardOutput, Var)> {
        let out = self.forward(tape, bound, batch)?;
        let loss = joint_loss(
            tape,
            out.p_target,
            &batch.labels,
            out.p_trigger,
            &batch.trigger_labels,
            alpha,
            beta,
        )?;
        Ok((out, loss))
    }

    pub fn predict(&self, batch: &Batch) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let out = self.forward(&mut tape, &bound, batch)?;
        Ok(Prediction {
            p_target: tape.value(out.p_target).data().to_vec(),
            p_trigger: match out.p_trigger {
                Some(p) => tape.value(p).data().to_vec(),
                None => vec![0.5; batch.size],
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}
