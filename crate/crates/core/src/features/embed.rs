use rand::Rng;

use super::sample::EncodedSample;
use super::schema::{FeatureSchema, FieldSpec};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

/// Learnable ID→vector tables. Behaviors, trigger and target share the item tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub user: Vec<ParamId>,
    pub item: Vec<ParamId>,
    pub context: Vec<ParamId>,
}

fn init_table(field: &FieldSpec, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (field.dim as f64).sqrt();
    let mut data: Vec<f64> = (0..field.vocab_size * field.dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    // OOV row starts at zero
    data[..field.dim].iter_mut().for_each(|x| *x = 0.0);
    Tensor::new(&[field.vocab_size, field.dim], data).expect("schema dims are positive")
}

impl EmbeddingTables {
    pub fn init(schema: &FeatureSchema, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let mut register = |prefix: &str, fields: &[FieldSpec]| -> Vec<ParamId> {
            fields
                .iter()
                .map(|f| params.add(format!("emb.{prefix}.{}", f.name), init_table(f, rng)))
                .collect()
        };
        let user = register("user", schema.user_fields());
        let item = register("item", schema.item_fields());
        let context = register("context", schema.context_fields());
        Self {
            user,
            item,
            context,
        }
    }
}

/// Stacked samples with behaviors padded to `max_len`.
///
/// ID vectors are stored field-major: `user[f][b]`, `behaviors[f][b * max_len + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    pub user: Vec<Vec<usize>>,
    pub behaviors: Vec<Vec<usize>>,
    /// `mask[b * max_len + t]` is true iff `t < lengths[b]`.
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub trigger: Vec<Vec<usize>>,
    pub target: Vec<Vec<usize>>,
    pub context: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
    pub trigger_labels: Vec<f64>,
}

fn field_major(rows: impl Iterator<Item = Vec<usize>> + Clone, fields: usize) -> Vec<Vec<usize>> {
    (0..fields)
        .map(|f| rows.clone().map(|r| r[f]).collect())
        .collect()
}

/// Stacks samples and builds the behavior mask. Padded slots hold the OOV index.
pub fn pad_and_mask(samples: &[EncodedSample], schema: &FeatureSchema) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::contract("cannot batch an empty sample list"));
    }
    let max_len = schema.max_behaviors();
    let n_item = schema.item_fields().len();
    let size = samples.len();
    let mut behaviors = vec![vec![0usize; size * max_len]; n_item];
    let mut mask = vec![false; size * max_len];
    let mut lengths = Vec::with_capacity(size);
    for (b, s) in samples.iter().enumerate() {
        if s.valid_len() > max_len {
            return Err(Error::contract(format!(
                "sample {b} has {} behaviors, max is {max_len}",
                s.valid_len()
            )));
        }
        lengths.push(s.valid_len());
        for (t, row) in s.behaviors.iter().enumerate() {
            mask[b * max_len + t] = true;
            for (f, &id) in row.iter().enumerate() {
                behaviors[f][b * max_len + t] = id;
            }
        }
    }
    let it = |sel: fn(&EncodedSample) -> &Vec<usize>| samples.iter().map(move |s| sel(s).clone());
    Ok(Batch {
        size,
        max_len,
        user: field_major(it(|s| &s.user), schema.user_fields().len()),
        behaviors,
        mask,
        lengths,
        trigger: field_major(it(|s| &s.trigger), n_item),
        target: field_major(it(|s| &s.target), n_item),
        context: field_major(it(|s| &s.context), schema.context_fields().len()),
        labels: samples.iter().map(|s| s.label as f64).collect(),
        trigger_labels: samples.iter().map(|s| s.trigger_label as f64).collect(),
    })
}

impl Batch {
    /// Reconstructs sample `b`.
    pub fn sample(&self, b: usize) -> EncodedSample {
        let col = |v: &Vec<Vec<usize>>| v.iter().map(|f| f[b]).collect();
        EncodedSample {
            user: col(&self.user),
            behaviors: (0..self.lengths[b])
                .map(|t| {
                    self.behaviors
                        .iter()
                        .map(|f| f[b * self.max_len + t])
                        .collect()
                })
                .collect(),
            trigger: col(&self.trigger),
            target: col(&self.target),
            context: col(&self.context),
            label: self.labels[b] as u8,
            trigger_label: self.trigger_labels[b] as u8,
        }
    }

    /// Item-field IDs of the valid behaviors; padded slots are `None`.
    pub fn behavior_rows(&self, field: usize) -> Vec<Option<usize>> {
        self.behaviors[field]
            .iter()
            .zip(&self.mask)
            .map(|(&id, &m)| m.then_some(id))
            .collect()
    }
}

/// Per-category dense embeddings for one batch.
#[derive(Clone, Copy, Debug)]
pub struct CategoryEmbeddings {
    /// `[B, D_u]`
    pub user: Var,
    /// `[B, T, D]`, padded rows exactly zero
    pub behaviors: Var,
    /// `[B, D]`
    pub trigger: Var,
    /// `[B, D]`
    pub target: Var,
    /// `[B, D_c]`, absent when the schema has no context fields
    pub context: Option<Var>,
}

fn lookup_category(
    tape: &mut Tape,
    bound: &BoundParams,
    tables: &[ParamId],
    ids: &[Vec<Option<usize>>],
) -> Result<Option<Var>> {
    let parts = tables
        .iter()
        .zip(ids)
        .map(|(&t, rows)| tape.gather_rows(bound.get(t), rows))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(None);
    }
    if parts.len() == 1 {
        return Ok(Some(parts[0]));
    }
    tape.concat(&parts, 1).map(Some)
}

fn some_ids(v: &[Vec<usize>]) -> Vec<Vec<Option<usize>>> {
    v.iter()
        .map(|f| f.iter().map(|&i| Some(i)).collect())
        .collect()
}

/// Looks up and concatenates field embeddings for every category.
pub fn lookup_embeddings(
    tape: &mut Tape,
    bound: &BoundParams,
    tables: &EmbeddingTables,
    batch: &Batch,
) -> Result<CategoryEmbeddings> {
    let missing = || Error::contract("category without fields");
    let user =
        lookup_category(tape, bound, &tables.user, &some_ids(&batch.user))?.ok_or_else(missing)?;
    let trigger = lookup_category(tape, bound, &tables.item, &some_ids(&batch.trigger))?
        .ok_or_else(missing)?;
    let target = lookup_category(tape, bound, &tables.item, &some_ids(&batch.target))?
        .ok_or_else(missing)?;
    let behavior_ids: Vec<Vec<Option<usize>>> = (0..tables.item.len())
        .map(|f| batch.behavior_rows(f))
        .collect();
    let flat = lookup_category(tape, bound, &tables.item, &behavior_ids)?.ok_or_else(missing)?;
    let d = tape.shape(flat)[1];
    let behaviors = tape.reshape(flat, &[batch.size, batch.max_len, d])?;
    let context = lookup_category(tape, bound, &tables.context, &some_ids(&batch.context))?;
    Ok(CategoryEmbeddings {
        user,
        behaviors,
        trigger,
        target,
        context,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::{RawBehavior, RawSample, SchemaConfig};

    fn setup() -> (FeatureSchema, ParamSet, EmbeddingTables) {
        let mut cfg = SchemaConfig::desk_scale();
        cfg.max_behaviors = 5;
        let schema = FeatureSchema::build(cfg).unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tables = EmbeddingTables::init(&schema, &mut params, &mut rng);
        (schema, params, tables)
    }

    fn encoded(schema: &FeatureSchema, n: usize, item_base: u64) -> EncodedSample {
        RawSample {
            user: vec![3, 1],
            behaviors: (0..n)
                .map(|i| RawBehavior {
                    attrs: vec![item_base + i as u64, 2, 3, 4],
                    timestamp: i as i64,
                })
                .collect(),
            trigger: vec![9, 2, 3, 4],
            target: vec![10, 5, 3, 1],
            context: vec![7],
            label: 1,
            trigger_label: 1,
        }
        .encode(schema)
        .unwrap()
    }

    #[test]
    fn oov_rows_start_at_zero() {
        let (_, params, tables) = setup();
        for &t in tables
            .user
            .iter()
            .chain(&tables.item)
            .chain(&tables.context)
        {
            let table = params.get(t);
            assert!(table.row(0).iter().all(|&x| x == 0.0));
            let d = table.shape()[1] as f64;
            assert!(table.data().iter().all(|x| x.abs() <= 1.0 / d.sqrt()));
        }
    }

    #[test]
    fn mask_follows_valid_lengths() {
        let (schema, _, _) = setup();
        let batch =
            pad_and_mask(&[encoded(&schema, 2, 1), encoded(&schema, 5, 1)], &schema).unwrap();
        assert_eq!(
            batch.mask,
            vec![true, true, false, false, false, true, true, true, true, true]
        );
        assert!(pad_and_mask(&[], &schema).is_err());
    }

    #[test]
    fn batching_preserves_samples_and_order() {
        let (schema, _, _) = setup();
        let samples = vec![
            encoded(&schema, 3, 1),
            encoded(&schema, 0, 1),
            encoded(&schema, 5, 40),
        ];
        let batch = pad_and_mask(&samples, &schema).unwrap();
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(&batch.sample(i), s);
        }
        let single = pad_and_mask(&samples[..1], &schema).unwrap();
        assert_eq!(single.sample(0), samples[0]);
    }

    #[test]
    fn oov_everywhere_gives_zero_embeddings() {
        let (schema, params, tables) = setup();
        let mut s = encoded(&schema, 2, 1);
        for v in [&mut s.user, &mut s.trigger, &mut s.target, &mut s.context] {
            v.iter_mut().for_each(|x| *x = 0);
        }
        s.behaviors.iter_mut().flatten().for_each(|x| *x = 0);
        let batch = pad_and_mask(&[s], &schema).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let e = lookup_embeddings(&mut tape, &bound, &tables, &batch).unwrap();
        for v in [e.user, e.behaviors, e.trigger, e.target, e.context.unwrap()] {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identical_ids_give_identical_embeddings() {
        let (schema, params, tables) = setup();
        let s = encoded(&schema, 3, 1);
        let batch = pad_and_mask(&[s.clone(), s], &schema).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let e = lookup_embeddings(&mut tape, &bound, &tables, &batch).unwrap();
        for v in [e.user, e.behaviors, e.trigger, e.target] {
            let data = tape.value(v).data();
            let half = data.len() / 2;
            assert_eq!(&data[..half], &data[half..]);
        }
        assert_eq!(tape.shape(e.behaviors), &[2, 5, 16]);
    }

    #[test]
    fn padded_behavior_rows_are_zero() {
        let (schema, params, tables) = setup();
        let batch = pad_and_mask(&[encoded(&schema, 2, 1)], &schema).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let e = lookup_embeddings(&mut tape, &bound, &tables, &batch).unwrap();
        let data = tape.value(e.behaviors).data();
        assert!(data[2 * 16..].iter().all(|&x| x == 0.0));
        assert!(data[..2 * 16].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn trigger_gradient_touches_only_trigger_rows() {
        let (schema, params, tables) = setup();
        let s = encoded(&schema, 2, 100);
        let batch = pad_and_mask(std::slice::from_ref(&s), &schema).unwrap();
        let loss_of = |p: &ParamSet| {
            let mut tape = Tape::new();
            let bound = tape.bind(p);
            let e = lookup_embeddings(&mut tape, &bound, &tables, &batch).unwrap();
            let l = tape.sum_all(e.trigger).unwrap();
            (
                tape.value(l).item().unwrap(),
                tape.backward(l).unwrap().for_params(&bound, p),
            )
        };
        let (_, grads) = loss_of(&params);
        for (f, &t) in tables.item.iter().enumerate() {
            let g = &grads[t.0];
            let dim = schema.item_fields()[f].dim;
            for row in 0..g.shape()[0] {
                let touched = row == s.trigger[f];
                for c in 0..dim {
                    let analytic = g.row(row)[c];
                    // finite differences on this coordinate
                    let mut plus = params.clone();
                    plus.get_mut(t).data_mut()[row * dim + c] += 1e-5;
                    let mut minus = params.clone();
                    minus.get_mut(t).data_mut()[row * dim + c] -= 1e-5;
                    let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / 2e-5;
                    assert!((analytic - numeric).abs() < 1e-8);
                    assert_eq!(analytic, if touched { 1.0 } else { 0.0 });
                }
                if row > 12 {
                    break;
                }
            }
        }
    }

    #[test]
    fn out_of_range_id_is_an_index_error() {
        let (schema, params, tables) = setup();
        let mut batch = pad_and_mask(&[encoded(&schema, 1, 1)], &schema).unwrap();
        batch.trigger[0][0] = 5000;
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        assert!(matches!(
            lookup_embeddings(&mut tape, &bound, &tables, &batch),
            Err(Error::Index { .. })
        ));
    }
}
