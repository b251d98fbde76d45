//! Browser demo. A small synthetic world, one DIHN model trained in the page, and
//! three operations: fusing trigger and target embeddings under a gate, inspecting
//! the attention of one impression, and the ground-truth click probability as the
//! intent share λ varies.
//!
//! The plain methods on [`Demo`] and [`fuse`] are ordinary Rust; the `js_*` wrappers
//! are what the page calls.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use trigger_rec::data::{generate_synthetic, split_random, GeneratorConfig, GroundTruthOracle};
use trigger_rec::features::{
    lookup_embeddings, pad_and_mask, EncodedSample, FeatureSchema, RawSample,
};
use trigger_rec::model::{build_variant, fem_fuse, Model, ModelHyper, ModelVariant};
use trigger_rec::tensor::{Tape, Tensor};
use trigger_rec::train::{evaluate, train, TrainConfig};
use trigger_rec::{Error, Result};

const ATTRIBUTES: [&str; 4] = ["item", "category", "destination", "tag"];

/// `gate * trigger + (1 - gate) * target`, computed by the model's fusion op.
pub fn fuse(gate: f64, trigger: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if trigger.len() != target.len() || trigger.is_empty() {
        return Err(Error::Contract(
            "trigger and target must have the same non-zero length".into(),
        ));
    }
    let d = trigger.len();
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::new(&[1, 1], vec![gate])?);
    let t = tape.constant(Tensor::new(&[1, d], trigger.to_vec())?);
    let i = tape.constant(Tensor::new(&[1, d], target.to_vec())?);
    let out = fem_fuse(&mut tape, g, t, i)?;
    Ok(tape.value(out).data().to_vec())
}

#[derive(Clone, Debug, Serialize)]
pub struct Item {
    pub item: u64,
    pub category: u64,
    pub destination: u64,
    pub tag: u64,
}

impl Item {
    fn from_attrs(a: &[u64]) -> Self {
        Self {
            item: a[0],
            category: a[1],
            destination: a[2],
            tag: a[3],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HardWeights {
    pub attribute: String,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Inspection {
    pub index: usize,
    pub user: u64,
    pub history: Vec<Item>,
    pub trigger: Item,
    pub target: Item,
    pub clicked: u8,
    pub trigger_clicked: u8,
    pub p_click: f64,
    pub p_intent: f64,
    pub oracle_click: f64,
    pub oracle_intent: f64,
    /// Mean of the fusion gate over embedding dimensions.
    pub gate_mean: f64,
    /// Soft attention over the valid history, oldest first.
    pub soft_weights: Vec<f64>,
    pub hard_weights: Vec<HardWeights>,
    pub trigger_embedding: Vec<f64>,
    pub target_embedding: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaCurve {
    pub lambda: Vec<f64>,
    /// Marginal over intent.
    pub click: Vec<f64>,
    pub click_with_intent: Vec<f64>,
    pub click_without_intent: Vec<f64>,
    pub intent_probability: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epochs_total: usize,
    pub train_loss: f64,
    pub test_auc: f64,
    pub oracle_auc: f64,
}

#[wasm_bindgen]
pub struct Demo {
    schema: FeatureSchema,
    oracle: GroundTruthOracle,
    train: Vec<EncodedSample>,
    test_raw: Vec<RawSample>,
    test: Vec<EncodedSample>,
    model: Model,
    epochs: usize,
}

fn encode_all(samples: &[RawSample], schema: &FeatureSchema) -> Result<Vec<EncodedSample>> {
    samples.iter().map(|s| s.encode(schema)).collect()
}

impl Demo {
    pub fn new(seed: u64, lambda: f64) -> Result<Self> {
        let cfg = GeneratorConfig {
            num_users: 200,
            num_items: 150,
            num_impressions: 3000,
            lambda,
            seed,
            ..GeneratorConfig::default()
        };
        let schema = cfg.schema()?;
        let (samples, oracle) = generate_synthetic(&cfg)?;
        let splits = split_random(samples, 2500, 0, seed)?;
        let model = build_variant(ModelVariant::Dihn, &schema, &ModelHyper::default(), seed)?;
        Ok(Self {
            train: encode_all(&splits.train, &schema)?,
            test: encode_all(&splits.test, &schema)?,
            test_raw: splits.test,
            schema,
            oracle,
            model,
            epochs: 0,
        })
    }

    /// Continues training for `epochs` more passes and scores the held-out impressions.
    pub fn fit(&mut self, epochs: usize) -> Result<TrainSummary> {
        let cfg = TrainConfig {
            epochs,
            lr: 0.003,
            seed: self.epochs as u64,
            ..TrainConfig::default()
        };
        let report = train(&mut self.model, &self.train, None, &cfg)?;
        self.epochs += epochs;
        let eval = evaluate(&self.model, &self.test, 256)?;
        let scores = self
            .test_raw
            .iter()
            .map(|s| self.oracle.score(s))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u8> = self.test_raw.iter().map(|s| s.label).collect();
        Ok(TrainSummary {
            epochs_total: self.epochs,
            train_loss: report.history.last().map_or(f64::NAN, |r| r.train_loss),
            test_auc: eval.auc,
            oracle_auc: trigger_rec::train::auc(&scores, &labels)?,
        })
    }

    pub fn len(&self) -> usize {
        self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test.is_empty()
    }

    fn sample(&self, index: usize) -> Result<(&RawSample, &EncodedSample)> {
        match (self.test_raw.get(index), self.test.get(index)) {
            (Some(r), Some(e)) => Ok((r, e)),
            _ => Err(Error::Index {
                what: "held-out impression".into(),
                index,
                size: self.test.len(),
            }),
        }
    }

    pub fn inspect(&self, index: usize) -> Result<Inspection> {
        let (raw, enc) = self.sample(index)?;
        let batch = pad_and_mask(std::slice::from_ref(enc), &self.schema)?;
        let mut tape = Tape::new();
        let bound = tape.bind(&self.model.params);
        let emb = lookup_embeddings(&mut tape, &bound, &self.model.tables, &batch)?;
        let out = self.model.forward(&mut tape, &bound, &batch)?;
        let n = batch.lengths[0];
        let row = |v| tape.value(v).data()[..n].to_vec();
        let soft_weights = out
            .diagnostics
            .sequence
            .first()
            .map_or_else(Vec::new, |&w| row(w));
        let hard_weights = match &self.model.hsm {
            Some(hsm) => hsm
                .fields
                .iter()
                .zip(&out.diagnostics.hard)
                .map(|(&f, &w)| HardWeights {
                    attribute: ATTRIBUTES.get(f).unwrap_or(&"?").to_string(),
                    weights: row(w),
                })
                .collect(),
            None => Vec::new(),
        };
        let gate = out
            .vt
            .map(|v| tape.value(v).data().to_vec())
            .unwrap_or_default();
        let history: Vec<u64> = raw.behaviors.iter().map(|b| b.attrs[0]).collect();
        Ok(Inspection {
            index,
            user: raw.user[0],
            history: raw
                .behaviors
                .iter()
                .map(|b| Item::from_attrs(&b.attrs))
                .collect(),
            trigger: Item::from_attrs(&raw.trigger),
            target: Item::from_attrs(&raw.target),
            clicked: raw.label,
            trigger_clicked: raw.trigger_label,
            p_click: tape.value(out.p_target).data()[0],
            p_intent: out.p_trigger.map_or(0.5, |p| tape.value(p).data()[0]),
            oracle_click: self.oracle.click_probability(
                raw.user[0],
                raw.trigger[0],
                raw.target[0],
                &history,
            )?,
            oracle_intent: self
                .oracle
                .intent_probability(raw.user[0], raw.trigger[0])?,
            gate_mean: if gate.is_empty() {
                f64::NAN
            } else {
                gate.iter().sum::<f64>() / gate.len() as f64
            },
            soft_weights,
            hard_weights,
            trigger_embedding: tape.value(emb.trigger).data().to_vec(),
            target_embedding: tape.value(emb.target).data().to_vec(),
        })
    }

    /// Ground-truth click probability of one impression at `points` evenly spaced λ in `[0, 1]`.
    pub fn lambda_curve(&self, index: usize, points: usize) -> Result<LambdaCurve> {
        if points < 2 {
            return Err(Error::Contract("a curve needs at least two points".into()));
        }
        let (raw, _) = self.sample(index)?;
        let history: Vec<u64> = raw.behaviors.iter().map(|b| b.attrs[0]).collect();
        let (u, t, i) = (raw.user[0], raw.trigger[0], raw.target[0]);
        let mut oracle = self.oracle.clone();
        let mut curve = LambdaCurve {
            lambda: Vec::with_capacity(points),
            click: Vec::with_capacity(points),
            click_with_intent: Vec::with_capacity(points),
            click_without_intent: Vec::with_capacity(points),
            intent_probability: oracle.intent_probability(u, t)?,
        };
        for k in 0..points {
            oracle.lambda = k as f64 / (points - 1) as f64;
            curve.lambda.push(oracle.lambda);
            curve
                .click
                .push(oracle.click_probability(u, t, i, &history)?);
            curve
                .click_with_intent
                .push(oracle.click_given_intent(u, t, i, &history, true)?);
            curve
                .click_without_intent
                .push(oracle.click_given_intent(u, t, i, &history, false)?);
        }
        Ok(curve)
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn js_new(seed: u32, lambda: f64) -> std::result::Result<Demo, JsError> {
        Demo::new(seed as u64, lambda).map_err(|e| JsError::new(&e.to_string()))
    }

    #[wasm_bindgen(js_name = fit)]
    pub fn js_fit(&mut self, epochs: usize) -> std::result::Result<String, JsError> {
        js(self.fit(epochs))
    }

    #[wasm_bindgen(js_name = size)]
    pub fn js_len(&self) -> usize {
        self.len()
    }

    #[wasm_bindgen(js_name = inspect)]
    pub fn js_inspect(&self, index: usize) -> std::result::Result<String, JsError> {
        js(self.inspect(index))
    }

    #[wasm_bindgen(js_name = lambdaCurve)]
    pub fn js_lambda_curve(
        &self,
        index: usize,
        points: usize,
    ) -> std::result::Result<String, JsError> {
        js(self.lambda_curve(index, points))
    }
}

#[wasm_bindgen(js_name = fuse)]
pub fn js_fuse(
    gate: f64,
    trigger: Vec<f64>,
    target: Vec<f64>,
) -> std::result::Result<Vec<f64>, JsError> {
    fuse(gate, &trigger, &target).map_err(|e| JsError::new(&e.to_string()))
}
