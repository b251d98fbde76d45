//! Adam with stepwise exponential decay, the training loop, exact AUC and the
//! ablation grid.

mod ablation;
mod adam;
mod metrics;

pub use ablation::{
    ablation_threads, run_ablation, AblationData, AblationReport, AblationRow, THREADS_ENV,
};
pub use adam::Adam;
pub use metrics::{auc, log_loss};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{pad_and_mask, EncodedSample};
use crate::model::{Model, PROB_EPS};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_rate: f64,
    /// Steps between decays; `None` means one epoch.
    pub decay_steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the trigger-click loss.
    pub alpha: f64,
    /// Weight of the target-click loss.
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay_rate: 0.9,
            decay_steps: None,
            epochs: 3,
            batch_size: 128,
            alpha: 1.0,
            beta: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config("decay_rate must lie in (0, 1]".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.batch_size == 0 || self.decay_steps == Some(0) {
            return Err(Error::Config(
                "batch_size and decay_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// `lr * decay_rate^(step / interval)`, integer division.
pub fn lr_schedule(step: usize, lr: f64, decay_rate: f64, interval: usize) -> f64 {
    lr * decay_rate.powi((step / interval.max(1)) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    /// Per-epoch records: `variant, seed, epoch, train_loss, val_auc`.
    pub fn history_tsv(&self, variant: &str, seed: u64) -> String {
        let mut out = String::from("variant\tseed\tepoch\ttrain_loss\tval_auc\n");
        for rec in &self.history {
            out.push_str(&ablation::history_line(variant, seed, rec));
        }
        out
    }
}

/// Encodes, shuffles with `cfg.seed` each epoch, and minimizes the joint loss.
pub fn train(
    model: &mut Model,
    data: &[EncodedSample],
    val: Option<&[EncodedSample]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let interval = cfg
        .decay_steps
        .unwrap_or_else(|| cfg.steps_per_epoch(data.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<EncodedSample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let batch = pad_and_mask(&samples, &model.schema)?;
            let mut tape = Tape::new();
            let bound = tape.bind(&model.params);
            let (_, loss) = model.loss(&mut tape, &bound, &batch, cfg.alpha, cfg.beta)?;
            total += tape.value(loss).item()? * chunk.len() as f64;
            let grads = tape.backward(loss)?.for_params(&bound, &model.params);
            adam.update(
                &mut model.params,
                &grads,
                lr_schedule(step, cfg.lr, cfg.decay_rate, interval),
            )?;
            step += 1;
        }
        let val_auc = match val {
            Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.batch_size)?.auc),
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: total / data.len() as f64,
            val_auc,
        });
    }
    Ok(TrainReport {
        steps: step,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub auc: f64,
    pub log_loss: f64,
    /// AUC of the trigger-click head against `y_t`, when the model has one.
    pub trigger_auc: Option<f64>,
}

/// Target-click probabilities for every sample, in order.
pub fn predict_all(
    model: &Model,
    data: &[EncodedSample],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::with_capacity(data.len());
    let mut p_t = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let pred = model.predict(&pad_and_mask(chunk, &model.schema)?)?;
        p.extend(pred.p_target);
        p_t.extend(pred.p_trigger);
    }
    Ok((p, p_t))
}

pub fn evaluate(model: &Model, data: &[EncodedSample], batch_size: usize) -> Result<EvalReport> {
    let (p, p_t) = predict_all(model, data, batch_size)?;
    let y: Vec<u8> = data.iter().map(|s| s.label).collect();
    let y_t: Vec<u8> = data.iter().map(|s| s.trigger_label).collect();
    let trigger_auc = if model.variant.has_intent() {
        auc(&p_t, &y_t).ok()
    } else {
        None
    };
    Ok(EvalReport {
        n: data.len(),
        auc: auc(&p, &y)?,
        log_loss: log_loss(&p, &y, PROB_EPS),
        trigger_auc,
    })
}

#[cfg(test)]
mod tests;
