use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{EncodedSample, FeatureSchema};
use crate::model::{build_variant, ModelHyper, ModelVariant};

/// Caps the number of concurrent ablation runs.
pub const THREADS_ENV: &str = "TRIGGER_REC_THREADS";

/// Worker count: `TRIGGER_REC_THREADS` if set and positive, else all cores.
pub fn ablation_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// `(variant, seed, epoch record)` for every run.
    pub history: Vec<(ModelVariant, u64, EpochRecord)>,
}

impl AblationReport {
    pub fn row(&self, variant: ModelVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// One line per variant: `label  mean ± std`.
    pub fn to_table(&self, column: &str) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.variant.label().len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!("{:<width$}  {column} (mean ± std)\n", "Model");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:.4} ± {:.5}\n",
                r.variant.label(),
                r.mean,
                r.std
            ));
        }
        out
    }

    /// Tab-separated rows: `variant, n_seeds, mean_auc, std_auc, aucs`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tn_seeds\tmean_auc\tstd_auc\taucs\n");
        for r in &self.rows {
            let aucs: Vec<String> = r.aucs.iter().map(|a| format!("{a:.6}")).collect();
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\n",
                r.variant.name(),
                r.seeds.len(),
                r.mean,
                r.std,
                aucs.join(",")
            ));
        }
        out
    }

    /// Per-epoch records: `variant, seed, epoch, train_loss, val_auc`.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("variant\tseed\tepoch\ttrain_loss\tval_auc\n");
        for (v, seed, rec) in &self.history {
            out.push_str(&history_line(v.name(), *seed, rec));
        }
        out
    }
}

pub(crate) fn history_line(variant: &str, seed: u64, rec: &EpochRecord) -> String {
    let val = rec
        .val_auc
        .map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
    format!(
        "{variant}\t{seed}\t{}\t{:.6}\t{val}\n",
        rec.epoch, rec.train_loss
    )
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Data for one ablation grid.
pub struct AblationData<'a> {
    pub schema: &'a FeatureSchema,
    pub train: &'a [EncodedSample],
    pub val: Option<&'a [EncodedSample]>,
    pub test: &'a [EncodedSample],
}

/// Trains every variant with seeds `base_seed..base_seed + n_seeds` and reports
/// test AUC. Runs go to at most `threads` workers; results do not depend on it.
pub fn run_ablation(
    variants: &[ModelVariant],
    data: &AblationData<'_>,
    hyper: &ModelHyper,
    cfg: &TrainConfig,
    n_seeds: usize,
    threads: usize,
) -> Result<AblationReport> {
    if n_seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| cfg.seed + k).collect();
    let jobs: Vec<(ModelVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(variant, seed): &(ModelVariant, u64)| -> Result<(f64, Vec<EpochRecord>)> {
        let mut model = build_variant(variant, data.schema, hyper, seed)?;
        let cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let report = train(&mut model, data.train, data.val, &cfg)?;
        let eval = evaluate(&model, data.test, cfg.batch_size)?;
        Ok((eval.auc, report.history))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.clamp(1, jobs.len().max(1)))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(f64, Vec<EpochRecord>)> =
        pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let mut history = Vec::new();
    for ((v, s), (_, h)) in jobs.iter().zip(&results) {
        history.extend(h.iter().map(|r| (*v, *s, r.clone())));
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let aucs: Vec<f64> = results[k * n_seeds..(k + 1) * n_seeds]
                .iter()
                .map(|r| r.0)
                .collect();
            let (mean, std) = mean_std(&aucs);
            AblationRow {
                variant,
                seeds: seeds.clone(),
                aucs,
                mean,
                std,
            }
        })
        .collect();
    Ok(AblationReport { rows, history })
}
