//! Synthetic data with a known click process, trigger mining from raw logs,
//! dataset files and splits.

mod generator;
mod io;
mod mining;

pub use generator::{generate_synthetic, GeneratorConfig, GroundTruthOracle};
pub use io::{format_dataset, parse_dataset, read_dataset, write_dataset};
pub use mining::{
    assign_aux_label, mine_triggers, mining_schema, parse_logs, read_logs, MineStats, MinedSample,
    RawLogRecord, DEFAULT_WINDOW_SECS,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::RawSample;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<RawSample>,
    pub val: Vec<RawSample>,
    pub test: Vec<RawSample>,
}

/// Train and validation sizes for fractions of `n`; the test split takes the rest.
pub fn split_sizes(n: usize, train_frac: f64, val_frac: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0
    {
        return Err(Error::Config(
            "split fractions must be in [0, 1] and sum to at most 1".into(),
        ));
    }
    let train = (n as f64 * train_frac).round() as usize;
    let val = ((n as f64 * val_frac).round() as usize).min(n - train);
    Ok((train, val))
}

/// Shuffles impressions with `seed`, then cuts `n_train`, `n_val`, and the rest.
pub fn split_random(
    samples: Vec<RawSample>,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<Splits> {
    if n_train + n_val > samples.len() {
        return Err(Error::Config(format!(
            "cannot take {n_train} + {n_val} from {} samples",
            samples.len()
        )));
    }
    let mut samples = samples;
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok(Splits {
        train: samples,
        val,
        test,
    })
}

/// Earlier impressions train, later ones validate and test.
pub fn split_temporal(mined: Vec<MinedSample>, train_frac: f64, val_frac: f64) -> Result<Splits> {
    let mut mined = mined;
    mined.sort_by_key(|m| (m.timestamp, m.impression));
    let (n_train, n_val) = split_sizes(mined.len(), train_frac, val_frac)?;
    let mut samples: Vec<RawSample> = mined.into_iter().map(|m| m.sample).collect();
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok(Splits {
        train: samples,
        val,
        test,
    })
}
