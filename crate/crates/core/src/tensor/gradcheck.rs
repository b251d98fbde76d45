//! Central finite-difference check of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Tensors with more coordinates than this are subsampled.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tolerance: 1e-4,
            max_coords_per_param: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates where a non-differentiable point sits within `eps`.
    pub kinks: usize,
    /// Coordinates that only agreed at a coarser step.
    pub restepped: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `forward` against `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `forward` builds the loss on a fresh tape from bound parameters. When a
/// coordinate disagrees, it is first re-probed with a 5-point stencil at steps
/// `10ε`, `100ε` and `1000ε` (an agreeing coarser step counts as `restepped`),
/// then with a central difference at `ε/10`; if the
/// smaller step agrees, or if the analytic value matches exactly one of the two
/// one-sided slopes, the coordinate is counted as a kink instead of an error.
pub fn grad_check<F>(
    forward: F,
    params: &ParamSet,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    if config.eps.is_nan() || config.eps <= 0.0 {
        return Err(Error::contract("grad_check eps must be positive"));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind(p);
        let loss = forward(&mut tape, &bound)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = forward(&mut tape, &bound)?;
    let f0 = tape.value(loss).item()?;
    let analytic = tape.backward(loss)?.for_params(&bound, params);
    drop(tape);

    let again = eval(params)?;
    if again.to_bits() != f0.to_bits() {
        return Err(Error::contract(format!(
            "forward is not deterministic: {f0} vs {again}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    let eps = config.eps;
    let tol = config.tolerance;

    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let coords: Vec<usize> = if n <= config.max_coords_per_param {
            (0..n).collect()
        } else {
            // half drawn from coordinates with a nonzero gradient, half uniform
            let nonzero: Vec<usize> = (0..n).filter(|&i| grad.data()[i] != 0.0).collect();
            let half = config.max_coords_per_param / 2;
            let mut picked: Vec<usize> = nonzero
                .choose_multiple(&mut rng, half.min(nonzero.len()))
                .copied()
                .collect();
            let all: Vec<usize> = (0..n).collect();
            let rest = config.max_coords_per_param - picked.len();
            picked.extend(all.choose_multiple(&mut rng, rest).copied());
            picked.sort_unstable();
            picked.dedup();
            picked
        };

        let mut max_err = 0.0f64;
        let mut kinks = 0;
        let mut restepped = 0;
        for &c in &coords {
            let a = grad.data()[c];
            let probe = |work: &mut ParamSet, h: f64| -> Result<(f64, f64)> {
                let orig = work.tensors()[pi].data()[c];
                work.tensors_mut()[pi].data_mut()[c] = orig + h;
                let fp = eval(work)?;
                work.tensors_mut()[pi].data_mut()[c] = orig - h;
                let fm = eval(work)?;
                work.tensors_mut()[pi].data_mut()[c] = orig;
                Ok((fp, fm))
            };
            let (fp, fm) = probe(&mut work, eps)?;
            let err = relative_error(a, (fp - fm) / (2.0 * eps));
            if err <= tol {
                max_err = max_err.max(err);
                continue;
            }
            // tiny gradients drown in cancellation noise at small steps; the
            // 5-point stencil keeps truncation error O(h^4) at the coarse ones
            let mut coarse_err = f64::INFINITY;
            for h in [eps * 10.0, eps * 100.0, eps * 1000.0] {
                let (hp, hm) = probe(&mut work, h)?;
                let (hp2, hm2) = probe(&mut work, 2.0 * h)?;
                let slope = (8.0 * (hp - hm) - (hp2 - hm2)) / (12.0 * h);
                coarse_err = coarse_err.min(relative_error(a, slope));
            }
            if coarse_err <= tol {
                max_err = max_err.max(coarse_err);
                restepped += 1;
                continue;
            }
            let small = eps / 10.0;
            let (sp, sm) = probe(&mut work, small)?;
            let small_err = relative_error(a, (sp - sm) / (2.0 * small));
            let forward_slope = (sp - f0) / small;
            let backward_slope = (f0 - sm) / small;
            let one_sided_split = relative_error(forward_slope, backward_slope) > tol;
            let matches_one_side =
                relative_error(a, forward_slope) <= tol || relative_error(a, backward_slope) <= tol;
            if small_err <= tol || (one_sided_split && matches_one_side) {
                kinks += 1;
            } else {
                max_err = max_err.max(err);
            }
        }
        report.push(ParamCheck {
            name: params.names()[pi].clone(),
            max_rel_error: max_err,
            coords_checked: coords.len(),
            kinks,
            restepped,
        });
    }

    let max_rel_error = report.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: report,
        max_rel_error,
        tolerance: tol,
        pass: max_rel_error < tol,
    })
}
