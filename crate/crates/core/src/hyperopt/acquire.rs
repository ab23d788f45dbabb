//! Noisy-expected-improvement acquisition for a minimized objective.
//!
//! The incumbent is uncertain under observation noise, so improvement is
//! averaged over joint posterior samples of the latent objective at the
//! observed inputs: each draw contributes a closed-form expected
//! improvement of the candidate below that draw's minimum.

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::hyperopt::gp::GpModel;
use crate::hyperopt::sobol::sobol_points;
use crate::hyperopt::space::{HyperPoint, SearchSpace};
use crate::seed;

/// Monte-Carlo sample count used when callers do not specify one.
pub const DEFAULT_MC_SAMPLES: usize = 64;

fn erfc(x: f64) -> f64 {
    // Rational approximation, fractional error below 1.2e-7 everywhere.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Closed-form expected improvement below `incumbent` for a Gaussian
/// candidate. At zero standard deviation this is exactly
/// `max(0, incumbent - mean)`.
pub fn expected_improvement_min(mean: f64, std: f64, incumbent: f64) -> f64 {
    if std <= 0.0 {
        return (incumbent - mean).max(0.0);
    }
    let z = (incumbent - mean) / std;
    ((incumbent - mean) * norm_cdf(z) + std * norm_pdf(z)).max(0.0)
}

/// Joint posterior draws of the latent objective at the observed inputs,
/// reduced to their minima (the noisy incumbents).
#[derive(Debug, Clone)]
pub struct IncumbentDraws {
    pub fmins: Vec<f64>,
}

impl IncumbentDraws {
    pub fn new(gp: &GpModel, mc_samples: usize, seed_value: u64) -> Result<Self> {
        if mc_samples < 1 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        let (mean, chol) = gp.joint_train_posterior()?;
        let n = mean.len();
        let mut rng = seed::rng(seed::derive(seed_value, "nei-draws"));
        let normal = rand_distr::StandardNormal;
        let mut z = vec![0.0f64; n];
        let mut fmins = Vec::with_capacity(mc_samples);
        for _ in 0..mc_samples {
            for zi in z.iter_mut() {
                *zi = normal.sample(&mut rng);
            }
            let mut fmin = f64::INFINITY;
            for i in 0..n {
                let mut v = mean[i];
                for (j, zj) in z.iter().enumerate().take(i + 1) {
                    v += chol[i * n + j] * zj;
                }
                fmin = fmin.min(v);
            }
            fmins.push(fmin);
        }
        Ok(IncumbentDraws { fmins })
    }

    pub fn average(&self) -> f64 {
        self.fmins.iter().sum::<f64>() / self.fmins.len() as f64
    }
}

/// NEI of a candidate against precomputed incumbent draws.
pub fn nei_with_incumbents(gp: &GpModel, unit: &[f64], draws: &IncumbentDraws) -> f64 {
    let (mean, std) = gp.posterior(unit);
    draws
        .fmins
        .iter()
        .map(|&f| expected_improvement_min(mean, std, f))
        .sum::<f64>()
        / draws.fmins.len() as f64
}

/// Monte-Carlo noisy expected improvement of one candidate.
pub fn nei_acquisition(
    gp: &GpModel,
    unit: &[f64],
    mc_samples: usize,
    seed_value: u64,
) -> Result<f64> {
    let draws = IncumbentDraws::new(gp, mc_samples, seed_value)?;
    Ok(nei_with_incumbents(gp, unit, &draws))
}

/// Propose the next trial point: evaluate NEI on fresh Sobol candidates and
/// return the argmax (lowest index on ties).
pub fn propose_next(
    gp: &GpModel,
    space: &SearchSpace,
    n_candidates: usize,
    mc_samples: usize,
    seed_value: u64,
) -> Result<HyperPoint> {
    if n_candidates < 1 {
        return Err(Error::invalid("need at least one candidate"));
    }
    let draws = IncumbentDraws::new(gp, mc_samples, seed_value)?;
    let candidates = sobol_points(
        space.free_dims(),
        n_candidates,
        seed::derive(seed_value, "nei-candidates"),
    )?;
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, cand) in candidates.iter().enumerate() {
        let v = nei_with_incumbents(gp, cand, &draws);
        if v > best_val {
            best_val = v;
            best_idx = i;
        }
    }
    space.decode(&candidates[best_idx])
}
