//! Gaussian-process regression on the normalized hyperparameter cube.
//!
//! Matern-5/2 kernel with per-dimension lengthscales, targets standardized
//! to zero mean and unit variance, and kernel hyperparameters chosen by
//! maximizing the log marginal likelihood with a seeded multistart plus
//! log-space pattern search. Cholesky factorization escalates a diagonal
//! jitter (1e-10 up by factors of 10 to 1e-4) when the kernel matrix loses
//! positive definiteness.

use crate::error::{Error, Result};
use crate::hyperopt::sobol::sobol_points;
use crate::seed;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Lower-triangular Cholesky factor stored row-major, dense.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L z = b in place.
fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Solve L^T z = b in place.
fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpHypers {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

/// Matern-5/2 correlation at scaled distance `r`.
fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn kernel(a: &[f64], b: &[f64], h: &GpHypers) -> f64 {
    h.signal_var * matern52(scaled_dist(a, b, &h.lengthscales))
}

/// A fitted GP posterior over standardized targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_std: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hypers: GpHypers,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

struct Factorized {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    log_marginal: f64,
}

fn factorize(x: &[Vec<f64>], y: &[f64], h: &GpHypers) -> Option<Factorized> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], h);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[i * n + i] += h.noise_var + jitter;
        }
        if let Some(chol) = cholesky(&kj, n) {
            let mut alpha = y.to_vec();
            solve_lower(&chol, n, &mut alpha);
            let quad: f64 = alpha.iter().map(|v| v * v).sum();
            let logdet: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
            solve_lower_transpose(&chol, n, &mut alpha);
            let lm = -0.5 * quad - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Some(Factorized {
                chol,
                alpha,
                jitter,
                log_marginal: lm,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-4 {
            return None;
        }
    }
}

/// Bounds of the hyperparameter search, all in natural log.
const LS_BOUNDS: (f64, f64) = (0.03, 3.0);
const SV_BOUNDS: (f64, f64) = (0.01, 10.0);
const NV_BOUNDS: (f64, f64) = (1e-8, 1.0);

fn pack(h: &GpHypers) -> Vec<f64> {
    let mut v: Vec<f64> = h.lengthscales.iter().map(|l| l.ln()).collect();
    v.push(h.signal_var.ln());
    v.push(h.noise_var.ln());
    v
}

fn unpack(v: &[f64], dims: usize) -> GpHypers {
    GpHypers {
        lengthscales: v[..dims]
            .iter()
            .map(|l| l.exp().clamp(LS_BOUNDS.0, LS_BOUNDS.1))
            .collect(),
        signal_var: v[dims].exp().clamp(SV_BOUNDS.0, SV_BOUNDS.1),
        noise_var: v[dims + 1].exp().clamp(NV_BOUNDS.0, NV_BOUNDS.1),
    }
}

/// Fit a GP to (normalized input, objective) observations.
///
/// Requires at least two observations with finite targets; callers filter
/// infinities beforehand.
pub fn gp_fit(x: Vec<Vec<f64>>, y: Vec<f64>, fit_seed: u64) -> Result<GpModel> {
    if x.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "GP fit needs at least 2 finite observations, got {}",
            x.len()
        )));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("GP targets must be finite"));
    }
    let dims = x[0].len();
    if x.iter().any(|p| p.len() != dims) {
        return Err(Error::invalid("GP inputs must share one dimensionality"));
    }

    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y_std: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let objective = |p: &[f64]| -> f64 {
        let h = unpack(p, dims);
        factorize(&x, &y_std, &h).map_or(f64::NEG_INFINITY, |f| f.log_marginal)
    };

    // Multistart: a sensible default plus Sobol points over the log-bounds.
    let mut starts: Vec<Vec<f64>> = vec![pack(&GpHypers {
        lengthscales: vec![0.3; dims],
        signal_var: 1.0,
        noise_var: 1e-4,
    })];
    let cube = sobol_points(
        (dims + 2).min(crate::hyperopt::sobol::MAX_DIMS),
        15,
        seed::derive(fit_seed, "gp-multistart"),
    )?;
    for pt in cube {
        let mut p = Vec::with_capacity(dims + 2);
        for d in 0..dims {
            let u = pt[d % pt.len()];
            p.push(LS_BOUNDS.0.ln() + u * (LS_BOUNDS.1.ln() - LS_BOUNDS.0.ln()));
        }
        let u = pt[dims % pt.len()];
        p.push(SV_BOUNDS.0.ln() + u * (SV_BOUNDS.1.ln() - SV_BOUNDS.0.ln()));
        let u = pt[(dims + 1) % pt.len()];
        p.push(NV_BOUNDS.0.ln() + u * (NV_BOUNDS.1.ln() - NV_BOUNDS.0.ln()));
        starts.push(p);
    }

    let mut scored: Vec<(f64, Vec<f64>)> =
        starts.into_iter().map(|p| (objective(&p), p)).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    scored.truncate(3);

    // Coordinate pattern search in log space from each surviving start.
    let mut best = scored[0].clone();
    for (mut value, mut point) in scored {
        let mut step = 0.8;
        while step > 0.01 {
            let mut improved = false;
            for i in 0..point.len() {
                for dir in [step, -step] {
                    let mut cand = point.clone();
                    cand[i] += dir;
                    let v = objective(&cand);
                    if v > value {
                        value = v;
                        point = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if value > best.0 {
            best = (value, point);
        }
    }

    let hypers = unpack(&best.1, dims);
    let f = factorize(&x, &y_std, &hypers)
        .ok_or_else(|| Error::Numerical("kernel matrix not positive definite".into()))?;
    Ok(GpModel {
        x,
        y_std,
        y_mean,
        y_scale,
        hypers,
        chol: f.chol,
        alpha: f.alpha,
        jitter: f.jitter,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.y_std.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_std.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x[0].len()
    }

    pub fn hypers(&self) -> &GpHypers {
        &self.hypers
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Fitted observation-noise standard deviation on the target scale.
    pub fn noise_std(&self) -> f64 {
        self.hypers.noise_var.sqrt() * self.y_scale
    }

    /// Fitted signal standard deviation on the target scale.
    pub fn signal_std(&self) -> f64 {
        self.hypers.signal_var.sqrt() * self.y_scale
    }

    /// Posterior mean and standard deviation of the latent objective at a
    /// normalized point, on the original target scale.
    pub fn posterior(&self, unit: &[f64]) -> (f64, f64) {
        let n = self.len();
        let mut kstar: Vec<f64> = (0..n)
            .map(|i| kernel(&self.x[i], unit, &self.hypers))
            .collect();
        let mean_std: f64 = kstar
            .iter()
            .zip(self.alpha.iter())
            .map(|(k, a)| k * a)
            .sum();
        solve_lower(&self.chol, n, &mut kstar);
        let reduction: f64 = kstar.iter().map(|v| v * v).sum();
        let var = (self.hypers.signal_var - reduction).max(0.0);
        (
            mean_std * self.y_scale + self.y_mean,
            var.sqrt() * self.y_scale,
        )
    }

    /// Joint latent posterior at the training inputs on the original target
    /// scale: mean vector and a Cholesky factor of the covariance.
    pub fn joint_train_posterior(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel(&self.x[i], &self.x[j], &self.hypers);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        // mean = K alpha (standardized), cov = K - K (K + nv I)^{-1} K.
        let mean: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| k[i * n + j] * self.alpha[j])
                    .sum::<f64>()
                    * self.y_scale
                    + self.y_mean
            })
            .collect();
        let mut cov = k.clone();
        // Column-by-column: w = L^{-1} K[:, j]; cov[:, j] -= W^T W column.
        let mut w = vec![0.0; n * n];
        for j in 0..n {
            let mut col: Vec<f64> = (0..n).map(|i| k[i * n + j]).collect();
            solve_lower(&self.chol, n, &mut col);
            for i in 0..n {
                w[i * n + j] = col[i];
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += w[l * n + i] * w[l * n + j];
                }
                cov[i * n + j] -= acc;
                cov[j * n + i] = cov[i * n + j];
            }
        }
        for v in cov.iter_mut() {
            *v *= self.y_scale * self.y_scale;
        }
        let mut jitter = 0.0;
        loop {
            let mut cj = cov.clone();
            for i in 0..n {
                cj[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&cj, n) {
                return Ok((mean, l));
            }
            jitter = if jitter == 0.0 {
                1e-10 * self.y_scale * self.y_scale
            } else {
                jitter * 10.0
            };
            if jitter > 1e-4 * self.y_scale.max(1.0) * self.y_scale.max(1.0) {
                return Err(Error::Numerical(
                    "joint posterior covariance not factorizable".into(),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_fit() -> GpModel {
        let xs: Vec<Vec<f64>> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&t| vec![t]).collect();
        let ys: Vec<f64> = xs.iter().map(|p| (p[0] - 0.3) * (p[0] - 0.3)).collect();
        gp_fit(xs, ys, 1).unwrap()
    }

    #[test]
    fn noiseless_quadratic_interpolates() {
        let gp = quadratic_fit();
        assert!(
            gp.hypers().noise_var * gp.y_scale * gp.y_scale < 1e-4,
            "fitted noise variance {} too large",
            gp.hypers().noise_var * gp.y_scale * gp.y_scale
        );
        for (p, want) in [(0.0, 0.09), (0.25, 0.0025), (0.5, 0.04), (0.75, 0.2025), (1.0, 0.49)] {
            let (mean, std) = gp.posterior(&[p]);
            assert!(
                (mean - want).abs() < 1e-3,
                "posterior mean {mean} at {p} should be near {want}"
            );
            assert!(std < 2.0 * gp.noise_std() + 1e-3);
        }
    }

    #[test]
    fn variance_shrinks_at_data() {
        let gp = quadratic_fit();
        let (_, at_train) = gp.posterior(&[0.5]);
        let (_, far) = gp.posterior(&[0.5 + 0.5]);
        assert!(at_train <= far);
    }

    #[test]
    fn duplicate_inputs_succeed_via_jitter() {
        let xs = vec![vec![0.4], vec![0.4], vec![0.8]];
        let ys = vec![1.0, 1.0, 2.0];
        let gp = gp_fit(xs, ys, 3).unwrap();
        let (mean, _) = gp.posterior(&[0.4]);
        assert!((mean - 1.0).abs() < 0.2);
    }

    #[test]
    fn prior_reversion_far_from_data() {
        // Wiggly data confined to [0, 0.2] forces a short lengthscale, so a
        // query at 1.0 reverts to the prior.
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.02]).collect();
        let ys: Vec<f64> = xs.iter().map(|p| (40.0 * p[0]).sin()).collect();
        let gp = gp_fit(xs, ys, 5).unwrap();
        let (_, std) = gp.posterior(&[1.0]);
        let rel = (std - gp.signal_std()).abs() / gp.signal_std();
        assert!(rel < 0.05, "far-field std {std} vs signal std {} (rel {rel})", gp.signal_std());
    }

    #[test]
    fn posterior_is_deterministic() {
        let gp = quadratic_fit();
        assert_eq!(gp.posterior(&[0.37]), gp.posterior(&[0.37]));
        let gp2 = quadratic_fit();
        assert_eq!(gp.posterior(&[0.37]), gp2.posterior(&[0.37]));
    }

    #[test]
    fn too_few_observations_is_an_error() {
        assert!(matches!(
            gp_fit(vec![vec![0.1]], vec![1.0], 0),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn joint_posterior_is_consistent_with_marginals() {
        let gp = quadratic_fit();
        let (mean, chol) = gp.joint_train_posterior().unwrap();
        let n = gp.len();
        for i in 0..n {
            let (m, s) = gp.posterior(&gp.train_inputs()[i].clone());
            assert!((mean[i] - m).abs() < 1e-9);
            // Marginal std from the Cholesky row.
            let row_var: f64 = (0..=i).map(|j| chol[i * n + j] * chol[i * n + j]).sum();
            assert!((row_var.sqrt() - s).abs() < 2e-4, "row {i}: {} vs {s}", row_var.sqrt());
        }
    }
}
