//! Single-output Gaussian process regression with a zero-mean prior,
//! Matérn-5/2 ARD kernel and standardized targets.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood
//! with multi-start L-BFGS in a bounded log-parameter space. Bounds are
//! enforced through a logistic reparametrization, so the inner optimizer
//! runs unconstrained.

mod kernel;
mod lbfgs;

pub use kernel::{matern52, KernelParams};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cho_inverse, cho_solve, cholesky, dot, solve_lower};

use kernel::matern52_lengthscale_factor;
use lbfgs::LbfgsOptions;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter ladder (times the signal variance).
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("need at least {needed} training points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("input dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("non-finite training target at row {0}")]
    NonFinite(usize),
    #[error("covariance factorization failed with final jitter {jitter:e}")]
    Factorization { jitter: f64 },
}

/// Box constraints on hyperparameters, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        HyperBounds {
            lengthscale: (1e-3, 1e2),
            signal_variance: (1e-4, 1e2),
            noise_variance: (1e-8, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub bounds: HyperBounds,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            max_iterations: 200,
            bounds: HyperBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetScaling {
    /// Shift and scale targets to zero mean, unit variance.
    Standardize,
    /// Use targets as given.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorPrediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A conditioned Gaussian process. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    params: KernelParams,
    jitter: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    stats: TargetStats,
}

impl GpModel {
    /// Conditions a GP on data with fixed hyperparameters.
    pub fn condition(
        inputs: Vec<Vec<f64>>,
        targets: &[f64],
        params: KernelParams,
        scaling: TargetScaling,
    ) -> Result<Self, GpError> {
        validate(&inputs, targets, params.dim(), 1)?;
        let (scaled, stats) = scale_targets(targets, scaling);
        let n = inputs.len();
        let k = kernel_matrix(&inputs, &params);
        let (chol, jitter) = factor_with_jitter(&k, n, &params)?;
        let mut alpha = scaled.clone();
        cho_solve(&chol, n, &mut alpha);
        Ok(GpModel {
            inputs,
            targets: scaled,
            params,
            jitter,
            chol,
            alpha,
            stats,
        })
    }

    /// Fits hyperparameters by multi-start marginal-likelihood maximization
    /// on standardized targets.
    pub fn fit<R: Rng + ?Sized>(
        inputs: Vec<Vec<f64>>,
        targets: &[f64],
        options: &FitOptions,
        rng: &mut R,
    ) -> Result<Self, GpError> {
        let dim = inputs.first().map_or(0, Vec::len);
        validate(&inputs, targets, dim, 2)?;
        let (scaled, _) = scale_targets(targets, TargetScaling::Standardize);
        let problem = LmlProblem::new(&inputs, &scaled, options.bounds);

        let restarts = options.restarts.max(1);
        let starts: Vec<Vec<f64>> = (0..restarts)
            .map(|i| {
                if i == 0 {
                    problem.encode(&KernelParams::isotropic(dim, 0.5, 1.0, 1e-3))
                } else {
                    let ls = (0..dim).map(|_| log_uniform(rng, 0.05, 5.0)).collect();
                    problem.encode(&KernelParams {
                        lengthscales: ls,
                        signal_variance: log_uniform(rng, 0.1, 10.0),
                        noise_variance: log_uniform(rng, 1e-6, 1e-1),
                    })
                }
            })
            .collect();

        let opts = LbfgsOptions {
            max_iterations: options.max_iterations,
            ..LbfgsOptions::default()
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let result = lbfgs::minimize(|u| problem.negative_lml_and_grad(u), start, opts);
            if let Some((u, v)) = result {
                if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                    best = Some((u, v));
                }
            }
        }
        let params = match best {
            Some((u, _)) => problem.decode(&u),
            None => {
                return Err(GpError::Factorization {
                    jitter: JITTER_MAX * options.bounds.signal_variance.1,
                })
            }
        };
        Self::condition(inputs, targets, params, TargetScaling::Standardize)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn target_stats(&self) -> TargetStats {
        self.stats
    }

    /// Jitter added on top of the noise variance to factor the covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Diagonal term actually used in the factorization: noise plus jitter.
    pub fn effective_noise(&self) -> f64 {
        self.params.noise_variance + self.jitter
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// Latent-function posterior at `x`, in original target units.
    pub fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction, GpError> {
        let (mean, var) = self.predict_scaled(x)?;
        Ok(PosteriorPrediction {
            mean: mean * self.stats.std + self.stats.mean,
            variance: var * self.stats.std * self.stats.std,
        })
    }

    /// Posterior of a noisy observation at `x`.
    pub fn predict_observation(&self, x: &[f64]) -> Result<PosteriorPrediction, GpError> {
        let mut p = self.predict(x)?;
        p.variance += self.params.noise_variance * self.stats.std * self.stats.std;
        Ok(p)
    }

    fn predict_scaled(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        if x.len() != self.dim() {
            return Err(GpError::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let n = self.inputs.len();
        let mut v: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| self.params.eval(xi, x))
            .collect();
        let mean = dot(&v, &self.alpha);
        solve_lower(&self.chol, n, &mut v);
        let var = (self.params.signal_variance - dot(&v, &v)).max(0.0);
        Ok((mean, var))
    }

    /// Log evidence of the (scaled) training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len();
        let log_det_half: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * dot(&self.targets, &self.alpha) - log_det_half - 0.5 * n as f64 * LN_2PI
    }

    /// Inverse lengthscales: larger means more relevant.
    pub fn feature_importance(&self) -> Vec<f64> {
        self.params.lengthscales.iter().map(|l| 1.0 / l).collect()
    }
}

fn validate(
    inputs: &[Vec<f64>],
    targets: &[f64],
    dim: usize,
    min_points: usize,
) -> Result<(), GpError> {
    if inputs.len() < min_points || inputs.len() != targets.len() {
        return Err(GpError::InsufficientData {
            needed: min_points.max(targets.len()),
            got: inputs.len(),
        });
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(GpError::Dimension {
            expected: dim,
            actual: bad.len(),
        });
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(GpError::NonFinite(i));
    }
    Ok(())
}

fn scale_targets(targets: &[f64], scaling: TargetScaling) -> (Vec<f64>, TargetStats) {
    let stats = match scaling {
        TargetScaling::Identity => TargetStats {
            mean: 0.0,
            std: 1.0,
        },
        TargetScaling::Standardize => {
            let n = targets.len() as f64;
            let mean = targets.iter().sum::<f64>() / n;
            let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            TargetStats {
                mean,
                std: if std > 1e-12 { std } else { 1.0 },
            }
        }
    };
    let scaled = targets
        .iter()
        .map(|t| (t - stats.mean) / stats.std)
        .collect();
    (scaled, stats)
}

fn kernel_matrix(inputs: &[Vec<f64>], params: &KernelParams) -> Vec<f64> {
    let n = inputs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = params.eval(&inputs[i], &inputs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Factors `K + (noise + jitter) I`, escalating the jitter tenfold from
/// `1e-8 s2` up to `1e-2 s2`.
fn factor_with_jitter(
    k: &[f64],
    n: usize,
    params: &KernelParams,
) -> Result<(Vec<f64>, f64), GpError> {
    let mut jitter = JITTER_START * params.signal_variance;
    let max = JITTER_MAX * params.signal_variance;
    let mut a = k.to_vec();
    loop {
        for i in 0..n {
            a[i * n + i] = k[i * n + i] + params.noise_variance + jitter;
        }
        if let Some(l) = cholesky(&a, n) {
            return Ok((l, jitter));
        }
        if jitter >= max * (1.0 - 1e-12) {
            return Err(GpError::Factorization { jitter });
        }
        jitter = (jitter * 10.0).min(max);
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Marginal likelihood as a function of reparametrized hyperparameters.
///
/// Coordinate layout: `[u_l(0..d), u_signal, u_noise]`, where each natural
/// log-parameter is `lo + (hi - lo) * sigmoid(u)`.
struct LmlProblem<'a> {
    targets: &'a [f64],
    n: usize,
    dim: usize,
    /// Squared coordinate differences, `[(i * n + j) * dim + k]`.
    sq_diff: Vec<f64>,
    log_bounds: Vec<(f64, f64)>,
}

impl<'a> LmlProblem<'a> {
    fn new(inputs: &[Vec<f64>], targets: &'a [f64], bounds: HyperBounds) -> Self {
        let n = inputs.len();
        let dim = inputs[0].len();
        let mut sq_diff = vec![0.0; n * n * dim];
        for i in 0..n {
            for j in 0..n {
                for k in 0..dim {
                    let d = inputs[i][k] - inputs[j][k];
                    sq_diff[(i * n + j) * dim + k] = d * d;
                }
            }
        }
        let ln = |(lo, hi): (f64, f64)| (lo.ln(), hi.ln());
        let mut log_bounds = vec![ln(bounds.lengthscale); dim];
        log_bounds.push(ln(bounds.signal_variance));
        log_bounds.push(ln(bounds.noise_variance));
        LmlProblem {
            targets,
            n,
            dim,
            sq_diff,
            log_bounds,
        }
    }

    fn log_params(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.log_bounds)
            .map(|(&ui, &(lo, hi))| lo + (hi - lo) * sigmoid(ui))
            .collect()
    }

    fn decode(&self, u: &[f64]) -> KernelParams {
        let t = self.log_params(u);
        KernelParams {
            lengthscales: t[..self.dim].iter().map(|v| v.exp()).collect(),
            signal_variance: t[self.dim].exp(),
            noise_variance: t[self.dim + 1].exp(),
        }
    }

    fn encode(&self, params: &KernelParams) -> Vec<f64> {
        let logs = params
            .lengthscales
            .iter()
            .copied()
            .chain([params.signal_variance, params.noise_variance])
            .map(f64::ln);
        logs.zip(&self.log_bounds)
            .map(|(t, &(lo, hi))| {
                let p = ((t - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }

    fn negative_lml_and_grad(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let params = self.decode(u);
        let (lml, grad_log) =
            lml_and_log_gradient(&params, self.targets, self.n, self.dim, &self.sq_diff).ok()?;
        // chain rule through the logistic map
        let grad: Vec<f64> = grad_log
            .iter()
            .zip(u)
            .zip(&self.log_bounds)
            .map(|((g, &ui), &(lo, hi))| {
                let s = sigmoid(ui);
                -g * (hi - lo) * s * (1.0 - s)
            })
            .collect();
        Some((-lml, grad))
    }
}

/// Log marginal likelihood and its gradient with respect to
/// `[log l_k, log s2, log noise]`.
fn lml_and_log_gradient(
    params: &KernelParams,
    y: &[f64],
    n: usize,
    dim: usize,
    sq_diff: &[f64],
) -> Result<(f64, Vec<f64>), GpError> {
    let inv_l2: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut k = vec![0.0; n * n];
    let mut factor = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let base = (i * n + j) * dim;
            let r2: f64 = (0..dim).map(|d| sq_diff[base + d] * inv_l2[d]).sum();
            let r = r2.sqrt();
            let kv = matern52(params.signal_variance, r);
            let fv = matern52_lengthscale_factor(params.signal_variance, r);
            k[i * n + j] = kv;
            k[j * n + i] = kv;
            factor[i * n + j] = fv;
            factor[j * n + i] = fv;
        }
    }
    let (chol, _) = factor_with_jitter(&k, n, params)?;
    let mut alpha = y.to_vec();
    cho_solve(&chol, n, &mut alpha);
    let log_det_half: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
    let lml = -0.5 * dot(y, &alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // W = alpha alpha^T - K^{-1}; dLML/dtheta = 0.5 * sum(W .* dK/dtheta)
    let mut w = cho_inverse(&chol, n);
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = alpha[i] * alpha[j] - w[i * n + j];
        }
    }
    let mut grad = vec![0.0; dim + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w[i * n + j];
            let base = (i * n + j) * dim;
            let fw = wij * factor[i * n + j];
            for d in 0..dim {
                grad[d] += fw * sq_diff[base + d] * inv_l2[d];
            }
            grad[dim] += wij * k[i * n + j];
        }
        grad[dim + 1] += w[i * n + i] * params.noise_variance;
    }
    grad.iter_mut().for_each(|g| *g *= 0.5);
    Ok((lml, grad))
}
