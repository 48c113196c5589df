//! Matérn-5/2 kernel with per-dimension (ARD) lengthscales.

use serde::{Deserialize, Serialize};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(
        dim: usize,
        lengthscale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Self {
        KernelParams {
            lengthscales: vec![lengthscale; dim],
            signal_variance,
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Scaled distance `r = sqrt(sum(((a_i - b_i) / l_i)^2))`.
    pub fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let z = (x - y) / l;
                z * z
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Covariance between `a` and `b`, excluding observation noise.
    ///
    /// Panics if the lengths of `a`, `b` and the lengthscales disagree.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        assert!(
            a.len() == self.dim() && b.len() == self.dim(),
            "kernel dimension mismatch: {} / {} vs {}",
            a.len(),
            b.len(),
            self.dim()
        );
        matern52(self.signal_variance, self.scaled_distance(a, b))
    }
}

/// `s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`.
pub fn matern52(signal_variance: f64, r: f64) -> f64 {
    let sr = SQRT5 * r;
    signal_variance * (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

/// Derivative of [`matern52`] with respect to `log l_k`, divided by the
/// squared scaled coordinate difference `((a_k - b_k) / l_k)^2`.
pub fn matern52_lengthscale_factor(signal_variance: f64, r: f64) -> f64 {
    let sr = SQRT5 * r;
    signal_variance * (5.0 / 3.0) * (1.0 + sr) * (-sr).exp()
}
