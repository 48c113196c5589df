//! Two-sample comparisons: Welch's t-test and Cohen's d.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 observations per sample, got {0} and {1}")]
    InsufficientData(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    /// `None` for an empty sample. A single observation has zero spread.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mean = mean(xs);
        Some(SummaryStats {
            count: xs.len(),
            mean,
            std: if xs.len() > 1 {
                variance(xs, mean).sqrt()
            } else {
                0.0
            },
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Two-sided `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Welch's unequal-variance t-test of `mean(a) - mean(b)`.
///
/// When both samples have zero variance the statistic is 0 (p = 1) for equal
/// means and infinite (p = 0) otherwise, with `df = n_a + n_b - 2`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::InsufficientData(na, nb));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (variance(a, ma) / na as f64, variance(b, mb) / nb as f64);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = (na + nb - 2) as f64;
        return Ok(if ma == mb {
            WelchTest { t: 0.0, df, p: 1.0 }
        } else {
            WelchTest {
                t: (ma - mb).signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1) as f64 + qb * qb / (nb - 1) as f64);
    Ok(WelchTest {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

/// Standardized mean difference `(mean(a) - mean(b)) / pooled_sd`.
/// Zero when both means are equal, even with zero spread.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::InsufficientData(na, nb));
    }
    let (ma, mb) = (mean(a), mean(b));
    if ma == mb {
        return Ok(0.0);
    }
    let pooled = (((na - 1) as f64 * variance(a, ma) + (nb - 1) as f64 * variance(b, mb))
        / (na + nb - 2) as f64)
        .sqrt();
    Ok((ma - mb) / pooled)
}
