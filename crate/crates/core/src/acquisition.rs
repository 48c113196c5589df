//! Expected hypervolume improvement for two maximized objectives and a
//! single candidate, plus its multi-start maximizer.
//!
//! The region that a new point can add is the part of the box above the
//! reference point not dominated by the current front. Sorting the front by
//! accuracy splits that region into vertical strips
//! `(a_i, a_{i+1}] x (h_i, inf)`; a point `y` gains
//! `(min(y1, a_{i+1}) - a_i)^+ * (y2 - h_i)^+` in strip `i`. With independent
//! Gaussian marginals each strip's expectation factorizes into two
//! one-dimensional integrals with closed forms in the normal pdf and cdf.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::configuration::ContinuousConfiguration;
use crate::gp::{GpError, GpModel};
use crate::pareto::{hypervolume, non_dominated_set, ObjectiveVector, ParetoFront, ReferencePoint};

/// Floor applied before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("surrogates were trained on different inputs")]
    MismatchedSurrogates,
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// One Gaussian marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean: f64,
    pub std: f64,
}

impl Marginal {
    pub fn new(mean: f64, std: f64) -> Self {
        Marginal {
            mean,
            std: std.max(0.0),
        }
    }

    /// `E[(Y - c)^+]`.
    fn expected_excess(&self, c: f64) -> f64 {
        if c == f64::INFINITY {
            return 0.0;
        }
        if self.std <= 0.0 {
            return (self.mean - c).max(0.0);
        }
        let z = (self.mean - c) / self.std;
        self.std * (normal_pdf(z) + z * normal_cdf(z))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.std * z
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Front clipped to the reference point, made strictly non-dominated, in
/// ascending accuracy.
fn clipped_front(front: &[ObjectiveVector], r: &ReferencePoint) -> Vec<ObjectiveVector> {
    let clipped: Vec<ObjectiveVector> = front
        .iter()
        .map(|p| ObjectiveVector::new(p.accuracy.max(r.accuracy), p.neg_cost.max(r.neg_cost)))
        .collect();
    non_dominated_set(&clipped).points
}

/// Exact EHVI for independent Gaussian objectives.
pub fn ehvi_gaussian(
    front: &[ObjectiveVector],
    r: &ReferencePoint,
    accuracy: Marginal,
    neg_cost: Marginal,
) -> f64 {
    let pts = clipped_front(front, r);
    let k = pts.len();
    let mut total = 0.0;
    for i in 0..=k {
        let lower = if i == 0 {
            r.accuracy
        } else {
            pts[i - 1].accuracy
        };
        let upper = if i == k {
            f64::INFINITY
        } else {
            pts[i].accuracy
        };
        let floor = if i == k { r.neg_cost } else { pts[i].neg_cost };
        if upper <= lower {
            continue;
        }
        let width = accuracy.expected_excess(lower) - accuracy.expected_excess(upper);
        let height = neg_cost.expected_excess(floor);
        total += width.max(0.0) * height;
    }
    total.max(0.0)
}

/// Monte Carlo estimate of the same quantity, computed through the generic
/// hypervolume routine. Returns `(estimate, standard_error)`.
pub fn mc_ehvi_gaussian<R: Rng + ?Sized>(
    front: &[ObjectiveVector],
    r: &ReferencePoint,
    accuracy: Marginal,
    neg_cost: Marginal,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let base = hypervolume(front, r);
    let mut pts = front.to_vec();
    pts.push(ObjectiveVector::new(0.0, 0.0));
    let last = pts.len() - 1;
    // Welford running moments
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 1..=samples {
        pts[last] = ObjectiveVector::new(accuracy.sample(rng), neg_cost.sample(rng));
        let gain = (hypervolume(&pts, r) - base).max(0.0);
        let delta = gain - mean;
        mean += delta / k as f64;
        m2 += delta * (gain - mean);
    }
    let n = samples as f64;
    let var = if samples > 1 { m2 / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

pub fn log_floor(value: f64) -> f64 {
    value.max(LOG_FLOOR).ln()
}

/// Surrogates, incumbent front and reference point for one iteration.
#[derive(Debug, Clone)]
pub struct AcquisitionContext {
    pub gp_accuracy: GpModel,
    pub gp_negcost: GpModel,
    pub front: ParetoFront,
    pub reference: ReferencePoint,
}

impl AcquisitionContext {
    pub fn new(
        gp_accuracy: GpModel,
        gp_negcost: GpModel,
        front: ParetoFront,
        reference: ReferencePoint,
    ) -> Result<Self, AcquisitionError> {
        if gp_accuracy.inputs() != gp_negcost.inputs() {
            return Err(AcquisitionError::MismatchedSurrogates);
        }
        Ok(AcquisitionContext {
            gp_accuracy,
            gp_negcost,
            front,
            reference,
        })
    }

    pub fn dim(&self) -> usize {
        self.gp_accuracy.dim()
    }

    pub fn marginals(&self, x: &[f64]) -> Result<(Marginal, Marginal), GpError> {
        let a = self.gp_accuracy.predict(x)?;
        let c = self.gp_negcost.predict(x)?;
        Ok((
            Marginal::new(a.mean, a.std()),
            Marginal::new(c.mean, c.std()),
        ))
    }

    pub fn ehvi(&self, x: &[f64]) -> Result<f64, GpError> {
        let (a, c) = self.marginals(x)?;
        Ok(ehvi_gaussian(&self.front.points, &self.reference, a, c))
    }

    pub fn log_ehvi(&self, x: &[f64]) -> Result<f64, GpError> {
        Ok(log_floor(self.ehvi(x)?))
    }

    pub fn mc_ehvi<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64), GpError> {
        let (a, c) = self.marginals(x)?;
        Ok(mc_ehvi_gaussian(
            &self.front.points,
            &self.reference,
            a,
            c,
            samples,
            rng,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionSettings {
    pub restarts: usize,
    pub local_steps: usize,
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        AcquisitionSettings {
            restarts: 32,
            local_steps: 60,
            initial_step: 0.25,
            min_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateProposal {
    pub x: ContinuousConfiguration,
    pub acquisition_value: f64,
    pub log_acquisition_value: f64,
    pub restarts_used: usize,
}

/// Maximizes `log_ehvi` over `[0,1]^d` from `settings.restarts` uniform seeds
/// plus `extra_seeds`, each refined by a box-clipped coordinate pattern
/// search. Seeds are refined in parallel; the result only depends on `rng`.
pub fn optimize_acquisition<R: Rng + ?Sized>(
    ctx: &AcquisitionContext,
    settings: &AcquisitionSettings,
    extra_seeds: &[Vec<f64>],
    rng: &mut R,
) -> Result<CandidateProposal, GpError> {
    let dim = ctx.dim();
    let mut seeds: Vec<Vec<f64>> = (0..settings.restarts.max(1))
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    seeds.extend(
        extra_seeds
            .iter()
            .map(|s| s.iter().map(|v| v.clamp(0.0, 1.0)).collect()),
    );

    let refined: Vec<(Vec<f64>, f64)> = seeds
        .into_par_iter()
        .map(|seed| pattern_search(|x| ctx.log_ehvi(x), seed, settings))
        .collect::<Result<_, _>>()?;

    let mut best = 0;
    for (i, (_, v)) in refined.iter().enumerate() {
        if *v > refined[best].1 {
            best = i;
        }
    }
    let used = refined.len();
    let (x, log_value) = refined.into_iter().nth(best).expect("at least one seed");
    let acquisition_value = ctx.ehvi(&x)?;
    Ok(CandidateProposal {
        x: ContinuousConfiguration::new(x, 1, dim).expect("pattern search stays in the unit box"),
        acquisition_value,
        log_acquisition_value: log_value,
        restarts_used: used,
    })
}

fn pattern_search<F>(
    f: F,
    start: Vec<f64>,
    settings: &AcquisitionSettings,
) -> Result<(Vec<f64>, f64), GpError>
where
    F: Fn(&[f64]) -> Result<f64, GpError>,
{
    let mut x = start;
    let mut fx = f(&x)?;
    let mut step = settings.initial_step;
    for _ in 0..settings.local_steps {
        if step < settings.min_step {
            break;
        }
        let mut improved = false;
        for i in 0..x.len() {
            let current = x[i];
            for dir in [1.0, -1.0] {
                let candidate = (current + dir * step).clamp(0.0, 1.0);
                if candidate == current {
                    continue;
                }
                x[i] = candidate;
                let v = f(&x)?;
                if v > fx {
                    fx = v;
                    improved = true;
                    break;
                }
                x[i] = current;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, fx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{KernelParams, TargetScaling};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ov(a: f64, c: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, c)
    }

    fn front3() -> Vec<ObjectiveVector> {
        vec![ov(0.0, -0.030155), ov(0.4, -0.144317), ov(0.5, -0.445803)]
    }

    #[test]
    fn deterministic_limit_matches_hypervolume_gain() {
        let r = ReferencePoint::new(0.0, -2.0);
        let front = front3();
        let base = hypervolume(&front, &r);
        for p in [
            ov(0.45, -0.2),
            ov(0.6, -1.0),
            ov(0.3, -0.05),
            ov(0.9, -0.01),
        ] {
            let mut with = front.clone();
            with.push(p);
            let expected = hypervolume(&with, &r) - base;
            let got = ehvi_gaussian(
                &front,
                &r,
                Marginal::new(p.accuracy, 0.0),
                Marginal::new(p.neg_cost, 0.0),
            );
            assert!((got - expected).abs() < 1e-12, "{p:?}: {got} vs {expected}");
            assert!(expected > 0.0);
        }
    }

    #[test]
    fn dominated_mean_without_variance_gives_zero() {
        let r = ReferencePoint::new(0.0, -2.0);
        let v = ehvi_gaussian(
            &front3(),
            &r,
            Marginal::new(0.3, 0.0),
            Marginal::new(-0.351, 0.0),
        );
        assert_eq!(v, 0.0);
        let on_front = ehvi_gaussian(
            &front3(),
            &r,
            Marginal::new(0.4, 1e-9),
            Marginal::new(-0.144317, 1e-9),
        );
        assert!(on_front <= 1e-9);
    }

    #[test]
    fn empty_front_is_expected_rectangle() {
        let r = ReferencePoint::new(0.0, -1.0);
        let a = Marginal::new(0.5, 0.0);
        let c = Marginal::new(-0.5, 0.0);
        assert!((ehvi_gaussian(&[], &r, a, c) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn exact_agrees_with_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r = ReferencePoint::new(0.0, -1.0);
        for _ in 0..10 {
            let k = rng.random_range(1..=6);
            let front: Vec<ObjectiveVector> = (0..k)
                .map(|_| ov(rng.random_range(0.0..1.0), rng.random_range(-1.0..0.0)))
                .collect();
            let a = Marginal::new(rng.random_range(0.0..1.0), rng.random_range(0.01..0.4));
            let c = Marginal::new(rng.random_range(-1.0..0.0), rng.random_range(0.01..0.4));
            let exact = ehvi_gaussian(&front, &r, a, c);
            let (mc, se) = mc_ehvi_gaussian(&front, &r, a, c, 50_000, &mut rng);
            assert!(
                (exact - mc).abs() <= 4.0 * se + 1e-12,
                "exact {exact} mc {mc} se {se}"
            );
        }
    }

    #[test]
    fn mc_zero_variance_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = ReferencePoint::new(0.0, -2.0);
        let (est, se) = mc_ehvi_gaussian(
            &front3(),
            &r,
            Marginal::new(0.6, 0.0),
            Marginal::new(-1.0, 0.0),
            100,
            &mut rng,
        );
        assert!((est - 0.1).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn mc_standard_error_scales_with_sample_count() {
        let r = ReferencePoint::new(0.0, -2.0);
        let a = Marginal::new(0.45, 0.2);
        let c = Marginal::new(-0.3, 0.3);
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, se1) = mc_ehvi_gaussian(&front3(), &r, a, c, 20_000, &mut rng);
            let (_, se2) = mc_ehvi_gaussian(&front3(), &r, a, c, 40_000, &mut rng);
            ratios.push(se2 / se1);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (mean - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.03,
            "{mean}"
        );
    }

    #[test]
    fn log_floor_contract() {
        assert_eq!(log_floor(1.0), 0.0);
        assert_eq!(log_floor(0.0), LOG_FLOOR.ln());
        assert!(log_floor(2e-300) > log_floor(1e-300));
    }

    fn toy_context() -> AcquisitionContext {
        let params = KernelParams::isotropic(1, 0.3, 1.0, 1e-6);
        let x = vec![vec![0.2], vec![0.8]];
        let acc = GpModel::condition(
            x.clone(),
            &[0.2, 0.5],
            params.clone(),
            TargetScaling::Standardize,
        )
        .unwrap();
        let cost =
            GpModel::condition(x, &[-0.2, -0.6], params, TargetScaling::Standardize).unwrap();
        let front = non_dominated_set(&[ov(0.2, -0.2), ov(0.5, -0.6)]);
        AcquisitionContext::new(acc, cost, front, ReferencePoint::new(0.0, -1.2)).unwrap()
    }

    #[test]
    fn finds_grid_argmax_in_one_dimension() {
        let ctx = toy_context();
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let v = ctx.ehvi(&[x]).unwrap();
            if v > best.1 {
                best = (x, v);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let proposal =
            optimize_acquisition(&ctx, &AcquisitionSettings::default(), &[], &mut rng).unwrap();
        let found = proposal.x.values()[0];
        assert!(
            (found - best.0).abs() <= 0.05,
            "found {found}, grid {}",
            best.0
        );
        assert!(proposal.acquisition_value >= best.1 * (1.0 - 1e-3));
        assert_eq!(proposal.restarts_used, 32);
    }

    #[test]
    fn proposal_is_deterministic_and_in_box() {
        let ctx = toy_context();
        let seeds = vec![vec![0.2], vec![1.7]];
        let a = optimize_acquisition(
            &ctx,
            &AcquisitionSettings::default(),
            &seeds,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let b = optimize_acquisition(
            &ctx,
            &AcquisitionSettings::default(),
            &seeds,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.x.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.restarts_used, 34);
    }

    #[test]
    fn saturated_front_still_returns_a_point() {
        let params = KernelParams::isotropic(2, 0.3, 1.0, 1e-6);
        let x = vec![vec![0.2, 0.2], vec![0.8, 0.8]];
        let acc = GpModel::condition(
            x.clone(),
            &[0.1, 0.2],
            params.clone(),
            TargetScaling::Identity,
        )
        .unwrap();
        let cost = GpModel::condition(x, &[-0.5, -0.4], params, TargetScaling::Identity).unwrap();
        // a front point far beyond anything the posterior can reach
        let front = non_dominated_set(&[ov(1e6, 1e6)]);
        let ctx =
            AcquisitionContext::new(acc, cost, front, ReferencePoint::new(0.0, -1.0)).unwrap();
        let settings = AcquisitionSettings {
            restarts: 4,
            ..Default::default()
        };
        let p =
            optimize_acquisition(&ctx, &settings, &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.acquisition_value, 0.0);
        assert_eq!(p.log_acquisition_value, LOG_FLOOR.ln());
        assert_eq!(p.x.values().len(), 2);
    }

    #[test]
    fn log_ehvi_preserves_argmax() {
        let ctx = toy_context();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let arg = |f: &dyn Fn(f64) -> f64| {
            let mut best = 0;
            for i in 1..pts.len() {
                if f(pts[i]) > f(pts[best]) {
                    best = i;
                }
            }
            best
        };
        let a = arg(&|x| ctx.ehvi(&[x]).unwrap());
        let b = arg(&|x| ctx.log_ehvi(&[x]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_surrogates_rejected() {
        let params = KernelParams::isotropic(1, 0.3, 1.0, 1e-6);
        let a = GpModel::condition(
            vec![vec![0.1], vec![0.2]],
            &[0.0, 1.0],
            params.clone(),
            TargetScaling::Identity,
        )
        .unwrap();
        let b = GpModel::condition(
            vec![vec![0.1], vec![0.3]],
            &[0.0, 1.0],
            params,
            TargetScaling::Identity,
        )
        .unwrap();
        assert!(matches!(
            AcquisitionContext::new(a, b, ParetoFront::default(), ReferencePoint::new(0.0, -1.0)),
            Err(AcquisitionError::MismatchedSurrogates)
        ));
    }
}
