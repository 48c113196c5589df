//! Pareto dominance and exact two-objective hypervolume.
//!
//! Both objectives are maximized: accuracy and negated cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest point set accepted by [`hypervolume_bruteforce`].
pub const BRUTEFORCE_MAX_POINTS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("inclusion-exclusion is limited to {max} points, got {got}")]
    TooManyPoints { max: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub accuracy: f64,
    pub neg_cost: f64,
}

impl ObjectiveVector {
    pub fn new(accuracy: f64, neg_cost: f64) -> Self {
        ObjectiveVector { accuracy, neg_cost }
    }

    pub fn from_cost(accuracy: f64, cost_usd: f64) -> Self {
        ObjectiveVector {
            accuracy,
            neg_cost: -cost_usd,
        }
    }

    pub fn cost_usd(&self) -> f64 {
        -self.neg_cost
    }

    fn clip_to(self, r: &ReferencePoint) -> Self {
        ObjectiveVector {
            accuracy: self.accuracy.max(r.accuracy),
            neg_cost: self.neg_cost.max(r.neg_cost),
        }
    }
}

/// Lower corner of the hypervolume region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub accuracy: f64,
    pub neg_cost: f64,
}

impl ReferencePoint {
    pub fn new(accuracy: f64, neg_cost: f64) -> Self {
        ReferencePoint { accuracy, neg_cost }
    }

    /// `(0, -2 * max_cost)`; falls back to a cost bound of 1 USD when every
    /// observed cost is zero.
    pub fn from_max_cost(max_cost: f64) -> Self {
        let bound = if max_cost > 0.0 { 2.0 * max_cost } else { 1.0 };
        ReferencePoint {
            accuracy: 0.0,
            neg_cost: -bound,
        }
    }
}

/// True iff `a` is at least as good as `b` everywhere and differs from it.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    a.accuracy >= b.accuracy && a.neg_cost >= b.neg_cost && a != b
}

/// Non-dominated points, sorted ascending by accuracy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParetoFront {
    pub points: Vec<ObjectiveVector>,
    /// For each front point, the indices of every input that produced it.
    pub provenance: Vec<Vec<usize>>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether `index` (an input position) ended up on the front.
    pub fn contains_index(&self, index: usize) -> bool {
        self.provenance.iter().any(|p| p.contains(&index))
    }
}

/// Maximal points of `points`, with equal points merged. Provenance entries
/// are the positions in `points`.
pub fn non_dominated_set(points: &[ObjectiveVector]) -> ParetoFront {
    let mut front = ParetoFront::default();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .accuracy
            .total_cmp(&points[b].accuracy)
            .then(points[a].neg_cost.total_cmp(&points[b].neg_cost))
            .then(a.cmp(&b))
    });
    for &i in &order {
        let p = points[i];
        if points.iter().any(|q| dominates(q, &p)) {
            continue;
        }
        match front.points.last() {
            Some(last) if *last == p => front.provenance.last_mut().unwrap().push(i),
            _ => {
                front.points.push(p);
                front.provenance.push(vec![i]);
            }
        }
    }
    front
}

/// Exact staircase sweep for an arbitrary point set. Points are clipped to
/// the reference point first, so those not dominating it contribute nothing.
/// Only staircase corners open a new slab, so dominated points leave the
/// result bit-identical.
pub fn hypervolume(points: &[ObjectiveVector], r: &ReferencePoint) -> f64 {
    let mut pts: Vec<ObjectiveVector> = points.iter().map(|p| p.clip_to(r)).collect();
    // descending accuracy, best cost first within ties
    pts.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(b.neg_cost.total_cmp(&a.neg_cost))
    });
    let mut corners: Vec<ObjectiveVector> = Vec::new();
    for p in pts {
        if corners.last().is_none_or(|c| p.neg_cost > c.neg_cost) {
            corners.push(p);
        }
    }
    let mut volume = 0.0;
    for (k, c) in corners.iter().enumerate() {
        let next = corners.get(k + 1).map_or(r.accuracy, |p| p.accuracy);
        volume += (c.accuracy - next) * (c.neg_cost - r.neg_cost);
    }
    volume
}

/// Hypervolume of a front (already sorted ascending by accuracy).
pub fn hypervolume_2d(front: &ParetoFront, r: &ReferencePoint) -> f64 {
    let mut volume = 0.0;
    let mut prev = r.accuracy;
    for p in front.points.iter().map(|p| p.clip_to(r)) {
        if p.accuracy > prev {
            volume += (p.accuracy - prev) * (p.neg_cost - r.neg_cost);
            prev = p.accuracy;
        }
    }
    volume
}

/// Inclusion-exclusion over all subsets of the dominated rectangles.
pub fn hypervolume_bruteforce(
    points: &[ObjectiveVector],
    r: &ReferencePoint,
) -> Result<f64, ParetoError> {
    let n = points.len();
    if n > BRUTEFORCE_MAX_POINTS {
        return Err(ParetoError::TooManyPoints {
            max: BRUTEFORCE_MAX_POINTS,
            got: n,
        });
    }
    let mut total = 0.0;
    for mask in 1u32..(1u32 << n) {
        let mut acc = f64::INFINITY;
        let mut nc = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if mask & (1 << i) != 0 {
                acc = acc.min(p.accuracy);
                nc = nc.min(p.neg_cost);
            }
        }
        let area = (acc - r.accuracy).max(0.0) * (nc - r.neg_cost).max(0.0);
        if mask.count_ones() % 2 == 1 {
            total += area;
        } else {
            total -= area;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ov(a: f64, c: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, c)
    }

    fn archetypes() -> Vec<ObjectiveVector> {
        vec![ov(0.5, -0.445803), ov(0.4, -0.144317), ov(0.0, -0.030155)]
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&ov(0.5, -0.4458), &ov(0.5, -0.737)));
        assert!(!dominates(&ov(0.5, -0.4458), &ov(0.5, -0.4458)));
        assert!(dominates(&ov(0.4, -0.144), &ov(0.3, -0.351)));
        assert!(!dominates(&ov(0.5, -0.9), &ov(0.4, -0.1)));
    }

    #[test]
    fn front_of_archetypes_and_dominated_points() {
        let mut pts = archetypes();
        pts.push(ov(0.5, -0.737));
        pts.push(ov(0.3, -0.351));
        let front = non_dominated_set(&pts);
        assert_eq!(
            front.points,
            vec![ov(0.0, -0.030155), ov(0.4, -0.144317), ov(0.5, -0.445803)]
        );
        assert_eq!(front.provenance, vec![vec![2], vec![1], vec![0]]);
    }

    #[test]
    fn trivial_fronts() {
        assert_eq!(
            non_dominated_set(&[ov(0.2, -1.0)]).points,
            vec![ov(0.2, -1.0)]
        );
        let same = non_dominated_set(&[ov(0.2, -1.0); 4]);
        assert_eq!(same.points.len(), 1);
        assert_eq!(same.provenance, vec![vec![0, 1, 2, 3]]);
        assert!(non_dominated_set(&[]).is_empty());
    }

    #[test]
    fn single_rectangle() {
        let r = ReferencePoint::new(0.0, -2.0);
        let front = non_dominated_set(&[ov(0.5, -0.4458)]);
        assert!((hypervolume_2d(&front, &r) - 0.7771).abs() < 1e-12);
        assert_eq!(hypervolume_2d(&ParetoFront::default(), &r), 0.0);
    }

    #[test]
    fn archetype_front_matches_bruteforce() {
        let r = ReferencePoint::new(0.0, -2.0);
        let pts = archetypes();
        let front = non_dominated_set(&pts);
        let sweep = hypervolume_2d(&front, &r);
        let brute = hypervolume_bruteforce(&pts, &r).unwrap();
        assert!((sweep - brute).abs() < 1e-12);
        // 0.4 * (2 - 0.144317) + 0.1 * (2 - 0.445803)
        assert!((sweep - (0.4 * 1.855683 + 0.1 * 1.554197)).abs() < 1e-12);
    }

    #[test]
    fn two_point_staircase_and_absorption() {
        let r = ReferencePoint::new(0.0, 0.0);
        let pts = [ov(1.0, 2.0), ov(2.0, 1.0)];
        // 2 + 2 - 1 overlap
        assert!((hypervolume_bruteforce(&pts, &r).unwrap() - 3.0).abs() < 1e-15);
        assert!((hypervolume(&pts, &r) - 3.0).abs() < 1e-15);
        let with_dominated = [ov(1.0, 2.0), ov(2.0, 1.0), ov(0.5, 0.5)];
        assert!((hypervolume_bruteforce(&with_dominated, &r).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn points_below_reference_contribute_nothing() {
        let r = ReferencePoint::new(0.0, -1.0);
        assert_eq!(hypervolume(&[ov(0.5, -3.0)], &r), 0.0);
        assert_eq!(hypervolume(&[ov(-0.5, -0.1)], &r), 0.0);
        let front = non_dominated_set(&[ov(0.5, -3.0), ov(0.2, -0.5)]);
        assert!((hypervolume_2d(&front, &r) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bruteforce_size_limit() {
        let pts = vec![ov(0.1, -0.1); 13];
        assert!(matches!(
            hypervolume_bruteforce(&pts, &ReferencePoint::new(0.0, -1.0)),
            Err(ParetoError::TooManyPoints { max: 12, got: 13 })
        ));
    }

    #[test]
    fn sweep_matches_bruteforce_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = ReferencePoint::new(0.0, -1.0);
        for _ in 0..1000 {
            let n = rng.random_range(1..=8);
            let pts: Vec<ObjectiveVector> = (0..n)
                .map(|_| ov(rng.random_range(-0.1..1.0), rng.random_range(-1.1..0.0)))
                .collect();
            let brute = hypervolume_bruteforce(&pts, &r).unwrap();
            assert!((hypervolume(&pts, &r) - brute).abs() < 1e-10);
            assert!((hypervolume_2d(&non_dominated_set(&pts), &r) - brute).abs() < 1e-10);
        }
    }

    fn point() -> impl Strategy<Value = ObjectiveVector> {
        // coarse grid so ties and duplicates actually occur
        (0u8..6, 0u8..6).prop_map(|(a, c)| ov(a as f64 / 5.0, -(c as f64) / 5.0))
    }

    proptest! {
        #[test]
        fn dominance_is_strict_partial_order(a in point(), b in point(), c in point()) {
            prop_assert!(!dominates(&a, &a));
            prop_assert!(!(dominates(&a, &b) && dominates(&b, &a)));
            if dominates(&a, &b) && dominates(&b, &c) {
                prop_assert!(dominates(&a, &c));
            }
        }

        #[test]
        fn dominated_point_leaves_hypervolume_bit_identical(pts in prop::collection::vec(point(), 1..10), pick in 0usize..10, da in 0u8..3, dc in 0u8..3) {
            let r = ReferencePoint::new(0.0, -1.0);
            let q = pts[pick % pts.len()];
            let worse = ov(q.accuracy - da as f64 / 5.0, q.neg_cost - dc as f64 / 5.0);
            let mut more = pts.clone();
            more.push(worse);
            prop_assert_eq!(hypervolume(&more, &r).to_bits(), hypervolume(&pts, &r).to_bits());
        }

        #[test]
        fn hypervolume_monotone_and_front_invariant(pts in prop::collection::vec(point(), 0..10), p in point()) {
            let r = ReferencePoint::new(0.0, -1.0);
            let base = hypervolume(&pts, &r);
            let mut more = pts.clone();
            more.push(p);
            prop_assert!(hypervolume(&more, &r) >= base - 1e-12);
            prop_assert!((hypervolume_2d(&non_dominated_set(&pts), &r) - base).abs() < 1e-12);
        }

        #[test]
        fn front_is_mutually_non_dominated(pts in prop::collection::vec(point(), 1..12)) {
            let front = non_dominated_set(&pts);
            for a in &front.points {
                for b in &front.points {
                    prop_assert!(!dominates(a, b));
                }
            }
            prop_assert!(front.points.windows(2).all(|w| w[0].accuracy < w[1].accuracy));
            let merged: usize = front.provenance.iter().map(Vec::len).sum();
            let maximal = pts.iter().filter(|p| !pts.iter().any(|q| dominates(q, p))).count();
            prop_assert_eq!(merged, maximal);
        }
    }
}
