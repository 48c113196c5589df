//! Post-hoc reporting over a run history.

mod report;
pub mod stats;

pub use report::{
    build_report, front_rows, write_front, write_report, FrontRow, ReportError, ReportOptions,
    ReportSummary,
};
pub use stats::{cohens_d, welch_t_test, StatsError, SummaryStats, WelchTest};

use serde::{Deserialize, Serialize};

use crate::gp::GpModel;
use crate::history::{Phase, RunHistory};
use crate::pareto::{hypervolume, ReferencePoint};

pub const DEFAULT_TIER_EDGES: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// One objective's init-vs-bo comparison. Tests compare the bo phase against
/// the init phase on the maximized objective, so a cost reduction gives a
/// positive `t` and `cohens_d`; summaries and `percent_change` are in native
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveComparison {
    pub objective: String,
    pub init: Option<SummaryStats>,
    pub bo: Option<SummaryStats>,
    pub test: Option<WelchTest>,
    pub cohens_d: Option<f64>,
    pub percent_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub accuracy: ObjectiveComparison,
    pub cost_usd: ObjectiveComparison,
}

pub fn phase_stats(history: &RunHistory) -> PhaseStats {
    let compare = |name: &str, value: fn(f64, f64) -> f64, sign: f64| {
        let pick = |phase| -> Vec<f64> {
            history
                .phase(phase)
                .map(|r| value(r.accuracy, r.cost_usd))
                .collect()
        };
        let (init, bo) = (pick(Phase::Init), pick(Phase::Bo));
        let signed = |xs: &[f64]| xs.iter().map(|x| sign * x).collect::<Vec<_>>();
        let (init_s, bo_s) = (SummaryStats::of(&init), SummaryStats::of(&bo));
        ObjectiveComparison {
            objective: name.to_string(),
            init: init_s,
            bo: bo_s,
            test: welch_t_test(&signed(&bo), &signed(&init)).ok(),
            cohens_d: cohens_d(&signed(&bo), &signed(&init)).ok(),
            percent_change: match (init_s, bo_s) {
                (Some(i), Some(b)) if i.mean != 0.0 => Some((b.mean - i.mean) / i.mean * 100.0),
                _ => None,
            },
        }
    };
    PhaseStats {
        accuracy: compare("accuracy", |a, _| a, 1.0),
        cost_usd: compare("cost_usd", |_, c| c, -1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvPoint {
    /// Records included.
    pub evaluations: usize,
    /// BO iterations completed.
    pub iteration: usize,
    pub hypervolume: f64,
}

/// Hypervolume of the first `k` records for `k = n_init ..= len`.
pub fn hypervolume_trace(history: &RunHistory, n_init: usize, r: &ReferencePoint) -> Vec<HvPoint> {
    let points = history.objectives();
    let start = n_init.min(points.len());
    (start..=points.len())
        .map(|k| HvPoint {
            evaluations: k,
            iteration: k - start,
            hypervolume: hypervolume(&points[..k], r),
        })
        .collect()
}

/// Performance bins `[e_i, e_{i+1})`; the top bin is closed above at infinity
/// so the maximum accuracy lands in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tiers {
    edges: Vec<f64>,
}

impl Tiers {
    /// `edges` must be strictly increasing with at least two entries.
    pub fn new(edges: Vec<f64>) -> Option<Self> {
        (edges.len() >= 2 && edges.windows(2).all(|w| w[0] < w[1])).then_some(Tiers { edges })
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn label(&self, tier: usize) -> String {
        format!("{}-{}", self.edges[tier], self.edges[tier + 1])
    }

    pub fn tier_of(&self, accuracy: f64) -> Option<usize> {
        if accuracy < self.edges[0] {
            return None;
        }
        let last = self.count() - 1;
        Some(
            (0..last)
                .find(|&i| accuracy < self.edges[i + 1])
                .unwrap_or(last),
        )
    }
}

impl Default for Tiers {
    fn default() -> Self {
        Tiers {
            edges: DEFAULT_TIER_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierEvolution {
    pub tier: String,
    /// Best cost in the tier after each record (`None` before the tier's
    /// first record).
    pub running_min: Vec<Option<f64>>,
    pub first_cost: f64,
    pub best_cost: f64,
    pub improvement_percent: f64,
    pub records: usize,
}

/// Running minimum cost per performance tier. Tiers without records are
/// omitted.
pub fn tier_cost_evolution(history: &RunHistory, tiers: &Tiers) -> Vec<TierEvolution> {
    let mut out = Vec::new();
    for tier in 0..tiers.count() {
        let mut best: Option<f64> = None;
        let mut first = None;
        let mut count = 0;
        let mut running_min = Vec::with_capacity(history.len());
        for r in &history.records {
            if tiers.tier_of(r.accuracy) == Some(tier) {
                count += 1;
                first.get_or_insert(r.cost_usd);
                best = Some(best.map_or(r.cost_usd, |b: f64| b.min(r.cost_usd)));
            }
            running_min.push(best);
        }
        if let (Some(first), Some(best)) = (first, best) {
            let improvement_percent = if first > 0.0 {
                (first - best) / first * 100.0
            } else {
                0.0
            };
            out.push(TierEvolution {
                tier: tiers.label(tier),
                running_min,
                first_cost: first,
                best_cost: best,
                improvement_percent,
                records: count,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub roles: Vec<String>,
    pub models: Vec<String>,
    /// `counts[model][role]`.
    pub counts: Vec<Vec<usize>>,
}

impl FrequencyTable {
    pub fn role_total(&self, role: usize) -> usize {
        self.counts.iter().map(|row| row[role]).sum()
    }
}

/// Per-(role, model) assignment counts over the records of `phase` (all
/// records when `None`). Models appear in `models` order; ids missing from it
/// are appended in order of first use.
pub fn assignment_frequency(
    history: &RunHistory,
    phase: Option<Phase>,
    models: &[String],
) -> FrequencyTable {
    let roles = history.roles();
    let mut models = models.to_vec();
    let mut counts = vec![vec![0; roles.len()]; models.len()];
    for r in history
        .records
        .iter()
        .filter(|r| phase.is_none_or(|p| r.phase == p))
    {
        for (role, id) in r.assignment.values().enumerate() {
            let m = match models.iter().position(|x| x == id) {
                Some(m) => m,
                None => {
                    models.push(id.clone());
                    counts.push(vec![0; roles.len()]);
                    models.len() - 1
                }
            };
            counts[m][role] += 1;
        }
    }
    FrequencyTable {
        roles,
        models,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub role: String,
    pub feature: String,
    pub performance: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentImportance {
    pub role: String,
    pub performance: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Sorted by descending performance importance (stable).
    pub features: Vec<FeatureImportance>,
    /// In role order.
    pub agents: Vec<AgentImportance>,
}

/// Inverse ARD lengthscales of both surrogates, per input and summed per
/// role. Inputs are laid out role-major: `role * D + feature`.
pub fn importance_report(
    gp_accuracy: &GpModel,
    gp_negcost: &GpModel,
    feature_names: &[String],
    roles: &[String],
) -> ImportanceReport {
    let d = feature_names.len();
    let perf = gp_accuracy.feature_importance();
    let cost = gp_negcost.feature_importance();
    assert_eq!(
        perf.len(),
        d * roles.len(),
        "surrogate dimension does not match roles x features"
    );
    let mut features = Vec::with_capacity(perf.len());
    let mut agents = Vec::with_capacity(roles.len());
    for (r, role) in roles.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        agents.push(AgentImportance {
            role: role.clone(),
            performance: perf[span.clone()].iter().sum(),
            cost: cost[span].iter().sum(),
        });
        for (j, name) in feature_names.iter().enumerate() {
            features.push(FeatureImportance {
                role: role.clone(),
                feature: name.clone(),
                performance: perf[r * d + j],
                cost: cost[r * d + j],
            });
        }
    }
    features.sort_by(|a, b| b.performance.total_cmp(&a.performance));
    ImportanceReport { features, agents }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gp::{KernelParams, TargetScaling};
    use crate::history::HistoryRecord;
    use indexmap::IndexMap;

    pub(crate) fn rec(
        index: usize,
        phase: Phase,
        ids: [&str; 3],
        accuracy: f64,
        cost: f64,
    ) -> HistoryRecord {
        let assignment: IndexMap<String, String> = ["manager", "search_agent", "reformulator"]
            .iter()
            .map(|s| s.to_string())
            .zip(ids.iter().map(|s| s.to_string()))
            .collect();
        HistoryRecord {
            index,
            phase,
            iteration: index,
            assignment,
            team: vec![0, 0, 0],
            features: vec![vec![0.0]; 3],
            accuracy,
            cost_usd: cost,
            tokens: None,
            proposal: None,
            surrogates: None,
            acquisition_value: None,
            log_acquisition_value: None,
        }
    }

    #[test]
    fn tier_improvement_arithmetic() {
        let h = RunHistory::new(vec![
            rec(0, Phase::Init, ["a", "a", "a"], 0.5, 1.0),
            rec(1, Phase::Bo, ["b", "a", "a"], 0.5, 0.41),
        ]);
        let tiers = tier_cost_evolution(&h, &Tiers::default());
        assert_eq!(tiers.len(), 1);
        assert_eq!(tiers[0].tier, "0.4-0.5");
        assert_eq!(format!("{:.1}", tiers[0].improvement_percent), "59.0");
        assert_eq!(tiers[0].running_min, vec![Some(1.0), Some(0.41)]);
    }

    #[test]
    fn single_record_tier_and_empty_tiers() {
        let h = RunHistory::new(vec![rec(0, Phase::Init, ["a", "a", "a"], 0.15, 0.2)]);
        let tiers = tier_cost_evolution(&h, &Tiers::default());
        assert_eq!(tiers.len(), 1);
        assert_eq!(tiers[0].tier, "0.1-0.2");
        assert_eq!(tiers[0].improvement_percent, 0.0);
    }

    #[test]
    fn tier_edges() {
        let t = Tiers::default();
        assert_eq!(t.tier_of(0.0), Some(0));
        assert_eq!(t.tier_of(0.1), Some(1));
        assert_eq!(t.tier_of(0.4), Some(4));
        assert_eq!(t.tier_of(0.5), Some(4));
        assert_eq!(t.tier_of(1.0), Some(4));
        assert_eq!(t.tier_of(-0.1), None);
        assert!(Tiers::new(vec![0.0, 0.0]).is_none());
    }

    #[test]
    fn frequency_marginals() {
        let h = RunHistory::new(vec![
            rec(0, Phase::Init, ["a", "b", "a"], 0.1, 0.2),
            rec(1, Phase::Bo, ["a", "c", "c"], 0.1, 0.2),
            rec(2, Phase::Bo, ["b", "c", "a"], 0.1, 0.2),
        ]);
        let all = assignment_frequency(&h, None, &["a".into(), "b".into()]);
        assert_eq!(all.models, vec!["a", "b", "c"]);
        for role in 0..3 {
            assert_eq!(all.role_total(role), 3);
        }
        let bo = assignment_frequency(&h, Some(Phase::Bo), &[]);
        assert_eq!(bo.role_total(0), 2);
        assert_eq!(
            bo.counts[bo.models.iter().position(|m| m == "c").unwrap()][1],
            2
        );
    }

    #[test]
    fn single_model_single_cell() {
        let h = RunHistory::new(
            (0..4)
                .map(|i| rec(i, Phase::Init, ["a", "a", "a"], 0.1, 0.2))
                .collect(),
        );
        let f = assignment_frequency(&h, None, &["a".into()]);
        assert_eq!(f.counts, vec![vec![4, 4, 4]]);
    }

    #[test]
    fn trace_flat_without_bo_and_on_dominated_points() {
        let r = ReferencePoint::new(0.0, -2.0);
        let mut h = RunHistory::new(vec![
            rec(0, Phase::Init, ["a", "a", "a"], 0.5, 0.4),
            rec(1, Phase::Init, ["a", "a", "a"], 0.2, 0.1),
        ]);
        let t = hypervolume_trace(&h, 2, &r);
        assert_eq!(t.len(), 1);
        h.records.push(rec(2, Phase::Bo, ["a", "a", "a"], 0.1, 0.3));
        let t = hypervolume_trace(&h, 2, &r);
        assert_eq!(t[0].hypervolume, t[1].hypervolume);
        assert_eq!(t[1].iteration, 1);
    }

    #[test]
    fn phase_stats_signs() {
        let h = RunHistory::new(vec![
            rec(0, Phase::Init, ["a", "a", "a"], 0.2, 1.0),
            rec(1, Phase::Init, ["a", "a", "a"], 0.3, 0.8),
            rec(2, Phase::Bo, ["a", "a", "a"], 0.2, 0.3),
            rec(3, Phase::Bo, ["a", "a", "a"], 0.3, 0.2),
        ]);
        let s = phase_stats(&h);
        assert!(s.cost_usd.test.unwrap().t > 0.0);
        assert!(s.cost_usd.cohens_d.unwrap() > 0.0);
        assert!((s.cost_usd.percent_change.unwrap() + (1.0 - 0.25 / 0.9) * 100.0).abs() < 1e-9);
        assert_eq!(s.accuracy.test.unwrap().t, 0.0);
        assert_eq!(s.accuracy.init.unwrap().count, 2);
    }

    #[test]
    fn importance_partition_and_order() {
        let inputs = vec![vec![0.0; 4], vec![1.0; 4]];
        let gp = |ls: Vec<f64>| {
            let params = KernelParams {
                lengthscales: ls,
                signal_variance: 1.0,
                noise_variance: 1e-3,
            };
            GpModel::condition(inputs.clone(), &[0.0, 1.0], params, TargetScaling::Identity)
                .unwrap()
        };
        let acc = gp(vec![0.5, 2.0, 1.0, 4.0]);
        let cost = gp(vec![1.0; 4]);
        let names = vec!["x".to_string(), "y".to_string()];
        let roles = vec!["manager".to_string(), "helper".to_string()];
        let rep = importance_report(&acc, &cost, &names, &roles);
        assert_eq!(rep.features[0].role, "manager");
        assert_eq!(rep.features[0].feature, "x");
        assert_eq!(rep.agents[0].performance, 2.5);
        assert_eq!(rep.agents[1].performance, 1.25);
        let total: f64 = rep.features.iter().map(|f| f.performance).sum();
        assert_eq!(total, rep.agents.iter().map(|a| a.performance).sum::<f64>());
        assert!(rep.agents.iter().all(|a| a.cost == 2.0));
    }
}
