//! Deterministic desk-scale stand-in for a benchmark run.
//!
//! Accuracy is a saturating function of a weighted sum of normalized role
//! features, with a hard zero when the gating role (the manager by default)
//! is too weak. Cost follows the token-pricing law
//! `sum_r (in_r * price_in_r + out_r * price_out_r) / 1e6`, where output
//! volume grows with each role's verbosity feature.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{EvalContext, EvalError, EvaluationResult, Evaluator, TokenCount};
use crate::configuration::{RoleSet, TeamAssignment};
use crate::pool::{FeatureKind, ModelPool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTerm {
    pub role: String,
    pub feature: String,
    pub weight: f64,
}

/// Accuracy is zero when `role`'s normalized `feature` is below `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorRule {
    pub role: String,
    pub feature: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTokens {
    pub role: String,
    pub input: f64,
    pub output: f64,
    /// Output tokens scale by `1 + verbosity * feature`.
    pub verbosity: f64,
    pub verbosity_feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub terms: Vec<WeightTerm>,
    pub floor: Option<FloorRule>,
    pub gain: f64,
    pub saturation: f64,
    /// Round accuracy to multiples of 0.1.
    pub quantize: bool,
    pub tokens: Vec<RoleTokens>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let term = |role: &str, feature: &str, weight| WeightTerm {
            role: role.into(),
            feature: feature.into(),
            weight,
        };
        let tokens = |role: &str, input, output| RoleTokens {
            role: role.into(),
            input,
            output,
            verbosity: 0.5,
            verbosity_feature: "livecodebench".into(),
        };
        SyntheticParams {
            terms: vec![
                term("manager", "mmlu_pro", 0.6),
                term("search_agent", "livecodebench", 0.2),
                term("reformulator", "mmlu_pro", 0.2),
            ],
            floor: Some(FloorRule {
                role: "manager".into(),
                feature: "mmlu_pro".into(),
                threshold: 0.15,
            }),
            gain: 1.0,
            saturation: 2.0,
            quantize: false,
            tokens: vec![
                tokens("manager", 150_000.0, 40_000.0),
                tokens("search_agent", 300_000.0, 80_000.0),
                tokens("reformulator", 50_000.0, 40_000.0),
            ],
        }
    }
}

#[derive(Debug, Clone)]
struct ResolvedTokens {
    role: usize,
    input: f64,
    output: f64,
    verbosity: f64,
    feature: usize,
}

/// [`SyntheticParams`] bound to a pool schema and role set.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    params: SyntheticParams,
    roles: RoleSet,
    terms: Vec<(usize, usize, f64)>,
    floor: Option<(usize, usize, f64)>,
    tokens: Vec<ResolvedTokens>,
    price_in: usize,
    price_out: usize,
    raw_prices: Vec<(f64, f64)>,
}

impl SyntheticEvaluator {
    pub fn new(
        pool: &ModelPool,
        roles: &RoleSet,
        params: SyntheticParams,
    ) -> Result<Self, EvalError> {
        let schema = pool.schema();
        let role_idx = |r: &str| {
            roles.index_of(r).ok_or_else(|| {
                EvalError::Config(format!("synthetic evaluator references unknown role `{r}`"))
            })
        };
        let feat_idx = |f: &str| {
            schema.index_of(f).ok_or_else(|| {
                EvalError::Config(format!(
                    "synthetic evaluator references unknown feature `{f}`"
                ))
            })
        };
        let terms = params
            .terms
            .iter()
            .map(|t| Ok((role_idx(&t.role)?, feat_idx(&t.feature)?, t.weight)))
            .collect::<Result<Vec<_>, EvalError>>()?;
        let floor = params
            .floor
            .as_ref()
            .map(|f| Ok::<_, EvalError>((role_idx(&f.role)?, feat_idx(&f.feature)?, f.threshold)))
            .transpose()?;
        let tokens = params
            .tokens
            .iter()
            .map(|t| {
                Ok(ResolvedTokens {
                    role: role_idx(&t.role)?,
                    input: t.input,
                    output: t.output,
                    verbosity: t.verbosity,
                    feature: feat_idx(&t.verbosity_feature)?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let price_in = schema
            .index_of_kind(FeatureKind::InputPrice)
            .ok_or_else(|| EvalError::Config("pool has no input-price feature".into()))?;
        let price_out = schema
            .index_of_kind(FeatureKind::OutputPrice)
            .ok_or_else(|| EvalError::Config("pool has no output-price feature".into()))?;
        let raw_prices = pool
            .models()
            .iter()
            .map(|m| (m.features[price_in], m.features[price_out]))
            .collect();
        Ok(SyntheticEvaluator {
            params,
            roles: roles.clone(),
            terms,
            floor,
            tokens,
            price_in,
            price_out,
            raw_prices,
        })
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    /// Accuracy and per-role token counts for a team given its normalized
    /// feature rows (one per role).
    pub fn objective(&self, features: &[Vec<f64>]) -> (f64, Vec<TokenCount>) {
        let gated = self
            .floor
            .is_some_and(|(role, feat, threshold)| features[role][feat] < threshold);
        let accuracy = if gated {
            0.0
        } else {
            let score: f64 = self.terms.iter().map(|&(r, f, w)| w * features[r][f]).sum();
            let k = self.params.saturation;
            let saturated = if k > 0.0 {
                (1.0 - (-k * score).exp()) / (1.0 - (-k).exp())
            } else {
                score
            };
            let acc = (self.params.gain * saturated).clamp(0.0, 1.0);
            if self.params.quantize {
                (acc * 10.0).round() / 10.0
            } else {
                acc
            }
        };
        let mut tokens = vec![
            TokenCount {
                input: 0,
                output: 0
            };
            features.len()
        ];
        for t in &self.tokens {
            let out = t.output * (1.0 + t.verbosity * features[t.role][t.feature]);
            tokens[t.role].input += t.input.round() as u64;
            tokens[t.role].output += out.round() as u64;
        }
        (accuracy, tokens)
    }

    /// Cost of role `role` played by pool model `model` with the given tokens.
    pub fn role_cost(&self, model: usize, tokens: TokenCount) -> f64 {
        let (p_in, p_out) = self.raw_prices[model];
        (tokens.input as f64 * p_in + tokens.output as f64 * p_out) / 1e6
    }

    pub fn price_dims(&self) -> (usize, usize) {
        (self.price_in, self.price_out)
    }

    pub fn evaluate_team(&self, team: &TeamAssignment) -> EvaluationResult {
        let (accuracy, tokens) = self.objective(&team.resolved_features);
        let cost_usd = team
            .models
            .iter()
            .zip(&tokens)
            .map(|(&m, &t)| self.role_cost(m, t))
            .sum();
        let per_role: BTreeMap<String, TokenCount> =
            self.roles.names().iter().cloned().zip(tokens).collect();
        EvaluationResult {
            accuracy,
            cost_usd,
            tokens: Some(per_role),
            wall_seconds: None,
        }
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(
        &mut self,
        _ctx: &EvalContext<'_>,
        team: &TeamAssignment,
        _rng: &mut dyn RngCore,
    ) -> Result<EvaluationResult, EvalError> {
        Ok(self.evaluate_team(team))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::tests::bundled_pool;

    fn evaluator() -> (ModelPool, SyntheticEvaluator) {
        let pool = bundled_pool();
        let ev = SyntheticEvaluator::new(&pool, &RoleSet::default(), SyntheticParams::default())
            .unwrap();
        (pool, ev)
    }

    #[test]
    fn all_max_features_hit_ceiling() {
        let (_, ev) = evaluator();
        let (acc, _) = ev.objective(&vec![vec![1.0; 5]; 3]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn weakest_manager_zeroes_accuracy() {
        let (pool, ev) = evaluator();
        let weakest = pool.index_of("mistral.mistral-7b-instruct-v0-2").unwrap();
        let best = pool.index_of("deepseek.v3").unwrap();
        for other in 0..pool.len() {
            let team = TeamAssignment::from_indices(&pool, vec![weakest, other, best]);
            assert_eq!(ev.evaluate_team(&team).accuracy, 0.0);
        }
    }

    #[test]
    fn cheapest_homogeneous_team_cost_by_hand() {
        let (pool, ev) = evaluator();
        let qwen = pool.index_of("qwen.qwen3-32b").unwrap();
        let team = TeamAssignment::from_indices(&pool, vec![qwen; 3]);
        // livecodebench normalized: (55 - 5) / (78 - 5) = 50/73
        let v = 50.0 / 73.0;
        let out = |base: f64| (base * (1.0 + 0.5 * v)).round();
        let expected = (150_000.0 * 0.03 + out(40_000.0) * 0.13) / 1e6
            + (300_000.0 * 0.03 + out(80_000.0) * 0.13) / 1e6
            + (50_000.0 * 0.03 + out(40_000.0) * 0.13) / 1e6;
        let result = ev.evaluate_team(&team);
        assert!((result.cost_usd - expected).abs() < 1e-12);
        let tokens = result.tokens.unwrap();
        assert_eq!(tokens["search_agent"].output, out(80_000.0) as u64);
        assert_eq!(tokens["manager"].input, 150_000);
    }

    #[test]
    fn zero_token_profile_costs_nothing() {
        let pool = bundled_pool();
        let mut params = SyntheticParams::default();
        for t in &mut params.tokens {
            t.input = 0.0;
            t.output = 0.0;
        }
        let ev = SyntheticEvaluator::new(&pool, &RoleSet::default(), params).unwrap();
        let team = TeamAssignment::from_indices(&pool, vec![7, 7, 7]);
        assert_eq!(ev.evaluate_team(&team).cost_usd, 0.0);
    }

    #[test]
    fn accuracy_monotone_in_reasoning_features() {
        let (pool, ev) = evaluator();
        let m = pool.len();
        let relevant = [(0usize, 0usize), (1, 1), (2, 0)];
        let acc = |team: &[usize]| {
            ev.evaluate_team(&TeamAssignment::from_indices(&pool, team.to_vec()))
                .accuracy
        };
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let team = [a, b, c];
                    let base = acc(&team);
                    for &(role, feat) in &relevant {
                        for alt in 0..m {
                            if pool.normalized_row(alt)[feat]
                                >= pool.normalized_row(team[role])[feat]
                            {
                                let mut t = team;
                                t[role] = alt;
                                assert!(acc(&t) >= base, "{team:?} -> {t:?}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cost_is_additive_over_roles() {
        let (pool, ev) = evaluator();
        let team = TeamAssignment::from_indices(&pool, vec![7, 3, 8]);
        let result = ev.evaluate_team(&team);
        let tokens = result.tokens.clone().unwrap();
        let separate: f64 = RoleSet::default()
            .names()
            .iter()
            .zip(&team.models)
            .map(|(role, &model)| ev.role_cost(model, tokens[role]))
            .sum();
        assert!((separate - result.cost_usd).abs() < 1e-15);
    }

    #[test]
    fn pure_function_of_team() {
        let (pool, ev) = evaluator();
        let team = TeamAssignment::from_indices(&pool, vec![4, 3, 4]);
        let a = ev.evaluate_team(&team);
        let b = ev.evaluate_team(&team);
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        assert_eq!(a.cost_usd.to_bits(), b.cost_usd.to_bits());
        assert!(a.validate().is_ok());
    }

    #[test]
    fn quantized_accuracy_on_tenths() {
        let pool = bundled_pool();
        let params = SyntheticParams {
            quantize: true,
            ..Default::default()
        };
        let ev = SyntheticEvaluator::new(&pool, &RoleSet::default(), params).unwrap();
        for a in 0..pool.len() {
            let acc = ev
                .evaluate_team(&TeamAssignment::from_indices(&pool, vec![a, 3, 4]))
                .accuracy;
            assert!(((acc * 10.0) - (acc * 10.0).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_role_rejected() {
        let pool = bundled_pool();
        let roles = RoleSet::new(["planner"]).unwrap();
        assert!(matches!(
            SyntheticEvaluator::new(&pool, &roles, SyntheticParams::default()),
            Err(EvalError::Config(_))
        ));
    }
}
