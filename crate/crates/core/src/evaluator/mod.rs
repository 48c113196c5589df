//! The black-box objective: a deployable team in, `(accuracy, cost)` out.
//!
//! Three backends share one interface: a deterministic synthetic benchmark,
//! replay of a recorded table, and an external process speaking a JSON
//! request/reply protocol.

mod external;
mod synthetic;
mod tabular;

pub use external::{EvaluationReply, EvaluationRequest, ExternalEvaluator, ExternalSettings};
pub use synthetic::{FloorRule, RoleTokens, SyntheticEvaluator, SyntheticParams, WeightTerm};
pub use tabular::{TabularEvaluator, TabularRow};

use std::collections::BTreeMap;
use std::path::PathBuf;

use indexmap::IndexMap;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configuration::{RoleSet, TeamAssignment};
use crate::pool::ModelPool;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("team {0} is not in the replay table")]
    Lookup(String),
    #[error("failed to read replay table {path}: {message}")]
    Table { path: String, message: String },
    #[error("external evaluator timed out after {seconds} s")]
    Timeout { seconds: f64 },
    #[error("external evaluator exited with {status}: {stderr}")]
    ExitStatus { status: String, stderr: String },
    #[error("malformed evaluator reply ({reason}): {payload}")]
    MalformedReply { reason: String, payload: String },
    #[error("failed to run external evaluator: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("evaluator returned invalid result: {0}")]
    InvalidResult(String),
    #[error("evaluator configuration error: {0}")]
    Config(String),
    #[error("evaluation failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub accuracy: f64,
    pub cost_usd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<BTreeMap<String, TokenCount>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl EvaluationResult {
    pub fn new(accuracy: f64, cost_usd: f64) -> Self {
        EvaluationResult {
            accuracy,
            cost_usd,
            tokens: None,
            wall_seconds: None,
        }
    }

    /// Boundary check applied to every backend's output.
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(EvalError::InvalidResult(format!(
                "accuracy {} outside [0, 1]",
                self.accuracy
            )));
        }
        if !(self.cost_usd >= 0.0 && self.cost_usd.is_finite()) {
            return Err(EvalError::InvalidResult(format!(
                "cost {} is not a non-negative number",
                self.cost_usd
            )));
        }
        Ok(())
    }
}

/// Per-call metadata passed to every backend.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub run_id: &'a str,
    pub iteration: usize,
    pub assignment: IndexMap<String, String>,
}

pub trait Evaluator: Send {
    fn evaluate(
        &mut self,
        ctx: &EvalContext<'_>,
        team: &TeamAssignment,
        rng: &mut dyn RngCore,
    ) -> Result<EvaluationResult, EvalError>;
}

/// Which backend to use and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvaluatorSpec {
    Synthetic(SyntheticParams),
    Tabular { path: PathBuf },
    External(ExternalSettings),
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec::Synthetic(SyntheticParams::default())
    }
}

impl EvaluatorSpec {
    /// Parses `synthetic`, `tabular:PATH` or `external:COMMAND`.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        match (kind, arg) {
            ("synthetic", None) => Ok(EvaluatorSpec::Synthetic(SyntheticParams::default())),
            ("tabular", Some(path)) if !path.is_empty() => Ok(EvaluatorSpec::Tabular { path: path.into() }),
            ("external", Some(cmd)) if !cmd.is_empty() => Ok(EvaluatorSpec::External(ExternalSettings::new(cmd))),
            _ => Err(EvalError::Config(format!(
                "unrecognized evaluator `{text}` (expected synthetic, tabular:PATH or external:COMMAND)"
            ))),
        }
    }

    pub fn build(
        &self,
        pool: &ModelPool,
        roles: &RoleSet,
    ) -> Result<Box<dyn Evaluator>, EvalError> {
        Ok(match self {
            EvaluatorSpec::Synthetic(params) => {
                Box::new(SyntheticEvaluator::new(pool, roles, params.clone())?)
            }
            EvaluatorSpec::Tabular { path } => Box::new(TabularEvaluator::load(path, pool, roles)?),
            EvaluatorSpec::External(settings) => Box::new(ExternalEvaluator::new(settings.clone())),
        })
    }
}

/// Runs `evaluator` and enforces the result contract.
pub fn evaluate(
    evaluator: &mut dyn Evaluator,
    ctx: &EvalContext<'_>,
    team: &TeamAssignment,
    rng: &mut dyn RngCore,
) -> Result<EvaluationResult, EvalError> {
    let result = evaluator.evaluate(ctx, team, rng)?;
    result.validate()?;
    Ok(result)
}
