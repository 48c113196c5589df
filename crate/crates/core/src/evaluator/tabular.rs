//! Replay of recorded evaluations from a delimited table.
//!
//! The header names every role plus `accuracy` and `cost_usd`; each row is one
//! evaluated team.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::RngCore;

use super::{EvalContext, EvalError, EvaluationResult, Evaluator};
use crate::configuration::{RoleSet, TeamAssignment};
use crate::pool::ModelPool;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularRow {
    /// `{role: model_id}` in role order.
    pub assignment: IndexMap<String, String>,
    pub team: Vec<usize>,
    pub accuracy: f64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone)]
pub struct TabularEvaluator {
    rows: Vec<TabularRow>,
    // First row wins when a team appears more than once.
    index: HashMap<Vec<usize>, usize>,
}

impl TabularEvaluator {
    pub fn load(
        path: impl AsRef<Path>,
        pool: &ModelPool,
        roles: &RoleSet,
    ) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Table {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv_str(&text, pool, roles).map_err(|e| match e {
            EvalError::Table { message, .. } => EvalError::Table {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_csv_str(text: &str, pool: &ModelPool, roles: &RoleSet) -> Result<Self, EvalError> {
        let table_err = |message: String| EvalError::Table {
            path: "<inline>".into(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| table_err(e.to_string()))?
            .clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| table_err(format!("missing column `{name}`")))
        };
        let role_cols = roles
            .names()
            .iter()
            .map(|r| column(r))
            .collect::<Result<Vec<_>, _>>()?;
        let acc_col = column("accuracy")?;
        let cost_col = column("cost_usd")?;

        let mut rows = Vec::new();
        let mut index = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| table_err(format!("line {line}: {e}")))?;
            let field = |c: usize| record.get(c).unwrap_or("");
            let mut assignment = IndexMap::new();
            let mut team = Vec::with_capacity(role_cols.len());
            for (role, &c) in roles.names().iter().zip(&role_cols) {
                let id = field(c);
                let m = pool.index_of(id).ok_or_else(|| {
                    table_err(format!("line {line}: model `{id}` is not in the pool"))
                })?;
                assignment.insert(role.clone(), id.to_string());
                team.push(m);
            }
            let number = |c: usize, name: &str| {
                field(c)
                    .parse::<f64>()
                    .map_err(|_| table_err(format!("line {line}: bad {name} `{}`", field(c))))
            };
            let row = TabularRow {
                assignment,
                team: team.clone(),
                accuracy: number(acc_col, "accuracy")?,
                cost_usd: number(cost_col, "cost_usd")?,
            };
            EvaluationResult::new(row.accuracy, row.cost_usd)
                .validate()
                .map_err(|e| table_err(format!("line {line}: {e}")))?;
            index.entry(team).or_insert(rows.len());
            rows.push(row);
        }
        Ok(TabularEvaluator { rows, index })
    }

    pub fn rows(&self) -> &[TabularRow] {
        &self.rows
    }

    pub fn lookup(&self, team: &[usize]) -> Option<&TabularRow> {
        self.index.get(team).map(|&i| &self.rows[i])
    }
}

impl Evaluator for TabularEvaluator {
    fn evaluate(
        &mut self,
        ctx: &EvalContext<'_>,
        team: &TeamAssignment,
        _rng: &mut dyn RngCore,
    ) -> Result<EvaluationResult, EvalError> {
        let row = self.lookup(&team.models).ok_or_else(|| {
            let desc = ctx
                .assignment
                .iter()
                .map(|(r, m)| format!("{r}={m}"))
                .collect::<Vec<_>>()
                .join(", ");
            EvalError::Lookup(format!("{{{desc}}}"))
        })?;
        Ok(EvaluationResult::new(row.accuracy, row.cost_usd))
    }
}
