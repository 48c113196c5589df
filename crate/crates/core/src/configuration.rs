//! Team configurations in continuous and discrete form, the nearest-neighbor
//! projection between them, and random initial teams.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::ModelPool;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigurationError {
    #[error("role set must contain at least one role")]
    NoRoles,
    #[error("duplicate role `{0}`")]
    DuplicateRole(String),
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("value {value} at position {index} is outside [0, 1]")]
    OutOfBox { index: usize, value: f64 },
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("assignment is missing role `{0}`")]
    MissingRole(String),
}

/// Ordered agent roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RoleSet(Vec<String>);

impl RoleSet {
    pub fn new<I, S>(roles: I) -> Result<Self, ConfigurationError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let roles: Vec<String> = roles.into_iter().map(Into::into).collect();
        if roles.is_empty() {
            return Err(ConfigurationError::NoRoles);
        }
        let mut seen = HashSet::new();
        for r in &roles {
            if !seen.insert(r.as_str()) {
                return Err(ConfigurationError::DuplicateRole(r.clone()));
            }
        }
        Ok(RoleSet(roles))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, role: &str) -> Option<usize> {
        self.0.iter().position(|r| r == role)
    }
}

impl Default for RoleSet {
    fn default() -> Self {
        RoleSet(vec![
            "manager".into(),
            "search_agent".into(),
            "reformulator".into(),
        ])
    }
}

impl TryFrom<Vec<String>> for RoleSet {
    type Error = ConfigurationError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        RoleSet::new(value)
    }
}

impl From<RoleSet> for Vec<String> {
    fn from(value: RoleSet) -> Self {
        value.0
    }
}

/// Flattens a row-per-role matrix. Entry `(role r, dim j)` lands at `r * D + j`.
pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(values: &[f64], dim: usize) -> Result<Vec<Vec<f64>>, ConfigurationError> {
    if dim == 0 || !values.len().is_multiple_of(dim) || values.is_empty() {
        return Err(ConfigurationError::Length {
            expected: dim.max(1) * (values.len() / dim.max(1)).max(1),
            actual: values.len(),
        });
    }
    Ok(values.chunks(dim).map(<[f64]>::to_vec).collect())
}

/// A point of the relaxed search box `[0,1]^(N*D)`, stored flat in role-major
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContinuousConfiguration {
    values: Vec<f64>,
}

impl ContinuousConfiguration {
    pub fn new(values: Vec<f64>, roles: usize, dim: usize) -> Result<Self, ConfigurationError> {
        if values.len() != roles * dim {
            return Err(ConfigurationError::Length {
                expected: roles * dim,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ConfigurationError::OutOfBox { index, value });
        }
        Ok(ContinuousConfiguration { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ConfigurationError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ConfigurationError::Length {
                expected: dim * rows.len(),
                actual: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(flatten(rows), rows.len(), dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, role: usize, dim: usize) -> &[f64] {
        &self.values[role * dim..(role + 1) * dim]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A deployable team: one pool model per role.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamAssignment {
    /// Pool index per role, in role order.
    pub models: Vec<usize>,
    /// Normalized feature rows of the assigned models, in role order.
    pub resolved_features: Vec<Vec<f64>>,
}

impl TeamAssignment {
    pub fn from_indices(pool: &ModelPool, models: Vec<usize>) -> Self {
        let resolved_features = models
            .iter()
            .map(|&m| pool.normalized_row(m).to_vec())
            .collect();
        TeamAssignment {
            models,
            resolved_features,
        }
    }

    pub fn from_ids(
        pool: &ModelPool,
        roles: &RoleSet,
        ids: &IndexMap<String, String>,
    ) -> Result<Self, ConfigurationError> {
        let models = roles
            .names()
            .iter()
            .map(|role| {
                let id = ids
                    .get(role)
                    .ok_or_else(|| ConfigurationError::MissingRole(role.clone()))?;
                pool.index_of(id)
                    .ok_or_else(|| ConfigurationError::UnknownModel(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_indices(pool, models))
    }

    /// `{role: model_id}` in role order.
    pub fn id_map(&self, pool: &ModelPool, roles: &RoleSet) -> IndexMap<String, String> {
        roles
            .names()
            .iter()
            .cloned()
            .zip(self.models.iter().map(|&m| pool.model(m).id.clone()))
            .collect()
    }

    pub fn flat_features(&self) -> Vec<f64> {
        flatten(&self.resolved_features)
    }
}

/// Euclidean distance from `target` to every pool row in normalized space,
/// skipping constant dimensions.
pub fn model_distances(pool: &ModelPool, target: &[f64]) -> Vec<f64> {
    let constant = pool.constant_dims();
    (0..pool.len())
        .map(|j| {
            pool.normalized_row(j)
                .iter()
                .zip(target)
                .zip(&constant)
                .filter(|(_, &c)| !c)
                .map(|((a, b), _)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Nearest pool model to `target`. Ties go to the lowest pool index.
pub fn nearest_model(pool: &ModelPool, target: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, d) in model_distances(pool, target).into_iter().enumerate() {
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Projects every role row of `x` onto its nearest pool model.
pub fn project(pool: &ModelPool, x: &ContinuousConfiguration) -> TeamAssignment {
    let dim = pool.dim();
    let roles = x.values().len() / dim;
    let models = (0..roles)
        .map(|r| nearest_model(pool, x.row(r, dim)).0)
        .collect();
    TeamAssignment::from_indices(pool, models)
}

/// Samples each role uniformly, with replacement, from the whole pool.
pub fn random_configuration<R: Rng + ?Sized>(
    pool: &ModelPool,
    roles: &RoleSet,
    rng: &mut R,
) -> TeamAssignment {
    let all: Vec<usize> = (0..pool.len()).collect();
    random_configuration_from(pool, roles, &all, rng)
}

/// Like [`random_configuration`] but restricted to `candidates` (pool indices).
pub fn random_configuration_from<R: Rng + ?Sized>(
    pool: &ModelPool,
    roles: &RoleSet,
    candidates: &[usize],
    rng: &mut R,
) -> TeamAssignment {
    assert!(!candidates.is_empty(), "candidate list must not be empty");
    let models = (0..roles.len())
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect();
    TeamAssignment::from_indices(pool, models)
}
