//! Candidate model pool: the `M x D` feature matrix and its per-dimension
//! min-max scaler.
//!
//! Raw features keep their native units (benchmark points, USD per 1M
//! tokens). Everything downstream of the pool works in the normalized unit
//! box produced by [`ModelPool::normalize`].

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Value a constant dimension normalizes to.
pub const CONSTANT_DIM_VALUE: f64 = 0.5;

pub const BUNDLED_POOL: &str = include_str!("../../../pools/paper_table_5_1.toml");

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("failed to read pool document {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pool document: {0}")]
    Parse(String),
    #[error("schema error: model `{model}` is missing feature `{feature}`")]
    MissingFeature { model: String, feature: String },
    #[error("schema error: model `{model}` has unknown feature `{feature}`")]
    UnknownFeature { model: String, feature: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: duplicate model id `{0}`")]
    DuplicateId(String),
    #[error("config error: pool needs at least 2 models, found {0}")]
    TooFewModels(usize),
    #[error("model `{model}` has invalid value {value} for `{feature}`")]
    InvalidValue {
        model: String,
        feature: String,
        value: f64,
    },
    #[error("expected a vector of length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("component {index} = {value} is outside [0, 1]")]
    Domain { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    PerformanceScore,
    #[serde(rename = "price-per-million-input-tokens")]
    InputPrice,
    #[serde(rename = "price-per-million-output-tokens")]
    OutputPrice,
}

impl FeatureKind {
    pub fn is_price(self) -> bool {
        matches!(self, FeatureKind::InputPrice | FeatureKind::OutputPrice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered feature dimensions shared by every model in a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
}

impl FeatureSchema {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// First dimension of the given kind.
    pub fn index_of_kind(&self, kind: FeatureKind) -> Option<usize> {
        self.features.iter().position(|f| f.kind == kind)
    }

    fn validate(&self) -> Result<(), PoolError> {
        if self.features.is_empty() {
            return Err(PoolError::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(PoolError::Schema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub id: String,
    pub display_name: String,
    /// Raw feature values in schema order.
    pub features: Vec<f64>,
}

/// Per-dimension bounds derived from the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimScale {
    pub min: f64,
    pub max: f64,
}

impl DimScale {
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }
}

/// Serialized form of a pool: the document users edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDocument {
    pub schema: FeatureSchema,
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    pub features: IndexMap<String, f64>,
}

/// Immutable pool of candidate models with its min-max scaler.
#[derive(Debug, Clone)]
pub struct ModelPool {
    schema: FeatureSchema,
    models: Vec<ModelDescriptor>,
    scale: Vec<DimScale>,
    normalized: Vec<Vec<f64>>,
}

impl ModelPool {
    /// The ten-model Bedrock pool shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_POOL).expect("bundled pool is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PoolError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PoolError> {
        let doc: PoolDocument =
            toml::from_str(text).map_err(|e| PoolError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: PoolDocument) -> Result<Self, PoolError> {
        doc.schema.validate()?;
        let mut ids = HashSet::new();
        let mut models = Vec::with_capacity(doc.models.len());
        for entry in doc.models {
            if !ids.insert(entry.id.clone()) {
                return Err(PoolError::DuplicateId(entry.id));
            }
            if let Some(extra) = entry
                .features
                .keys()
                .find(|k| doc.schema.index_of(k).is_none())
            {
                return Err(PoolError::UnknownFeature {
                    model: entry.id.clone(),
                    feature: extra.clone(),
                });
            }
            let mut features = Vec::with_capacity(doc.schema.dim());
            for def in &doc.schema.features {
                let value =
                    *entry
                        .features
                        .get(&def.name)
                        .ok_or_else(|| PoolError::MissingFeature {
                            model: entry.id.clone(),
                            feature: def.name.clone(),
                        })?;
                if !value.is_finite() || (def.kind.is_price() && value < 0.0) {
                    return Err(PoolError::InvalidValue {
                        model: entry.id.clone(),
                        feature: def.name.clone(),
                        value,
                    });
                }
                features.push(value);
            }
            models.push(ModelDescriptor {
                display_name: entry.display_name.unwrap_or_else(|| entry.id.clone()),
                id: entry.id,
                features,
            });
        }
        Self::new(doc.schema, models)
    }

    pub fn new(schema: FeatureSchema, models: Vec<ModelDescriptor>) -> Result<Self, PoolError> {
        schema.validate()?;
        if models.len() < 2 {
            return Err(PoolError::TooFewModels(models.len()));
        }
        let d = schema.dim();
        let mut ids = HashSet::new();
        for m in &models {
            if !ids.insert(m.id.as_str()) {
                return Err(PoolError::DuplicateId(m.id.clone()));
            }
            if m.features.len() != d {
                return Err(PoolError::Dimension {
                    expected: d,
                    actual: m.features.len(),
                });
            }
        }
        let scale: Vec<DimScale> = (0..d)
            .map(|j| {
                let (min, max) = models
                    .iter()
                    .map(|m| m.features[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                DimScale { min, max }
            })
            .collect();
        let mut pool = ModelPool {
            schema,
            models,
            scale,
            normalized: Vec::new(),
        };
        pool.normalized = pool
            .models
            .iter()
            .map(|m| pool.normalize_unchecked(&m.features))
            .collect();
        Ok(pool)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn models(&self) -> &[ModelDescriptor] {
        &self.models
    }

    pub fn model(&self, index: usize) -> &ModelDescriptor {
        &self.models[index]
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn scale(&self) -> &[DimScale] {
        &self.scale
    }

    /// Flags for dimensions where every model has the same value.
    pub fn constant_dims(&self) -> Vec<bool> {
        self.scale.iter().map(DimScale::is_constant).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.id == id)
    }

    /// Normalized feature row of model `index`.
    pub fn normalized_row(&self, index: usize) -> &[f64] {
        &self.normalized[index]
    }

    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>, PoolError> {
        self.check_len(raw.len())?;
        Ok(self.normalize_unchecked(raw))
    }

    fn normalize_unchecked(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.scale)
            .map(|(&v, s)| {
                if s.is_constant() {
                    CONSTANT_DIM_VALUE
                } else {
                    (v - s.min) / (s.max - s.min)
                }
            })
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> Result<Vec<f64>, PoolError> {
        self.check_len(unit.len())?;
        unit.iter()
            .zip(&self.scale)
            .enumerate()
            .map(|(index, (&u, s))| {
                if !(0.0..=1.0).contains(&u) {
                    return Err(PoolError::Domain { index, value: u });
                }
                Ok(if s.is_constant() {
                    s.min
                } else {
                    s.min + u * (s.max - s.min)
                })
            })
            .collect()
    }

    fn check_len(&self, actual: usize) -> Result<(), PoolError> {
        if actual != self.dim() {
            return Err(PoolError::Dimension {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }

    pub fn to_document(&self) -> PoolDocument {
        PoolDocument {
            schema: self.schema.clone(),
            models: self
                .models
                .iter()
                .map(|m| ModelEntry {
                    id: m.id.clone(),
                    display_name: Some(m.display_name.clone()),
                    features: self
                        .schema
                        .names()
                        .map(str::to_owned)
                        .zip(m.features.iter().copied())
                        .collect(),
                })
                .collect(),
        }
    }

    /// SHA-256 over the canonical JSON form of the pool document.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_document()).expect("pool document serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn bundled_pool() -> ModelPool {
        ModelPool::bundled()
    }

    fn two_model_doc(a: &str, b: &str) -> String {
        format!(
            r#"
[schema]
features = [{{ name = "score", kind = "performance-score" }}, {{ name = "price", kind = "price-per-million-input-tokens" }}]
[[models]]
id = "a"
features = {a}
[[models]]
id = "b"
features = {b}
"#
        )
    }

    #[test]
    fn loads_shipped_pool() {
        let pool = bundled_pool();
        assert_eq!(pool.len(), 10);
        assert_eq!(pool.dim(), 5);
        assert_eq!(pool.model(0).id, "meta.llama3-1-8b-instruct");
        assert_eq!(pool.model(9).id, "us.amazon.nova-micro");
        assert!(pool.constant_dims().iter().all(|c| !c));
    }

    #[test]
    fn input_cost_normalization() {
        let pool = bundled_pool();
        let d = pool.schema().index_of("input_cost").unwrap();
        let haiku = pool.index_of("anthropic.claude-3-5-haiku").unwrap();
        let qwen = pool.index_of("qwen.qwen3-32b").unwrap();
        let llama = pool.index_of("meta.llama3-1-8b-instruct").unwrap();
        assert_eq!(pool.normalized_row(haiku)[d], 1.0);
        assert_eq!(pool.normalized_row(qwen)[d], 0.0);
        assert!((pool.normalized_row(llama)[d] - 0.07 / 0.77).abs() < 1e-12);
        assert!((pool.normalized_row(llama)[d] - 0.090909).abs() < 1e-6);
    }

    #[test]
    fn minima_map_to_zero_and_maxima_round_trip() {
        let pool = bundled_pool();
        let mins: Vec<f64> = pool.scale().iter().map(|s| s.min).collect();
        assert!(pool.normalize(&mins).unwrap().iter().all(|&v| v == 0.0));
        let maxs: Vec<f64> = pool.scale().iter().map(|s| s.max).collect();
        assert_eq!(pool.denormalize(&[1.0; 5]).unwrap(), maxs);
    }

    #[test]
    fn pool_rows_lie_in_unit_box() {
        let pool = bundled_pool();
        for j in 0..pool.len() {
            assert!(pool
                .normalized_row(j)
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn single_model_rejected() {
        let text = r#"
[schema]
features = [{ name = "score", kind = "performance-score" }]
[[models]]
id = "only"
features = { score = 1.0 }
"#;
        assert!(matches!(
            ModelPool::from_toml_str(text),
            Err(PoolError::TooFewModels(1))
        ));
    }

    #[test]
    fn identical_models_flag_constant_dims() {
        let row = "{ score = 50.0, price = 0.2 }";
        let pool = ModelPool::from_toml_str(&two_model_doc(row, row)).unwrap();
        assert_eq!(pool.constant_dims(), vec![true, true]);
        assert_eq!(pool.normalized_row(0), &[0.5, 0.5]);
        assert_eq!(pool.denormalize(&[0.5, 0.5]).unwrap(), vec![50.0, 0.2]);

        let shipped = bundled_pool();
        let first = shipped.model(0).features.clone();
        let models = vec![
            ModelDescriptor {
                id: "x".into(),
                display_name: "x".into(),
                features: first.clone(),
            },
            ModelDescriptor {
                id: "y".into(),
                display_name: "y".into(),
                features: first,
            },
        ];
        let twin = ModelPool::new(shipped.schema().clone(), models).unwrap();
        assert_eq!(twin.constant_dims(), vec![true; 5]);
    }

    #[test]
    fn missing_feature_names_model_and_dimension() {
        let err = ModelPool::from_toml_str(&two_model_doc(
            "{ score = 1.0, price = 0.1 }",
            "{ score = 2.0 }",
        ))
        .unwrap_err();
        match err {
            PoolError::MissingFeature { model, feature } => {
                assert_eq!(model, "b");
                assert_eq!(feature, "price");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = two_model_doc(
            "{ score = 1.0, price = 0.1 }",
            "{ score = 2.0, price = 0.1 }",
        )
        .replace("id = \"b\"", "id = \"a\"");
        assert!(
            matches!(ModelPool::from_toml_str(&text), Err(PoolError::DuplicateId(id)) if id == "a")
        );
    }

    #[test]
    fn negative_price_rejected() {
        let text = two_model_doc(
            "{ score = 1.0, price = -0.1 }",
            "{ score = 2.0, price = 0.1 }",
        );
        assert!(matches!(
            ModelPool::from_toml_str(&text),
            Err(PoolError::InvalidValue { .. })
        ));
    }

    #[test]
    fn wrong_lengths_and_out_of_range() {
        let pool = bundled_pool();
        assert!(matches!(
            pool.normalize(&[1.0; 4]),
            Err(PoolError::Dimension {
                expected: 5,
                actual: 4
            })
        ));
        assert!(matches!(
            pool.denormalize(&[0.0, 0.0, 1.5, 0.0, 0.0]),
            Err(PoolError::Domain { index: 2, .. })
        ));
    }

    #[test]
    fn document_round_trip_preserves_hash() {
        let pool = bundled_pool();
        let again = ModelPool::from_document(pool.to_document()).unwrap();
        assert_eq!(pool.content_hash(), again.content_hash());
        assert_eq!(pool.content_hash().len(), 64);
    }

    proptest::proptest! {
        #[test]
        fn denormalize_inverts_normalize(unit in proptest::collection::vec(0.0f64..=1.0, 5)) {
            let pool = bundled_pool();
            let raw = pool.denormalize(&unit).unwrap();
            let back = pool.normalize(&raw).unwrap();
            for (a, b) in unit.iter().zip(&back) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
            let again = pool.denormalize(&back).unwrap();
            for (a, b) in raw.iter().zip(&again) {
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
