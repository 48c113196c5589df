//! The optimization loop: random initialization, then one
//! fit -> acquire -> project -> evaluate -> append cycle per iteration.
//!
//! Every random draw comes from a substream keyed by `(seed, purpose, record
//! index)`, so a run resumed from any prefix of its history continues exactly
//! as the uninterrupted run would have.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    optimize_acquisition, AcquisitionContext, AcquisitionError, AcquisitionSettings,
};
use crate::configuration::{
    project, random_configuration, ContinuousConfiguration, RoleSet, TeamAssignment,
};
use crate::evaluator::{
    self, EvalContext, EvalError, EvaluationResult, Evaluator, EvaluatorSpec, TabularEvaluator,
};
use crate::gp::{FitOptions, GpError, GpModel};
use crate::history::{
    HistoryError, HistoryRecord, HistoryWriter, Manifest, Phase, RunDir, RunHistory,
    SurrogateSnapshot, SCHEMA_VERSION,
};
use crate::pareto::{ParetoFront, ReferencePoint};
use crate::pool::{ModelPool, PoolError};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("evaluation {index} failed ({index} records kept; resume to continue): {source}")]
    Evaluation {
        index: usize,
        #[source]
        source: EvalError,
    },
    #[error("surrogate fit failed: {0}")]
    Surrogate(#[from] GpError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("history does not match this run: {0}")]
    Mismatch(String),
}

impl From<AcquisitionError> for OptimizerError {
    fn from(e: AcquisitionError) -> Self {
        match e {
            AcquisitionError::Gp(g) => OptimizerError::Surrogate(g),
            other => OptimizerError::Config(other.to_string()),
        }
    }
}

/// Explicit hypervolume reference point; cost is given as a positive USD bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub accuracy: f64,
    pub cost_usd: f64,
}

impl ReferenceSpec {
    pub fn point(&self) -> ReferencePoint {
        ReferencePoint::new(self.accuracy, -self.cost_usd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub seed: u64,
    pub n_init: usize,
    pub n_iterations: usize,
    /// Evaluations per iteration. Only 1 is supported.
    pub q: usize,
    pub roles: RoleSet,
    /// Pool file; the bundled pool when absent.
    pub pool: Option<PathBuf>,
    pub evaluator: EvaluatorSpec,
    pub acquisition: AcquisitionSettings,
    pub gp: FitOptions,
    /// Fixed reference point. When absent it is derived from the
    /// initialization costs and frozen.
    pub reference: Option<ReferenceSpec>,
    /// Record every row of a tabular evaluator's table in order instead of
    /// optimizing.
    pub replay: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: None,
            seed: 0,
            n_init: 15,
            n_iterations: 15,
            q: 1,
            roles: RoleSet::default(),
            pool: None,
            evaluator: EvaluatorSpec::default(),
            acquisition: AcquisitionSettings::default(),
            gp: FitOptions::default(),
            reference: None,
            replay: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, OptimizerError> {
        toml::from_str(text).map_err(|e| OptimizerError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OptimizerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OptimizerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            OptimizerError::Config(m) => OptimizerError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.q != 1 {
            return Err(OptimizerError::Config(format!(
                "q must be 1, got {}",
                self.q
            )));
        }
        if !self.replay && self.n_init < 2 {
            return Err(OptimizerError::Config(format!(
                "n_init must be at least 2, got {}",
                self.n_init
            )));
        }
        if self.replay && !matches!(self.evaluator, EvaluatorSpec::Tabular { .. }) {
            return Err(OptimizerError::Config(
                "replay needs a tabular evaluator".into(),
            ));
        }
        if let Some(r) = self.reference {
            if !(r.accuracy.is_finite() && r.cost_usd.is_finite()) {
                return Err(OptimizerError::Config(
                    "reference point must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", self.seed))
    }

    pub fn load_pool(&self) -> Result<ModelPool, OptimizerError> {
        Ok(match &self.pool {
            Some(path) => ModelPool::load(path)?,
            None => ModelPool::bundled(),
        })
    }

    pub fn total_evaluations(&self) -> usize {
        self.n_init + self.n_iterations
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    InitSample = 1,
    Evaluate = 2,
    FitAccuracy = 3,
    FitCost = 4,
    Acquisition = 5,
}

fn substream(seed: u64, stream: Stream, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | index as u64);
    rng
}

/// Both surrogates fitted for one iteration.
#[derive(Debug, Clone)]
pub struct Surrogates {
    pub accuracy: GpModel,
    pub neg_cost: GpModel,
}

impl Surrogates {
    pub fn snapshot(&self) -> SurrogateSnapshot {
        SurrogateSnapshot {
            accuracy: self.accuracy.params().clone(),
            neg_cost: self.neg_cost.params().clone(),
        }
    }
}

/// Fits the accuracy and negated-cost GPs on every record of `history`.
/// `index` selects the random substreams for the multi-start draws.
pub fn fit_surrogates(
    history: &RunHistory,
    options: &FitOptions,
    seed: u64,
    index: usize,
) -> Result<Surrogates, GpError> {
    let inputs: Vec<Vec<f64>> = history
        .records
        .iter()
        .map(HistoryRecord::flat_features)
        .collect();
    let acc: Vec<f64> = history.records.iter().map(|r| r.accuracy).collect();
    let neg_cost: Vec<f64> = history.records.iter().map(|r| -r.cost_usd).collect();
    let (a, c) = rayon::join(
        || {
            GpModel::fit(
                inputs.clone(),
                &acc,
                options,
                &mut substream(seed, Stream::FitAccuracy, index),
            )
        },
        || {
            GpModel::fit(
                inputs.clone(),
                &neg_cost,
                options,
                &mut substream(seed, Stream::FitCost, index),
            )
        },
    );
    Ok(Surrogates {
        accuracy: a?,
        neg_cost: c?,
    })
}

pub struct Optimizer {
    config: RunConfig,
    pool: ModelPool,
    evaluator: Box<dyn Evaluator>,
    history: RunHistory,
    writer: Option<HistoryWriter>,
    replay_teams: Option<Vec<Vec<usize>>>,
    run_id: String,
}

impl std::fmt::Debug for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Optimizer")
            .field("run_id", &self.run_id)
            .field("records", &self.history.len())
            .finish_non_exhaustive()
    }
}

impl Optimizer {
    /// Builds the evaluator named in `config`.
    pub fn new(config: RunConfig, pool: ModelPool) -> Result<Self, OptimizerError> {
        config.validate()?;
        let to_config = |e: EvalError| OptimizerError::Config(e.to_string());
        if config.replay {
            let EvaluatorSpec::Tabular { path } = &config.evaluator else {
                unreachable!("validated above")
            };
            let table = TabularEvaluator::load(path, &pool, &config.roles).map_err(to_config)?;
            let teams: Vec<Vec<usize>> = table.rows().iter().map(|r| r.team.clone()).collect();
            if teams.is_empty() {
                return Err(OptimizerError::Config("replay table has no rows".into()));
            }
            let config = RunConfig {
                n_init: teams.len(),
                n_iterations: 0,
                ..config
            };
            let mut opt = Self::with_evaluator(config, pool, Box::new(table))?;
            opt.replay_teams = Some(teams);
            return Ok(opt);
        }
        let evaluator = config
            .evaluator
            .build(&pool, &config.roles)
            .map_err(to_config)?;
        Self::with_evaluator(config, pool, evaluator)
    }

    pub fn with_evaluator(
        config: RunConfig,
        pool: ModelPool,
        evaluator: Box<dyn Evaluator>,
    ) -> Result<Self, OptimizerError> {
        config.validate()?;
        let run_id = config.run_id();
        Ok(Optimizer {
            config,
            pool,
            evaluator,
            history: RunHistory::default(),
            writer: None,
            replay_teams: None,
            run_id,
        })
    }

    /// Continues from existing records, which must have been produced by
    /// this configuration.
    pub fn with_history(mut self, history: RunHistory) -> Result<Self, OptimizerError> {
        let roles = self.config.roles.names();
        let total = self.config.total_evaluations();
        if history.len() > total {
            return Err(OptimizerError::Mismatch(format!(
                "history has {} records but the run only makes {total}",
                history.len()
            )));
        }
        for r in &history.records {
            let recorded: Vec<&String> = r.assignment.keys().collect();
            if recorded != roles.iter().collect::<Vec<_>>() {
                return Err(OptimizerError::Mismatch(format!(
                    "record {} has roles {recorded:?}, expected {roles:?}",
                    r.index
                )));
            }
            for (&m, id) in r.team.iter().zip(r.assignment.values()) {
                if m >= self.pool.len() || &self.pool.model(m).id != id {
                    return Err(OptimizerError::Mismatch(format!(
                        "record {} references `{id}`, which is not pool model {m}",
                        r.index
                    )));
                }
            }
            let expected = if r.index < self.config.n_init {
                Phase::Init
            } else {
                Phase::Bo
            };
            if r.phase != expected {
                return Err(OptimizerError::Mismatch(format!(
                    "record {} is phase {} but n_init is {}",
                    r.index,
                    r.phase.as_str(),
                    self.config.n_init
                )));
            }
        }
        self.history = history;
        Ok(self)
    }

    /// Appends every new record to `writer` as soon as it is evaluated.
    pub fn persist_to(mut self, writer: HistoryWriter) -> Self {
        self.writer = Some(writer);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn pool(&self) -> &ModelPool {
        &self.pool
    }

    pub fn history(&self) -> &RunHistory {
        &self.history
    }

    pub fn into_history(self) -> RunHistory {
        self.history
    }

    pub fn is_complete(&self) -> bool {
        self.history.len() >= self.config.total_evaluations()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION.to_string(),
            run_id: self.run_id.clone(),
            roles: self.config.roles.names().to_vec(),
            pool_hash: self.pool.content_hash(),
            pool: self.pool.to_document(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
        }
    }

    /// The frozen reference point, once initialization is complete.
    pub fn reference_point(&self) -> Option<ReferencePoint> {
        if let Some(spec) = self.config.reference {
            return Some(spec.point());
        }
        if self.history.len() < self.config.n_init {
            return None;
        }
        let max_cost = self.history.records[..self.config.n_init]
            .iter()
            .map(|r| r.cost_usd)
            .fold(0.0, f64::max);
        Some(ReferencePoint::from_max_cost(max_cost))
    }

    pub fn front(&self) -> ParetoFront {
        self.history.front()
    }

    /// Evaluates the remaining initialization samples.
    pub fn initialize(&mut self) -> Result<(), OptimizerError> {
        while self.history.len() < self.config.n_init {
            let index = self.history.len();
            let team = match &self.replay_teams {
                Some(teams) => TeamAssignment::from_indices(&self.pool, teams[index].clone()),
                None => random_configuration(
                    &self.pool,
                    &self.config.roles,
                    &mut substream(self.config.seed, Stream::InitSample, index),
                ),
            };
            let result = self.evaluate(index, index, &team)?;
            let record = self.record(index, Phase::Init, index, &team, &result);
            self.append(record, result.wall_seconds)?;
        }
        Ok(())
    }

    /// One BO iteration. Initialization must be complete.
    pub fn step(&mut self) -> Result<&HistoryRecord, OptimizerError> {
        let n_init = self.config.n_init;
        if self.history.len() < n_init {
            return Err(OptimizerError::Config(
                "initialization is not complete".into(),
            ));
        }
        let index = self.history.len();
        let iteration = index - n_init + 1;
        let seed = self.config.seed;

        let surrogates = fit_surrogates(&self.history, &self.config.gp, seed, index)?;
        let snapshot = surrogates.snapshot();
        let reference = self.reference_point().expect("initialization complete");
        let front = self.history.front();
        let extra_seeds: Vec<Vec<f64>> = front
            .provenance
            .iter()
            .map(|p| self.history.records[p[0]].flat_features())
            .collect();
        let ctx =
            AcquisitionContext::new(surrogates.accuracy, surrogates.neg_cost, front, reference)?;
        let proposal = optimize_acquisition(
            &ctx,
            &self.config.acquisition,
            &extra_seeds,
            &mut substream(seed, Stream::Acquisition, index),
        )?;

        let x = ContinuousConfiguration::new(
            proposal.x.into_values(),
            self.config.roles.len(),
            self.pool.dim(),
        )
        .map_err(|e| OptimizerError::Config(e.to_string()))?;
        let team = project(&self.pool, &x);
        let result = self.evaluate(index, iteration, &team)?;
        let mut record = self.record(index, Phase::Bo, iteration, &team, &result);
        record.proposal = Some(x.into_values());
        record.surrogates = Some(snapshot);
        record.acquisition_value = Some(proposal.acquisition_value);
        record.log_acquisition_value = Some(proposal.log_acquisition_value);
        self.append(record, result.wall_seconds)?;
        Ok(self.history.records.last().expect("just appended"))
    }

    /// Completes the run from wherever the history currently stands.
    pub fn run(&mut self) -> Result<&RunHistory, OptimizerError> {
        self.initialize()?;
        while !self.is_complete() {
            self.step()?;
        }
        Ok(&self.history)
    }

    fn evaluate(
        &mut self,
        index: usize,
        iteration: usize,
        team: &TeamAssignment,
    ) -> Result<EvaluationResult, OptimizerError> {
        let ctx = EvalContext {
            run_id: &self.run_id,
            iteration,
            assignment: team.id_map(&self.pool, &self.config.roles),
        };
        let mut rng = substream(self.config.seed, Stream::Evaluate, index);
        evaluator::evaluate(self.evaluator.as_mut(), &ctx, team, &mut rng)
            .map_err(|source| OptimizerError::Evaluation { index, source })
    }

    fn record(
        &self,
        index: usize,
        phase: Phase,
        iteration: usize,
        team: &TeamAssignment,
        result: &EvaluationResult,
    ) -> HistoryRecord {
        HistoryRecord {
            index,
            phase,
            iteration,
            assignment: team.id_map(&self.pool, &self.config.roles),
            team: team.models.clone(),
            features: team.resolved_features.clone(),
            accuracy: result.accuracy,
            cost_usd: result.cost_usd,
            tokens: result.tokens.clone(),
            proposal: None,
            surrogates: None,
            acquisition_value: None,
            log_acquisition_value: None,
        }
    }

    fn append(
        &mut self,
        record: HistoryRecord,
        wall_seconds: Option<f64>,
    ) -> Result<(), OptimizerError> {
        if let Some(w) = &mut self.writer {
            w.append(&record, wall_seconds)?;
        }
        self.history.records.push(record);
        Ok(())
    }
}

/// Prepares a fresh run persisted in `dir`: writes the manifest and
/// truncates any previous history. Call [`Optimizer::run`] to execute it.
pub fn create_run(
    config: RunConfig,
    pool: ModelPool,
    dir: &RunDir,
) -> Result<Optimizer, OptimizerError> {
    let opt = Optimizer::new(config, pool)?;
    dir.create()?;
    opt.manifest().save(dir.manifest())?;
    let writer = HistoryWriter::create(dir.clone())?;
    Ok(opt.persist_to(writer))
}

/// Reopens the run in `dir` for continuation. When `expected` is given its
/// pool and roles must match the manifest.
pub fn open_run(
    dir: &RunDir,
    expected: Option<(&ModelPool, &RoleSet)>,
) -> Result<Optimizer, OptimizerError> {
    let manifest = Manifest::load(dir.manifest())?;
    let config: RunConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| OptimizerError::Config(format!("manifest config: {e}")))?;
    let pool = ModelPool::from_document(manifest.pool.clone())?;
    if pool.content_hash() != manifest.pool_hash {
        return Err(OptimizerError::Mismatch(
            "embedded pool does not match the recorded pool hash".into(),
        ));
    }
    if let Some((expected_pool, expected_roles)) = expected {
        if expected_pool.content_hash() != manifest.pool_hash {
            return Err(OptimizerError::Mismatch(format!(
                "pool hash {} differs from the run's {}",
                expected_pool.content_hash(),
                manifest.pool_hash
            )));
        }
        if expected_roles.names() != manifest.roles.as_slice() {
            return Err(OptimizerError::Mismatch(format!(
                "roles {:?} differ from the run's {:?}",
                expected_roles.names(),
                manifest.roles
            )));
        }
    }
    let history = if dir.history().exists() {
        RunHistory::load(dir.history())?
    } else {
        RunHistory::default()
    };
    let opt = Optimizer::new(config, pool)?.with_history(history)?;
    let writer = HistoryWriter::open(dir.clone())?;
    Ok(opt.persist_to(writer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{SyntheticEvaluator, SyntheticParams};
    use crate::pareto::hypervolume;
    use rand::RngCore;

    fn small_config(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            n_init: 4,
            n_iterations: 3,
            acquisition: AcquisitionSettings {
                restarts: 6,
                local_steps: 20,
                ..Default::default()
            },
            gp: FitOptions {
                restarts: 2,
                max_iterations: 60,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    struct FailAt {
        inner: SyntheticEvaluator,
        fail_at: usize,
        calls: usize,
    }

    impl Evaluator for FailAt {
        fn evaluate(
            &mut self,
            ctx: &EvalContext<'_>,
            team: &TeamAssignment,
            rng: &mut dyn RngCore,
        ) -> Result<EvaluationResult, EvalError> {
            let call = self.calls;
            self.calls += 1;
            if call == self.fail_at {
                return Err(EvalError::Failed("harness crashed".into()));
            }
            self.inner.evaluate(ctx, team, rng)
        }
    }

    #[test]
    fn config_defaults_and_toml() {
        let c = RunConfig::from_toml_str(
            "seed = 7\n[evaluator]\nkind = \"synthetic\"\nquantize = true\n",
        )
        .unwrap();
        assert_eq!((c.n_init, c.n_iterations, c.q, c.seed), (15, 15, 1, 7));
        match c.evaluator {
            EvaluatorSpec::Synthetic(p) => assert!(p.quantize),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::from_toml_str("n_init = 1")
            .unwrap()
            .validate()
            .is_err());
        assert!(RunConfig::from_toml_str("q = 2")
            .unwrap()
            .validate()
            .is_err());
        assert!(RunConfig::from_toml_str("bogus = 2").is_err());
    }

    #[test]
    fn records_and_invariants() {
        let pool = ModelPool::bundled();
        let mut opt = Optimizer::new(small_config(3), pool.clone()).unwrap();
        opt.initialize().unwrap();
        assert_eq!(opt.history().len(), 4);
        let r = opt.reference_point().unwrap();
        let mut last_hv = hypervolume(&opt.history().objectives(), &r);
        for expected in 5..=7 {
            opt.step().unwrap();
            assert_eq!(opt.history().len(), expected);
            let hv = hypervolume(&opt.history().objectives(), &r);
            assert!(hv >= last_hv);
            last_hv = hv;
        }
        for rec in &opt.history().records {
            for (&m, row) in rec.team.iter().zip(&rec.features) {
                assert_eq!(row.as_slice(), pool.normalized_row(m));
            }
            if rec.phase == Phase::Bo {
                let x = ContinuousConfiguration::new(rec.proposal.clone().unwrap(), 3, pool.dim())
                    .unwrap();
                assert_eq!(project(&pool, &x).models, rec.team);
                assert!(rec.surrogates.is_some());
            }
        }
    }

    #[test]
    fn minimal_and_zero_iteration_runs() {
        let config = RunConfig {
            n_init: 2,
            n_iterations: 0,
            ..small_config(1)
        };
        let mut opt = Optimizer::new(config, ModelPool::bundled()).unwrap();
        opt.run().unwrap();
        assert_eq!(opt.history().len(), 2);
        assert!(opt.history().records.iter().all(|r| r.phase == Phase::Init));
        opt.step().unwrap();
        assert_eq!(opt.history().len(), 3);
    }

    #[test]
    fn same_seed_same_history() {
        let run = |seed| {
            let mut opt = Optimizer::new(small_config(seed), ModelPool::bundled()).unwrap();
            opt.run().unwrap();
            opt.into_history().to_jsonl()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn failure_keeps_prefix_and_resumes() {
        let pool = ModelPool::bundled();
        let config = RunConfig {
            n_init: 15,
            n_iterations: 0,
            ..small_config(5)
        };
        let inner =
            || SyntheticEvaluator::new(&pool, &config.roles, SyntheticParams::default()).unwrap();
        let failing = FailAt {
            inner: inner(),
            fail_at: 6,
            calls: 0,
        };
        let mut opt =
            Optimizer::with_evaluator(config.clone(), pool.clone(), Box::new(failing)).unwrap();
        let err = opt.run().unwrap_err();
        assert!(matches!(err, OptimizerError::Evaluation { index: 6, .. }));
        assert_eq!(opt.history().len(), 6);

        let partial = opt.into_history();
        let mut resumed =
            Optimizer::with_evaluator(config.clone(), pool.clone(), Box::new(inner()))
                .unwrap()
                .with_history(partial)
                .unwrap();
        resumed.run().unwrap();
        let mut straight = Optimizer::new(config, pool).unwrap();
        straight.run().unwrap();
        assert_eq!(resumed.history(), straight.history());
    }

    #[test]
    fn history_from_other_pool_rejected() {
        let pool = ModelPool::bundled();
        let mut opt = Optimizer::new(small_config(2), pool).unwrap();
        opt.initialize().unwrap();
        let mut history = opt.into_history();
        history.records[0].assignment[0] = "someone.else".into();
        assert!(matches!(
            Optimizer::new(small_config(2), ModelPool::bundled())
                .unwrap()
                .with_history(history),
            Err(OptimizerError::Mismatch(_))
        ));
    }
}
