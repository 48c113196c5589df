//! `moboa`: run, resume and analyze team-assignment optimizations.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration or usage
//! error, 3 evaluator failure (partial history kept), 4 missing or corrupt
//! history.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moboa::analysis::{self, ReportOptions, Tiers};
use moboa::configuration::{model_distances, ContinuousConfiguration, RoleSet};
use moboa::evaluator::EvaluatorSpec;
use moboa::history::{HistoryError, Manifest, RunDir, RunHistory, HISTORY_FILE, MANIFEST_FILE};
use moboa::optimizer::{create_run, open_run, Optimizer, OptimizerError, ReferenceSpec, RunConfig};
use moboa::pareto::hypervolume;
use moboa::pool::ModelPool;

#[derive(Debug, Parser)]
#[command(
    name = "moboa",
    version,
    about = "Multi-objective Bayesian optimization of LLM team assignments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a fresh optimization into an output directory.
    Run(RunArgs),
    /// Continue an interrupted run.
    Resume(ResumeArgs),
    /// Write the report bundle for a run history.
    Analyze(AnalyzeArgs),
    /// Map a continuous feature vector to the nearest pool model per role.
    Project(ProjectArgs),
    /// Hypervolume of a run history.
    Hv(HvArgs),
    /// Feature importances of surrogates fitted on a run history.
    Importance(HistoryArg),
    /// Check a pool file and print its summary.
    ValidatePool(ValidatePoolArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pool file (defaults to the bundled pool).
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, env = "MOBOA_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    n_iterations: Option<usize>,
    /// synthetic | tabular:PATH | external:COMMAND
    #[arg(long)]
    evaluator: Option<String>,
    /// Output directory.
    #[arg(long, env = "MOBOA_OUT", default_value = "moboa-run")]
    out: PathBuf,
    /// Reference point as ACCURACY,COST_USD.
    #[arg(long, value_name = "A,C")]
    ref_point: Option<String>,
    /// Record every row of the tabular evaluator's table instead of optimizing.
    #[arg(long)]
    replay: bool,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Debug, Args)]
struct ResumeArgs {
    /// Run directory to continue.
    #[arg(long, env = "MOBOA_OUT", default_value = "moboa-run")]
    out: PathBuf,
    /// Refuse to resume unless the run used this pool.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Refuse to resume unless the run used this config's roles.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HistoryArg {
    /// Run directory or history file.
    history: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory or history file.
    history: PathBuf,
    /// Report directory (defaults to `report/` next to the history).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "A,C")]
    ref_point: Option<String>,
    /// Performance tier edges, comma separated.
    #[arg(long, value_name = "E0,E1,...")]
    tiers: Option<String>,
}

#[derive(Debug, Args)]
struct HvArgs {
    /// Run directory or history file.
    history: PathBuf,
    #[arg(long, value_name = "A,C")]
    ref_point: Option<String>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Pool file (defaults to the bundled pool).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Treat the vector as raw feature values rather than normalized ones.
    #[arg(long)]
    raw: bool,
    /// Comma-separated role names used to label rows.
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<String>>,
    /// One feature row per role, concatenated (commas or spaces).
    #[arg(required = true, num_args = 1.., allow_negative_numbers = true)]
    vector: Vec<String>,
}

#[derive(Debug, Args)]
struct ValidatePoolArgs {
    pool: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Evaluation(String),
    History(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Evaluation(_) => 3,
            Failure::History(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Evaluation(m)
            | Failure::History(m)
            | Failure::Internal(m) => m,
        }
    }
}

impl From<OptimizerError> for Failure {
    fn from(e: OptimizerError) -> Self {
        let m = e.to_string();
        match e {
            OptimizerError::Config(_) | OptimizerError::Pool(_) | OptimizerError::Mismatch(_) => {
                Failure::Config(m)
            }
            OptimizerError::Evaluation { .. } => Failure::Evaluation(m),
            OptimizerError::History(h) => h.into(),
            OptimizerError::Surrogate(_) => Failure::Internal(m),
        }
    }
}

impl From<HistoryError> for Failure {
    fn from(e: HistoryError) -> Self {
        let m = e.to_string();
        match e {
            HistoryError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                Failure::Internal(m)
            }
            _ => Failure::History(m),
        }
    }
}

fn parse_ref_point(text: &str) -> Result<ReferenceSpec, Failure> {
    let bad = || {
        Failure::Config(format!(
            "--ref-point expects ACCURACY,COST_USD, got `{text}`"
        ))
    };
    let (a, c) = text.split_once(',').ok_or_else(bad)?;
    let accuracy: f64 = a.trim().parse().map_err(|_| bad())?;
    let cost_usd: f64 = c.trim().parse().map_err(|_| bad())?;
    if !(accuracy.is_finite() && cost_usd.is_finite()) {
        return Err(bad());
    }
    Ok(ReferenceSpec { accuracy, cost_usd })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(Failure::from),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(pool) = args.pool {
        config.pool = Some(pool);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n_init {
        config.n_init = n;
    }
    if let Some(n) = args.n_iterations {
        config.n_iterations = n;
    }
    if let Some(e) = &args.evaluator {
        config.evaluator = EvaluatorSpec::parse(e).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(r) = &args.ref_point {
        config.reference = Some(parse_ref_point(r)?);
    }
    if args.replay {
        config.replay = true;
    }
    if args.run_id.is_some() {
        config.run_id = args.run_id;
    }
    let pool = config.load_pool()?;
    let dir = RunDir::new(&args.out);
    let opt = create_run(config, pool, &dir)?;
    finish(opt, &dir)
}

fn finish(mut opt: Optimizer, dir: &RunDir) -> Result<(), Failure> {
    opt.run()?;
    let front_path = dir.root.join("front.csv");
    analysis::write_front(&front_path, opt.history())
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let front = analysis::front_rows(opt.history());
    println!(
        "{} evaluations, {} on the front; history {}",
        opt.history().len(),
        front.len(),
        dir.history().display()
    );
    for row in &front {
        println!(
            "  {:.6}  ${:.6}  {}",
            row.accuracy,
            row.cost_usd,
            row.assignment.join(" / ")
        );
    }
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> Result<(), Failure> {
    let dir = RunDir::new(&args.out);
    if !dir.manifest().exists() {
        return Err(Failure::History(format!(
            "{}: no run manifest found",
            dir.manifest().display()
        )));
    }
    let pool = args
        .pool
        .as_deref()
        .map(ModelPool::load)
        .transpose()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let roles = match &args.config {
        Some(p) => load_config(Some(p))?.roles,
        None => RoleSet::new(Manifest::load(dir.manifest())?.roles)
            .map_err(|e| Failure::History(e.to_string()))?,
    };
    let expected = pool.as_ref().map(|p| (p, &roles));
    let opt = open_run(&dir, expected)?;
    let before = opt.history().len();
    eprintln!("resuming {} from record {before}", dir.root.display());
    finish(opt, &dir)
}

/// Accepts a run directory or a history file; returns the history path and
/// the manifest next to it, if any.
fn locate(path: &Path) -> Result<(PathBuf, Option<Manifest>), Failure> {
    let history = if path.is_dir() {
        path.join(HISTORY_FILE)
    } else {
        path.to_path_buf()
    };
    if !history.exists() {
        return Err(Failure::History(format!(
            "{}: history not found",
            history.display()
        )));
    }
    let manifest_path = history
        .parent()
        .unwrap_or(Path::new("."))
        .join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(Manifest::load(&manifest_path)?)
    } else {
        None
    };
    Ok((history, manifest))
}

fn load_history(path: &Path) -> Result<(PathBuf, RunHistory, Option<Manifest>), Failure> {
    let (history_path, manifest) = locate(path)?;
    let history = RunHistory::load(&history_path)?;
    if history.is_empty() {
        return Err(Failure::History(format!(
            "{}: history is empty",
            history_path.display()
        )));
    }
    Ok((history_path, history, manifest))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let (history_path, history, manifest) = load_history(&args.history)?;
    let mut options = ReportOptions::default();
    if let Some(r) = &args.ref_point {
        options.reference = Some(parse_ref_point(r)?.point());
    }
    if let Some(t) = &args.tiers {
        let edges: Result<Vec<f64>, _> = t.split(',').map(|s| s.trim().parse::<f64>()).collect();
        options.tiers = edges.ok().and_then(Tiers::new).ok_or_else(|| {
            Failure::Config(format!("--tiers expects increasing numbers, got `{t}`"))
        })?;
    }
    let out = args.out.unwrap_or_else(|| {
        history_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("report")
    });
    let summary = analysis::write_report(&out, &history, manifest.as_ref(), &options)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    println!(
        "{} records, {} non-dominated; report in {}",
        summary.records,
        summary.front.len(),
        out.display()
    );
    for row in &summary.front {
        println!(
            "  {:.6}  ${:.6}  {}",
            row.accuracy,
            row.cost_usd,
            row.assignment.join(" / ")
        );
    }
    Ok(())
}

fn cmd_hv(args: HvArgs) -> Result<(), Failure> {
    let (_, history, manifest) = load_history(&args.history)?;
    let mut options = ReportOptions::default();
    if let Some(r) = &args.ref_point {
        options.reference = Some(parse_ref_point(r)?.point());
    }
    let summary = analysis::build_report(&history, manifest.as_ref(), &options)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let r = summary.reference_point;
    println!("reference_point\t{}\t{}", r.accuracy, -r.neg_cost);
    println!("hypervolume\t{}", hypervolume(&history.objectives(), &r));
    println!("front_size\t{}", summary.front.len());
    Ok(())
}

fn cmd_importance(args: HistoryArg) -> Result<(), Failure> {
    let (_, history, manifest) = load_history(&args.history)?;
    if manifest.is_none() {
        return Err(Failure::History(
            "importance needs the run manifest next to the history".into(),
        ));
    }
    let summary = analysis::build_report(&history, manifest.as_ref(), &ReportOptions::default())
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let report = summary
        .importance
        .ok_or_else(|| Failure::History("too few records to fit surrogates".into()))?;
    println!("role\tperformance\tcost");
    for a in &report.agents {
        println!("{}\t{:.6}\t{:.6}", a.role, a.performance, a.cost);
    }
    println!();
    println!("role\tfeature\tperformance\tcost");
    for f in &report.features {
        println!(
            "{}\t{}\t{:.6}\t{:.6}",
            f.role, f.feature, f.performance, f.cost
        );
    }
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<(), Failure> {
    let pool = match &args.pool {
        Some(p) => ModelPool::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => ModelPool::bundled(),
    };
    let values: Vec<f64> = args
        .vector
        .iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Config(format!("not a number: `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    let d = pool.dim();
    if values.is_empty() || !values.len().is_multiple_of(d) {
        return Err(Failure::Config(format!(
            "vector has {} values; expected a multiple of the pool's {d} features",
            values.len()
        )));
    }
    let rows = values.len() / d;
    let mut unit = Vec::with_capacity(values.len());
    for row in values.chunks(d) {
        if args.raw {
            unit.extend(
                pool.normalize(row)
                    .map_err(|e| Failure::Config(e.to_string()))?,
            );
        } else {
            unit.extend_from_slice(row);
        }
    }
    let x =
        ContinuousConfiguration::new(unit, rows, d).map_err(|e| Failure::Config(e.to_string()))?;
    let roles = match args.roles {
        Some(r) => RoleSet::new(r)
            .map_err(|e| Failure::Config(e.to_string()))?
            .names()
            .to_vec(),
        None if rows == RoleSet::default().len() => RoleSet::default().names().to_vec(),
        None => (0..rows).map(|i| format!("role{i}")).collect(),
    };
    if roles.len() != rows {
        return Err(Failure::Config(format!(
            "{} role names for {rows} rows",
            roles.len()
        )));
    }
    println!("role\tmodel\tdistance");
    for (r, role) in roles.iter().enumerate() {
        let dist = model_distances(&pool, x.row(r, d));
        let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..dist.len()).filter(|&m| dist[m] == best).collect();
        let mut line = format!("{role}\t{}\t{best}", pool.model(tied[0]).id);
        if tied.len() > 1 {
            let others: Vec<&str> = tied[1..]
                .iter()
                .map(|&m| pool.model(m).id.as_str())
                .collect();
            line.push_str(&format!(
                "\t(tie with {}; lower index chosen)",
                others.join(", ")
            ));
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_validate_pool(args: ValidatePoolArgs) -> Result<(), Failure> {
    let pool = ModelPool::load(&args.pool).map_err(|e| Failure::Config(e.to_string()))?;
    let names: Vec<&str> = pool.schema().names().collect();
    println!("models\t{}", pool.len());
    println!("features\t{}", names.join(","));
    let constant: Vec<&str> = names
        .iter()
        .zip(pool.constant_dims())
        .filter(|(_, c)| *c)
        .map(|(n, _)| *n)
        .collect();
    if !constant.is_empty() {
        println!("constant\t{}", constant.join(","));
    }
    println!("hash\t{}", pool.content_hash());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Resume(a) => cmd_resume(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Project(a) => cmd_project(a),
        Command::Hv(a) => cmd_hv(a),
        Command::Importance(a) => cmd_importance(a),
        Command::ValidatePool(a) => cmd_validate_pool(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
