//! The on-disk report bundle: CSV tables plus one JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::{
    assignment_frequency, hypervolume_trace, importance_report, phase_stats, tier_cost_evolution,
    FrequencyTable, HvPoint, ImportanceReport, PhaseStats, SummaryStats, TierEvolution, Tiers,
};
use crate::gp::FitOptions;
use crate::history::{HistoryRecord, Manifest, Phase, RunHistory};
use crate::optimizer::{fit_surrogates, RunConfig};
use crate::pareto::ReferencePoint;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("history is empty")]
    EmptyHistory,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub tiers: Tiers,
    /// Overrides the run's reference point.
    pub reference: Option<ReferencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontRow {
    pub index: usize,
    pub phase: Phase,
    pub iteration: usize,
    pub assignment: Vec<String>,
    pub accuracy: f64,
    pub cost_usd: f64,
    /// Later records with the same objective values.
    pub repeats: Vec<usize>,
}

impl FrontRow {
    fn of(r: &HistoryRecord) -> Self {
        FrontRow {
            index: r.index,
            phase: r.phase,
            iteration: r.iteration,
            assignment: r.assignment.values().cloned().collect(),
            accuracy: r.accuracy,
            cost_usd: r.cost_usd,
            repeats: Vec::new(),
        }
    }
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub run_id: Option<String>,
    pub records: usize,
    pub n_init: usize,
    pub roles: Vec<String>,
    pub reference_point: ReferencePoint,
    /// Non-dominated records, highest accuracy first.
    pub front: Vec<FrontRow>,
    pub dominated: Vec<usize>,
    pub phase_stats: PhaseStats,
    pub hypervolume: Vec<HvPoint>,
    pub tiers: Vec<TierEvolution>,
    pub frequency_all: FrequencyTable,
    pub frequency_init: FrequencyTable,
    pub frequency_bo: FrequencyTable,
    pub importance: Option<ImportanceReport>,
}

/// Computes every report over `history`, using `manifest` (when present) for
/// the run configuration, pool feature names and model order.
pub fn build_report(
    history: &RunHistory,
    manifest: Option<&Manifest>,
    options: &ReportOptions,
) -> Result<ReportSummary, ReportError> {
    if history.is_empty() {
        return Err(ReportError::EmptyHistory);
    }
    let config: Option<RunConfig> =
        manifest.and_then(|m| serde_json::from_value(m.config.clone()).ok());
    let n_init = config.as_ref().map_or_else(
        || history.count(Phase::Init),
        |c| c.n_init.min(history.len()),
    );
    let reference = options
        .reference
        .or_else(|| config.as_ref().and_then(|c| c.reference).map(|r| r.point()))
        .unwrap_or_else(|| {
            let max_init = history.records[..n_init]
                .iter()
                .map(|r| r.cost_usd)
                .fold(0.0, f64::max);
            ReferencePoint::from_max_cost(max_init)
        });

    let roles = history.roles();
    let front = history.front();
    let dominated = (0..history.len())
        .filter(|&i| !front.contains_index(i))
        .collect();

    let model_order: Vec<String> = manifest.map_or_else(Vec::new, |m| {
        m.pool.models.iter().map(|e| e.id.clone()).collect()
    });

    let importance = match manifest {
        Some(m) if history.len() >= 2 => {
            let names: Vec<String> = m.pool.schema.names().map(str::to_string).collect();
            let (gp, seed) = config
                .as_ref()
                .map_or((FitOptions::default(), 0), |c| (c.gp, c.seed));
            let fitted = fit_surrogates(history, &gp, seed, history.len()).ok();
            fitted
                .filter(|s| s.accuracy.dim() == names.len() * roles.len())
                .map(|s| importance_report(&s.accuracy, &s.neg_cost, &names, &roles))
        }
        _ => None,
    };

    Ok(ReportSummary {
        run_id: manifest.map(|m| m.run_id.clone()),
        records: history.len(),
        n_init,
        roles: roles.clone(),
        reference_point: reference,
        front: front_rows(history),
        dominated,
        phase_stats: phase_stats(history),
        hypervolume: hypervolume_trace(history, n_init, &reference),
        tiers: tier_cost_evolution(history, &options.tiers),
        frequency_all: assignment_frequency(history, None, &model_order),
        frequency_init: assignment_frequency(history, Some(Phase::Init), &model_order),
        frequency_bo: assignment_frequency(history, Some(Phase::Bo), &model_order),
        importance,
    })
}

struct Bundle {
    dir: PathBuf,
}

impl Bundle {
    fn csv(
        &self,
        name: &str,
        header: &[String],
        rows: Vec<Vec<String>>,
    ) -> Result<(), ReportError> {
        let path = self.dir.join(name);
        let wrap = |source| ReportError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(wrap)?;
        w.write_record(header).map_err(wrap)?;
        for row in rows {
            w.write_record(&row).map_err(wrap)?;
        }
        w.flush().map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_header(roles: &[String], extra: &[&str]) -> Vec<String> {
    let mut h = header(&["index", "phase", "iteration"]);
    h.extend(roles.iter().cloned());
    h.extend(header(&["accuracy", "cost_usd"]));
    h.extend(header(extra));
    h
}

fn record_row(r: &FrontRow) -> Vec<String> {
    let mut row = vec![
        r.index.to_string(),
        r.phase.as_str().to_string(),
        r.iteration.to_string(),
    ];
    row.extend(r.assignment.iter().cloned());
    row.push(r.accuracy.to_string());
    row.push(r.cost_usd.to_string());
    row
}

fn front_row(r: &FrontRow) -> Vec<String> {
    let mut row = record_row(r);
    row.push(
        r.repeats
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    );
    row
}

/// One row per non-dominated objective vector, highest accuracy first. The
/// earliest record producing a point represents it.
pub fn front_rows(history: &RunHistory) -> Vec<FrontRow> {
    let front = history.front();
    let mut rows: Vec<FrontRow> = front
        .provenance
        .iter()
        .map(|p| {
            let first = *p.iter().min().expect("front point has a source");
            let mut row = FrontRow::of(&history.records[first]);
            row.repeats = p.iter().copied().filter(|&i| i != first).collect();
            row.repeats.sort_unstable();
            row
        })
        .collect();
    rows.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.index.cmp(&b.index))
    });
    rows
}

/// Writes only the front table.
pub fn write_front(path: impl AsRef<Path>, history: &RunHistory) -> Result<(), ReportError> {
    let path = path.as_ref();
    let b = Bundle {
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("front.csv");
    let rows = front_rows(history).iter().map(front_row).collect();
    b.csv(name, &record_header(&history.roles(), &["repeats"]), rows)
}

/// Builds the report and writes the bundle into `dir`, creating it if needed.
pub fn write_report(
    dir: impl AsRef<Path>,
    history: &RunHistory,
    manifest: Option<&Manifest>,
    options: &ReportOptions,
) -> Result<ReportSummary, ReportError> {
    let dir = dir.as_ref();
    let summary = build_report(history, manifest, options)?;
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let b = Bundle {
        dir: dir.to_path_buf(),
    };
    let roles = &summary.roles;

    b.csv(
        "front.csv",
        &record_header(roles, &["repeats"]),
        summary.front.iter().map(front_row).collect(),
    )?;
    b.csv(
        "points.csv",
        &record_header(roles, &["status"]),
        history
            .records
            .iter()
            .map(|r| {
                let mut row = record_row(&FrontRow::of(r));
                let status = if summary.dominated.contains(&r.index) {
                    "dominated"
                } else {
                    "pareto"
                };
                row.push(status.to_string());
                row
            })
            .collect(),
    )?;

    let stats_row = |c: &super::ObjectiveComparison| {
        let mut row = vec![c.objective.clone()];
        for s in [c.init, c.bo] {
            let s: Option<SummaryStats> = s;
            row.push(s.map(|s| s.count.to_string()).unwrap_or_else(|| "0".into()));
            row.extend(
                [
                    s.map(|s| s.mean),
                    s.map(|s| s.std),
                    s.map(|s| s.min),
                    s.map(|s| s.max),
                ]
                .map(opt),
            );
        }
        row.extend(
            [
                c.test.map(|t| t.t),
                c.test.map(|t| t.df),
                c.test.map(|t| t.p),
                c.cohens_d,
                c.percent_change,
            ]
            .map(opt),
        );
        row
    };
    b.csv(
        "phase_stats.csv",
        &header(&[
            "objective",
            "init_count",
            "init_mean",
            "init_std",
            "init_min",
            "init_max",
            "bo_count",
            "bo_mean",
            "bo_std",
            "bo_min",
            "bo_max",
            "t_statistic",
            "df",
            "p_value",
            "cohens_d",
            "percent_change",
        ]),
        vec![
            stats_row(&summary.phase_stats.accuracy),
            stats_row(&summary.phase_stats.cost_usd),
        ],
    )?;

    b.csv(
        "hv_trace.csv",
        &header(&["evaluations", "iteration", "hypervolume"]),
        summary
            .hypervolume
            .iter()
            .map(|p| {
                vec![
                    p.evaluations.to_string(),
                    p.iteration.to_string(),
                    p.hypervolume.to_string(),
                ]
            })
            .collect(),
    )?;

    b.csv(
        "tiers.csv",
        &header(&[
            "tier",
            "records",
            "first_cost",
            "best_cost",
            "improvement_percent",
        ]),
        summary
            .tiers
            .iter()
            .map(|t| {
                vec![
                    t.tier.clone(),
                    t.records.to_string(),
                    t.first_cost.to_string(),
                    t.best_cost.to_string(),
                    t.improvement_percent.to_string(),
                ]
            })
            .collect(),
    )?;

    let mut freq_header = header(&["phase", "model"]);
    freq_header.extend(roles.iter().cloned());
    let mut freq_rows = Vec::new();
    for (label, table) in [
        ("all", &summary.frequency_all),
        ("init", &summary.frequency_init),
        ("bo", &summary.frequency_bo),
    ] {
        for (model, counts) in table.models.iter().zip(&table.counts) {
            let mut row = vec![label.to_string(), model.clone()];
            row.extend(counts.iter().map(|c| c.to_string()));
            freq_rows.push(row);
        }
    }
    b.csv("frequency.csv", &freq_header, freq_rows)?;

    if let Some(imp) = &summary.importance {
        b.csv(
            "importance.csv",
            &header(&["role", "feature", "performance", "cost"]),
            imp.features
                .iter()
                .map(|f| {
                    vec![
                        f.role.clone(),
                        f.feature.clone(),
                        f.performance.to_string(),
                        f.cost.to_string(),
                    ]
                })
                .collect(),
        )?;
        b.csv(
            "agent_importance.csv",
            &header(&["role", "performance", "cost"]),
            imp.agents
                .iter()
                .map(|a| {
                    vec![
                        a.role.clone(),
                        a.performance.to_string(),
                        a.cost.to_string(),
                    ]
                })
                .collect(),
        )?;
    }

    // long format: evaluation, series, value
    let mut long = Vec::new();
    for r in &history.records {
        let e = (r.index + 1).to_string();
        long.push(vec![e.clone(), "accuracy".into(), r.accuracy.to_string()]);
        long.push(vec![e, "cost_usd".into(), r.cost_usd.to_string()]);
    }
    for p in &summary.hypervolume {
        long.push(vec![
            p.evaluations.to_string(),
            "hypervolume".into(),
            p.hypervolume.to_string(),
        ]);
    }
    for t in &summary.tiers {
        for (i, v) in t.running_min.iter().enumerate() {
            if let Some(v) = v {
                long.push(vec![
                    (i + 1).to_string(),
                    format!("tier_min_cost:{}", t.tier),
                    v.to_string(),
                ]);
            }
        }
    }
    b.csv(
        "plot_long.csv",
        &header(&["evaluation", "series", "value"]),
        long,
    )?;

    let path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&summary).expect("report serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(summary)
}
