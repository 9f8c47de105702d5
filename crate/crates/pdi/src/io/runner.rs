//! Experiment orchestration: runs the configured trials and writes every
//! artifact (config snapshot, estimates, traces, metrics, sweep outputs)
//! under the output directory.
//!
//! Artifacts carry no timestamps and serialize through ordered containers,
//! so a rerun with the same inputs, config, and master seed is byte
//! identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::estimators::Method;
use crate::evaluation::{
    self, ExperimentOutcome, ExperimentPlan, MetricsTable, TrialDataSource,
};
use crate::io::config::{DatasetSource, ExperimentConfig, SweepConfig};
use crate::io::csv::ingest_csv;
use crate::model::{Dataset, validate_dataset};
use crate::numeric;
use crate::synthetic::{self, SweepPoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPointSummary {
    pub label: String,
    pub value: f64,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub axis: String,
    pub points: Vec<SweepPointSummary>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub root: PathBuf,
    /// Metrics of a plain run; `None` for sweep runs.
    pub metrics: Option<MetricsTable>,
    /// (axis value, metrics) per sweep point.
    pub sweep: Vec<(f64, MetricsTable)>,
    pub failure_count: usize,
}

/// Execute the configured experiment and write its artifacts. Returns an
/// error (after writing what it can) if any method produced zero successful
/// trials.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| {
        PdiError::Config(format!(
            "output directory {} is not writable: {e}",
            config.output_dir.display()
        ))
    })?;
    write_json(&config.output_dir.join("config.json"), config)?;

    match &config.sweep {
        None => {
            let (outcome, reject_note) = run_point(config, None)?;
            write_point_artifacts(&config.output_dir, config, &outcome, reject_note)?;
            let failure_count = outcome.failures.len();
            check_method_successes(config, &outcome)?;
            Ok(RunSummary {
                root: config.output_dir.clone(),
                metrics: Some(outcome.metrics),
                sweep: Vec::new(),
                failure_count,
            })
        }
        Some(sweep) => run_sweep(config, sweep),
    }
}

fn check_method_successes(config: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    for &method in &config.methods {
        if !outcome.results.iter().any(|r| r.method == method) {
            return Err(PdiError::Runtime(format!(
                "method {method} produced zero successful trials"
            )));
        }
    }
    Ok(())
}

/// Run one fully resolved configuration (a plain run, or one sweep point).
fn run_point(
    config: &ExperimentConfig,
    point: Option<&SweepPoint>,
) -> Result<(ExperimentOutcome, Option<crate::io::csv::RejectReport>)> {
    let mut rejects = None;
    let loaded: Option<(Dataset, bool)> = match &config.dataset {
        DatasetSource::Csv(source) => {
            let (dataset, report) = ingest_csv(&source.path, &source.schema)?;
            if !report.rejected.is_empty() {
                rejects = Some(report);
            }
            let validation = validate_dataset(&dataset);
            if !validation.accepted() {
                let names: Vec<&str> =
                    validation.failures().map(|c| c.name.as_str()).collect();
                return Err(PdiError::Data(format!(
                    "dataset failed validation checks: {}",
                    names.join(", ")
                )));
            }
            Some((dataset, true))
        }
        DatasetSource::Synthetic(_) => None,
    };

    let synth_override;
    let sampling = point.map_or(config.sampling, |p| p.sampling);
    let source = match (&config.dataset, point) {
        (DatasetSource::Csv(_), _) => {
            TrialDataSource::Fixed(&loaded.as_ref().expect("csv loaded").0)
        }
        (DatasetSource::Synthetic(synth), None) => {
            synth_override = *synth;
            TrialDataSource::SyntheticPerTrial(&synth_override)
        }
        (DatasetSource::Synthetic(_), Some(p)) => {
            synth_override = p.synth;
            TrialDataSource::SyntheticPerTrial(&synth_override)
        }
    };

    let rules = config.partition.rules();
    let estimator = config.estimator();
    let plan = ExperimentPlan {
        source,
        axis: &config.partition.axis,
        rules: &rules,
        methods: &config.methods,
        variant: &config.variant,
        sampling: &sampling,
        estimator: &estimator,
        predictor: &config.predictor,
        trials: config.trials,
        master_seed: config.seed,
    };
    Ok((evaluation::run_experiment_plan(&plan)?, rejects))
}

fn run_sweep(config: &ExperimentConfig, sweep: &SweepConfig) -> Result<RunSummary> {
    let DatasetSource::Synthetic(base_synth) = &config.dataset else {
        return Err(PdiError::Config("sweeps require a synthetic dataset source".into()));
    };
    let grid = synthetic::make_sweep_grid(sweep.axis, &sweep.values, base_synth, &config.sampling)?;

    let mut manifest = SweepManifest {
        schema_version: crate::io::SCHEMA_VERSION,
        axis: sweep.axis.to_string(),
        points: Vec::new(),
    };
    let mut results = Vec::new();
    let mut failure_count = 0;
    let mut zero_success: Option<PdiError> = None;
    for point in &grid {
        let dir = config.output_dir.join("sweep").join(&point.label);
        fs::create_dir_all(&dir)?;
        let (outcome, _) = run_point(config, Some(point))?;
        write_point_artifacts(&dir, config, &outcome, None)?;
        failure_count += outcome.failures.len();
        if zero_success.is_none() {
            zero_success = check_method_successes(config, &outcome).err();
        }
        manifest.points.push(SweepPointSummary {
            label: point.label.clone(),
            value: point.value,
            dir: dir.clone(),
        });
        results.push((point.value, outcome));
    }

    write_json(&config.output_dir.join("sweep.json"), &manifest)?;
    let plot_path = config
        .output_dir
        .join(format!("sweep_{}.csv", sweep.axis));
    write_sweep_plot_csv(&plot_path, &manifest.axis, &results)?;

    if let Some(err) = zero_success {
        return Err(err);
    }
    Ok(RunSummary {
        root: config.output_dir.clone(),
        metrics: None,
        sweep: results.into_iter().map(|(v, o)| (v, o.metrics)).collect(),
        failure_count,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or(String::new(), |v| v.to_string())
}

#[derive(Serialize)]
struct MetricsArtifact<'a> {
    schema_version: u32,
    master_seed: u64,
    config: &'a ExperimentConfig,
    metrics: &'a MetricsTable,
    failures: &'a [evaluation::TrialFailure],
}

fn write_point_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    rejects: Option<crate::io::csv::RejectReport>,
) -> Result<()> {
    // estimates.csv: one row per (trial, method, group).
    let mut w = csv::Writer::from_path(dir.join("estimates.csv"))?;
    w.write_record([
        "trial", "method", "group", "status", "theta_hat", "ci_lower", "ci_upper", "lambda",
        "lambda_fallback", "n_labeled", "n_total", "error",
    ])?;
    for r in &outcome.results {
        for outcome_slot in &r.estimates.groups {
            match outcome_slot.estimate() {
                Some(est) => w.write_record([
                    r.trial.to_string(),
                    r.method.to_string(),
                    est.group.clone(),
                    "ok".into(),
                    est.theta_hat.to_string(),
                    est.ci_lower.to_string(),
                    est.ci_upper.to_string(),
                    est.lambda.to_string(),
                    est.lambda_fallback.to_string(),
                    est.n_labeled.to_string(),
                    est.n_total.to_string(),
                    String::new(),
                ])?,
                None => {
                    let crate::estimators::GroupOutcome::Failed { group, error } = outcome_slot
                    else {
                        unreachable!()
                    };
                    w.write_record([
                        r.trial.to_string(),
                        r.method.to_string(),
                        group.clone(),
                        "failed".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        error.clone(),
                    ])?
                }
            }
        }
    }
    w.flush()?;

    // trial_traces.csv: per-group labeled counts per trial.
    let mut w = csv::Writer::from_path(dir.join("trial_traces.csv"))?;
    w.write_record(["trial", "method", "group", "labeled_count", "realized_total"])?;
    for r in &outcome.results {
        for (g, count) in r.labeled_per_group.iter().enumerate() {
            w.write_record([
                r.trial.to_string(),
                r.method.to_string(),
                outcome.partition.partition.groups[g].name.clone(),
                count.to_string(),
                r.realized_labeled.to_string(),
            ])?;
        }
    }
    w.flush()?;

    // metrics.csv: one row per (method, group, metric).
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["method", "group", "metric", "value"])?;
    for row in &outcome.metrics.rows {
        let cells = [
            ("coverage", row.coverage),
            ("delta_pp", row.delta_pp),
            ("mean_count", row.mean_count),
            ("ci_width_mean", row.ci_width_mean),
        ];
        for (metric, value) in cells {
            w.write_record([
                row.method.to_string(),
                row.group.clone(),
                metric.to_string(),
                fmt_opt(value),
            ])?;
        }
    }
    w.flush()?;

    write_json(
        &dir.join("metrics.json"),
        &MetricsArtifact {
            schema_version: crate::io::SCHEMA_VERSION,
            master_seed: config.seed,
            config,
            metrics: &outcome.metrics,
            failures: &outcome.failures,
        },
    )?;

    if let Some(rejects) = rejects {
        write_json(&dir.join("rejects.json"), &rejects)?;
    }
    Ok(())
}

/// Plot data: per (axis value, method, group), coverage and delta with a
/// 95% normal band of the per-trial deltas.
fn write_sweep_plot_csv(
    path: &Path,
    axis: &str,
    results: &[(f64, ExperimentOutcome)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "axis", "axis_value", "method", "group", "coverage", "delta_pp", "delta_ci_low",
        "delta_ci_high", "mean_count",
    ])?;
    for (value, outcome) in results {
        let methods: Vec<Method> = {
            let mut seen = Vec::new();
            for r in &outcome.results {
                if !seen.contains(&r.method) {
                    seen.push(r.method);
                }
            }
            seen
        };
        for &method in &methods {
            for (g, group) in outcome.partition.partition.groups.iter().enumerate() {
                // Per-trial absolute errors, in percentage points.
                let deltas: Vec<f64> = outcome
                    .results
                    .iter()
                    .filter(|r| r.method == method)
                    .filter_map(|r| {
                        r.estimates.groups[g].estimate().map(|est| {
                            (est.theta_hat - outcome.truths[r.trial][g]).abs() * 100.0
                        })
                    })
                    .collect();
                let row = outcome
                    .metrics
                    .rows
                    .iter()
                    .find(|row| row.method == method && row.group == group.name);
                let (mean, lo, hi) = if deltas.is_empty() {
                    (None, None, None)
                } else {
                    let mean = numeric::mean(&deltas);
                    let sd = numeric::population_variance(&deltas).sqrt();
                    let half = 1.959963984540054 * sd / (deltas.len() as f64).sqrt();
                    (Some(mean), Some(mean - half), Some(mean + half))
                };
                w.write_record([
                    axis.to_string(),
                    value.to_string(),
                    method.to_string(),
                    group.name.clone(),
                    fmt_opt(row.and_then(|r| r.coverage)),
                    fmt_opt(mean),
                    fmt_opt(lo),
                    fmt_opt(hi),
                    fmt_opt(row.and_then(|r| r.mean_count)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
