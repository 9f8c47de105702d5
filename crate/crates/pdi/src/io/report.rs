//! Report emission from run artifacts: nested JSON or flat CSV, plus
//! plot-data CSVs for sweep runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::evaluation::MetricsTable;
use crate::io::runner::SweepManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = PdiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(PdiError::Config(format!(
                "unknown report format `{other}` (expected json|csv)"
            ))),
        }
    }
}

/// All four metric keys are always present; a group with no data reports
/// explicit nulls plus a warning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    pub coverage: Option<f64>,
    pub delta_pp: Option<f64>,
    pub mean_count: Option<f64>,
    pub ci_width_mean: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub master_seed: u64,
    pub methods: BTreeMap<String, BTreeMap<String, GroupReport>>,
}

#[derive(Deserialize)]
struct MetricsArtifactIn {
    schema_version: u32,
    master_seed: u64,
    metrics: MetricsTable,
}

fn load_metrics(dir: &Path) -> Result<MetricsArtifactIn> {
    let path = dir.join("metrics.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| PdiError::Data(format!("cannot read {}: {e}", path.display())))?;
    let artifact: MetricsArtifactIn = serde_json::from_str(&text)
        .map_err(|e| PdiError::Data(format!("malformed {}: {e}", path.display())))?;
    Ok(artifact)
}

fn build_report(artifact: &MetricsArtifactIn) -> Report {
    let mut methods: BTreeMap<String, BTreeMap<String, GroupReport>> = BTreeMap::new();
    for row in &artifact.metrics.rows {
        methods.entry(row.method.to_string()).or_default().insert(
            row.group.clone(),
            GroupReport {
                coverage: row.coverage,
                delta_pp: row.delta_pp,
                mean_count: row.mean_count,
                ci_width_mean: row.ci_width_mean,
                warning: row.warning.clone(),
            },
        );
    }
    Report {
        schema_version: artifact.schema_version,
        master_seed: artifact.master_seed,
        methods,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_report_csv(path: &Path, metrics: &MetricsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "group", "metric", "value"])?;
    for row in &metrics.rows {
        for (metric, value) in [
            ("coverage", row.coverage),
            ("delta_pp", row.delta_pp),
            ("mean_count", row.mean_count),
            ("ci_width_mean", row.ci_width_mean),
        ] {
            w.write_record([
                row.method.to_string(),
                row.group.clone(),
                metric.to_string(),
                value.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Emit reports for a run directory. Plain runs produce `report.json` or
/// `report.csv`; sweep runs additionally copy their per-axis plot-data CSV
/// into the report name (`report_<axis>.csv`) or bundle per-point reports
/// into one JSON document.
pub fn emit_report(run_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if run_dir.join("metrics.json").exists() {
        let artifact = load_metrics(run_dir)?;
        let out = match format {
            ReportFormat::Json => {
                let path = run_dir.join("report.json");
                write_json(&path, &build_report(&artifact))?;
                path
            }
            ReportFormat::Csv => {
                let path = run_dir.join("report.csv");
                write_report_csv(&path, &artifact.metrics)?;
                path
            }
        };
        return Ok(vec![out]);
    }

    let manifest_path = run_dir.join("sweep.json");
    if manifest_path.exists() {
        let manifest: SweepManifest = serde_json::from_str(
            &fs::read_to_string(&manifest_path)
                .map_err(|e| PdiError::Data(format!("cannot read sweep manifest: {e}")))?,
        )
        .map_err(|e| PdiError::Data(format!("malformed sweep manifest: {e}")))?;
        match format {
            ReportFormat::Json => {
                #[derive(Serialize)]
                struct SweepReport {
                    schema_version: u32,
                    axis: String,
                    points: BTreeMap<String, Report>,
                }
                let mut points = BTreeMap::new();
                for point in &manifest.points {
                    let artifact = load_metrics(&point.dir)?;
                    points.insert(point.label.clone(), build_report(&artifact));
                }
                let path = run_dir.join("report.json");
                write_json(
                    &path,
                    &SweepReport {
                        schema_version: manifest.schema_version,
                        axis: manifest.axis.clone(),
                        points,
                    },
                )?;
                return Ok(vec![path]);
            }
            ReportFormat::Csv => {
                let plot = run_dir.join(format!("sweep_{}.csv", manifest.axis));
                if !plot.exists() {
                    return Err(PdiError::Data(format!(
                        "sweep plot data {} is missing",
                        plot.display()
                    )));
                }
                let path = run_dir.join(format!("report_{}.csv", manifest.axis));
                fs::copy(&plot, &path)?;
                return Ok(vec![path]);
            }
        }
    }

    Err(PdiError::Data(format!(
        "{} contains neither metrics.json nor sweep.json",
        run_dir.display()
    )))
}
