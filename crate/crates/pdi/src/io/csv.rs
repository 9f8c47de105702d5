//! CSV ingestion of annotation tables.
//!
//! Required columns: an instance id, a human rating column (cells may be
//! empty for uncollected labels), at least one `llm_*` proxy column, and the
//! demographic columns declared in the schema options. Ratings are
//! normalized onto [0,1] at ingestion. Malformed rows are collected into a
//! rejects report with 1-based data row numbers; the run aborts when more
//! than 1% of rows are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::model::{
    AnnotationRecord, Dataset, DemographicProfile, RatingScale, normalize_rating,
};

fn default_instance_col() -> String {
    "instance_id".into()
}

fn default_rating_col() -> String {
    "human_rating".into()
}

fn default_llm_prefix() -> String {
    "llm_".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchemaOptions {
    #[serde(default = "default_instance_col")]
    pub instance_col: String,
    #[serde(default = "default_rating_col")]
    pub rating_col: String,
    /// Columns starting with this prefix become LLM variants, named by the
    /// remainder (`llm_zero_shot` → `zero_shot`).
    #[serde(default = "default_llm_prefix")]
    pub llm_prefix: String,
    /// Demographic axis name → source column name.
    pub demographics: BTreeMap<String, String>,
    pub scale: RatingScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_col: Option<String>,
}

impl Default for CsvSchemaOptions {
    fn default() -> Self {
        Self {
            instance_col: default_instance_col(),
            rating_col: default_rating_col(),
            llm_prefix: default_llm_prefix(),
            demographics: BTreeMap::new(),
            scale: RatingScale::Range { min: 1, max: 5 },
            text_col: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number, matching the source file (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RejectReport {
    pub rejected: Vec<RejectedRow>,
    pub total_rows: usize,
}

impl RejectReport {
    pub fn reject_fraction(&self) -> f64 {
        if self.total_rows == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / self.total_rows as f64
        }
    }
}

const MAX_REJECT_FRACTION: f64 = 0.01;

pub fn ingest_csv(path: &Path, options: &CsvSchemaOptions) -> Result<(Dataset, RejectReport)> {
    options.scale.validate()?;
    if options.demographics.is_empty() {
        return Err(PdiError::Schema(
            "schema options must declare at least one demographic column".into(),
        ));
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PdiError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| PdiError::Data(format!("cannot read header of {}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let instance_idx = col(&options.instance_col).ok_or_else(|| {
        PdiError::Schema(format!("missing required column `{}`", options.instance_col))
    })?;
    let rating_idx = col(&options.rating_col).ok_or_else(|| {
        PdiError::Schema(format!("missing required column `{}`", options.rating_col))
    })?;
    let text_idx = match &options.text_col {
        Some(name) => Some(col(name).ok_or_else(|| {
            PdiError::Schema(format!("missing declared text column `{name}`"))
        })?),
        None => None,
    };

    let llm_cols: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&options.llm_prefix) && h.len() > options.llm_prefix.len())
        .map(|(i, h)| (h[options.llm_prefix.len()..].to_string(), i))
        .collect();
    if llm_cols.is_empty() {
        return Err(PdiError::Schema(format!(
            "no LLM annotation columns found (expected prefix `{}`)",
            options.llm_prefix
        )));
    }

    let demo_cols: Vec<(String, usize)> = options
        .demographics
        .iter()
        .map(|(axis, column)| {
            col(column)
                .map(|i| (axis.clone(), i))
                .ok_or_else(|| PdiError::Schema(format!("missing demographic column `{column}`")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut report = RejectReport::default();
    for (i, row) in reader.records().enumerate() {
        let row_number = i + 1;
        report.total_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RejectedRow { row: row_number, reason: e.to_string() });
                continue;
            }
        };
        match parse_row(&row, instance_idx, rating_idx, text_idx, &llm_cols, &demo_cols, options) {
            Ok(record) => records.push(record),
            Err(reason) => report.rejected.push(RejectedRow { row: row_number, reason }),
        }
    }

    if report.reject_fraction() > MAX_REJECT_FRACTION {
        return Err(PdiError::Data(format!(
            "{} of {} rows rejected (> {:.0}%); first: row {} ({})",
            report.rejected.len(),
            report.total_rows,
            MAX_REJECT_FRACTION * 100.0,
            report.rejected[0].row,
            report.rejected[0].reason
        )));
    }
    if records.is_empty() {
        return Err(PdiError::Data(format!("{} contains no usable rows", path.display())));
    }

    let dataset = Dataset {
        records,
        rating_scale: options.scale,
        metadata: [("source".to_string(), path.display().to_string())].into_iter().collect(),
    };
    Ok((dataset, report))
}

fn parse_row(
    row: &csv::StringRecord,
    instance_idx: usize,
    rating_idx: usize,
    text_idx: Option<usize>,
    llm_cols: &[(String, usize)],
    demo_cols: &[(String, usize)],
    options: &CsvSchemaOptions,
) -> std::result::Result<AnnotationRecord, String> {
    let field = |idx: usize| row.get(idx).unwrap_or("");

    let instance_id = field(instance_idx).to_string();
    if instance_id.is_empty() {
        return Err("empty instance id".into());
    }

    let raw_rating = field(rating_idx);
    let human_label = if raw_rating.is_empty() {
        None
    } else {
        let raw: f64 = raw_rating
            .parse()
            .map_err(|_| format!("unparseable rating `{raw_rating}`"))?;
        Some(normalize_rating(raw, options.scale).map_err(|e| e.to_string())?)
    };

    let mut llm_labels = indexmap::IndexMap::new();
    for (variant, idx) in llm_cols {
        let raw_text = field(*idx);
        if raw_text.is_empty() {
            return Err(format!("missing llm value in column `{}{variant}`", options.llm_prefix));
        }
        let raw: f64 = raw_text
            .parse()
            .map_err(|_| format!("unparseable llm value `{raw_text}` for `{variant}`"))?;
        let value = normalize_rating(raw, options.scale).map_err(|e| e.to_string())?;
        llm_labels.insert(variant.clone(), value);
    }

    let mut demo_pairs = Vec::new();
    for (axis, idx) in demo_cols {
        let value = field(*idx);
        if value.is_empty() {
            return Err(format!("missing demographic value for axis `{axis}`"));
        }
        demo_pairs.push((axis.clone(), value.to_string()));
    }
    let demographics =
        DemographicProfile::from_pairs(demo_pairs).map_err(|e| e.to_string())?;

    Ok(AnnotationRecord {
        instance_id,
        text: text_idx.map(|i| field(i).to_string()).filter(|t| !t.is_empty()),
        human_label,
        llm_labels,
        demographics,
        pi: None,
        xi: None,
    })
}
