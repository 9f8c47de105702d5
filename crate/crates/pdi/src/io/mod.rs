//! User surface: experiment configuration, CSV ingestion, run artifacts, and
//! report emission.

pub mod config;
pub mod csv;
pub mod report;
pub mod runner;

pub use config::{CsvSourceConfig, DatasetSource, ExperimentConfig, PartitionConfig, SweepConfig};
pub use csv::{CsvSchemaOptions, RejectReport, ingest_csv};
pub use report::{ReportFormat, emit_report};
pub use runner::{RunSummary, run_experiment};

/// Version stamp carried by every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
