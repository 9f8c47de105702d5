//! Experiment configuration: a single JSON document, with every key
//! overridable from CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::estimators::{EstimatorConfig, Method};
use crate::io::csv::CsvSchemaOptions;
use crate::model::{GroupDef, GroupingRules};
use crate::predictor::PredictorConfig;
use crate::sampling::SamplingConfig;
use crate::synthetic::{SweepAxis, SynthConfig, SYNTH_VARIANT};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSourceConfig {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: CsvSchemaOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv(CsvSourceConfig),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub axis: String,
    /// Explicit buckets; omitted means one group per observed category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<Vec<GroupDef>>,
}

impl PartitionConfig {
    pub fn rules(&self) -> GroupingRules {
        match &self.buckets {
            Some(defs) => GroupingRules::Buckets(defs.clone()),
            None => GroupingRules::PerCategory,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn default_schema_version() -> u32 {
    crate::io::SCHEMA_VERSION
}

fn default_alpha() -> f64 {
    0.1
}

fn default_bootstrap() -> usize {
    1000
}

fn default_trials() -> usize {
    20
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pdi-run")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSource,
    pub partition: PartitionConfig,
    pub methods: Vec<Method>,
    pub variant: String,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    /// Synthetic two-group experiment with the default budget and both
    /// rectified methods; the config-less CLI quickstart.
    fn default() -> Self {
        Self {
            schema_version: crate::io::SCHEMA_VERSION,
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            partition: PartitionConfig { axis: "group".into(), buckets: None },
            methods: vec![Method::Ppi, Method::Pdi],
            variant: SYNTH_VARIANT.into(),
            sampling: SamplingConfig::default(),
            alpha: default_alpha(),
            bootstrap: default_bootstrap(),
            trials: default_trials(),
            seed: 0,
            output_dir: default_output_dir(),
            predictor: PredictorConfig::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PdiError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| PdiError::Config(format!("invalid config {}: {e}", path.display())))?;
        if config.schema_version != crate::io::SCHEMA_VERSION {
            return Err(PdiError::Config(format!(
                "unsupported config schema_version {} (expected {})",
                config.schema_version,
                crate::io::SCHEMA_VERSION
            )));
        }
        Ok(config)
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig { alpha: self.alpha, bootstrap: self.bootstrap }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(PdiError::Config("at least one method is required".into()));
        }
        if self.trials == 0 {
            return Err(PdiError::Config("trials must be at least 1".into()));
        }
        self.estimator().validate()?;
        if self.variant.is_empty() {
            return Err(PdiError::Config("variant must be nonempty".into()));
        }
        if let DatasetSource::Synthetic(synth) = &self.dataset {
            synth.validate()?;
        }
        if self.sweep.is_some() && !matches!(self.dataset, DatasetSource::Synthetic(_)) {
            return Err(PdiError::Config(
                "sweeps require a synthetic dataset source".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let config = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.variant, config.variant);
        assert_eq!(back.trials, config.trials);
        assert_eq!(
            serde_json::to_string(&back).unwrap(),
            serde_json::to_string(&config).unwrap()
        );
    }

    #[test]
    fn sweep_on_csv_source_rejected() {
        let config = ExperimentConfig {
            dataset: DatasetSource::Csv(CsvSourceConfig {
                path: "x.csv".into(),
                schema: CsvSchemaOptions::default(),
            }),
            sweep: Some(SweepConfig { axis: SweepAxis::Budget, values: vec![10.0] }),
            ..Default::default()
        };
        assert!(matches!(config.validate(), Err(PdiError::Config(_))));
    }
}
