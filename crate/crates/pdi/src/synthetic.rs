//! Controlled synthetic data: two demographic groups with configurable
//! sizes, label base rates, and group-specific proxy flip rates, plus the
//! four robustness sweeps (budget, burn-in, error gap, group skew).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::model::{AnnotationRecord, Dataset, DemographicProfile, RatingScale};
use crate::sampling::SamplingConfig;

/// Variant key carried by synthetic proxy labels.
pub const SYNTH_VARIANT: &str = "synthetic";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Total number of records.
    pub n: usize,
    /// Share of the smaller group (g2) in (0,1).
    pub small_group_share: f64,
    /// P(Y=1) in the larger group.
    pub base_rate_g1: f64,
    /// P(Y=1) in the smaller group.
    pub base_rate_g2: f64,
    /// Proxy flip probability in the larger group, in [0, 0.5].
    pub err_g1: f64,
    /// Proxy flip probability in the smaller group, in [0, 0.5].
    pub err_g2: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            small_group_share: 0.10,
            base_rate_g1: 0.44,
            base_rate_g2: 0.32,
            err_g1: 0.1,
            err_g2: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(PdiError::Config(format!("synthetic n must be >= 2, got {}", self.n)));
        }
        if !(self.small_group_share > 0.0 && self.small_group_share < 1.0) {
            return Err(PdiError::Config(format!(
                "small_group_share {} outside (0,1)",
                self.small_group_share
            )));
        }
        let (n_small, n_large) = self.group_sizes();
        if n_small == 0 || n_large == 0 {
            return Err(PdiError::Config(format!(
                "share {} leaves an empty group at n={}",
                self.small_group_share, self.n
            )));
        }
        for (name, rate) in [("base_rate_g1", self.base_rate_g1), ("base_rate_g2", self.base_rate_g2)] {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(PdiError::Config(format!("{name} {rate} outside (0,1)")));
            }
        }
        for (name, err) in [("err_g1", self.err_g1), ("err_g2", self.err_g2)] {
            if !(0.0..=0.5).contains(&err) {
                return Err(PdiError::Config(format!("{name} {err} outside [0, 0.5]")));
            }
        }
        Ok(())
    }

    /// (small, large) record counts implied by `n` and the share.
    pub fn group_sizes(&self) -> (usize, usize) {
        let n_small = (self.n as f64 * self.small_group_share).round() as usize;
        (n_small, self.n - n_small)
    }

    /// Group means the generator targets: (g1, g2) base rates.
    pub fn truth(&self) -> (f64, f64) {
        (self.base_rate_g1, self.base_rate_g2)
    }
}

/// Generate a full-information binary dataset: Y ~ Bernoulli(base rate per
/// group), proxy = Y flipped independently with the group's error rate, one
/// demographic axis `group` ∈ {g1, g2}. Deterministic given the seed; group
/// structure is identical across seeds.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (n_small, n_large) = config.group_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::with_capacity(config.n);
    let specs = [
        ("g1", n_large, config.base_rate_g1, config.err_g1),
        ("g2", n_small, config.base_rate_g2, config.err_g2),
    ];
    for (group, count, base_rate, err) in specs {
        for i in 0..count {
            let y = if rng.random::<f64>() < base_rate { 1.0 } else { 0.0 };
            let proxy = if rng.random::<f64>() < err { 1.0 - y } else { y };
            records.push(AnnotationRecord {
                instance_id: format!("{group}-{i:06}"),
                text: None,
                human_label: Some(y),
                llm_labels: [(SYNTH_VARIANT.to_string(), proxy)].into_iter().collect(),
                demographics: DemographicProfile::from_pairs([("group", group)])?,
                pi: None,
                xi: None,
            });
        }
    }
    Ok(Dataset {
        records,
        rating_scale: RatingScale::Binary,
        metadata: [("source".to_string(), "synthetic".to_string())].into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Human budget as a percentage of n.
    Budget,
    /// Absolute burn-in size.
    Burnin,
    /// Extra proxy error on the smaller group: err_g2 = err_g1 + gap.
    ErrorGap,
    /// Share of the smaller group.
    GroupShare,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Budget => "budget",
            SweepAxis::Burnin => "burnin",
            SweepAxis::ErrorGap => "error_gap",
            SweepAxis::GroupShare => "group_share",
        })
    }
}

/// One fully resolved grid point of a robustness sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub value: f64,
    pub synth: SynthConfig,
    pub sampling: SamplingConfig,
}

/// Expand sweep values into fully resolved configurations; all parameters
/// other than the swept one come from the base configs. Values are sorted
/// and deduplicated; out-of-domain values are rejected by name.
pub fn make_sweep_grid(
    axis: SweepAxis,
    values: &[f64],
    base_synth: &SynthConfig,
    base_sampling: &SamplingConfig,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(PdiError::Config("sweep values must be nonempty".into()));
    }
    base_synth.validate()?;
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(PdiError::Config("sweep values must be finite".into()));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();

    sorted
        .into_iter()
        .map(|value| {
            let mut synth = *base_synth;
            let mut sampling = *base_sampling;
            match axis {
                SweepAxis::Budget => {
                    if !(value > 0.0 && value <= 100.0) {
                        return Err(PdiError::Config(format!(
                            "budget sweep value {value} outside (0, 100] percent"
                        )));
                    }
                    sampling.n_human = ((synth.n as f64 * value / 100.0).round() as usize).max(1);
                    if sampling.n_burnin > sampling.n_human {
                        return Err(PdiError::Config(format!(
                            "budget sweep value {value}% gives n_human {} below burn-in {}",
                            sampling.n_human, sampling.n_burnin
                        )));
                    }
                }
                SweepAxis::Burnin => {
                    let burnin = value.round() as i64;
                    if burnin < 1 || burnin as usize > sampling.n_human {
                        return Err(PdiError::Config(format!(
                            "burn-in sweep value {value} outside 1..=n_human ({})",
                            sampling.n_human
                        )));
                    }
                    sampling.n_burnin = burnin as usize;
                }
                SweepAxis::ErrorGap => {
                    let err_g2 = synth.err_g1 + value;
                    if value < 0.0 || err_g2 > 0.5 {
                        return Err(PdiError::Config(format!(
                            "error gap {value} pushes err_g2 to {err_g2}, outside [0, 0.5]"
                        )));
                    }
                    synth.err_g2 = err_g2;
                }
                SweepAxis::GroupShare => {
                    synth.small_group_share = value;
                    synth.validate().map_err(|e| {
                        PdiError::Config(format!("group share sweep value {value}: {e}"))
                    })?;
                }
            }
            Ok(SweepPoint { label: format!("{axis}={value}"), value, synth, sampling })
        })
        .collect()
}
