//! Predicts the squared proxy error (Ĥ − H)² from demographic features.
//!
//! The predictor is pluggable behind a fit/predict contract. Features are
//! purely categorical, so the default is a smoothed cross-classification
//! table (`CellMean`): the Bayes-optimal family here, with per-axis marginal
//! and global fallbacks for unseen cells. `BoostedStumps` (squared-loss
//! gradient boosting with depth-1 trees over one-hot features) is provided
//! as the heavier alternative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::model::DemographicProfile;

/// One training observation: an annotator profile and the realized squared
/// proxy error, which lies in [0,1] on the unit label scale.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub demographics: DemographicProfile,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    CellMean,
    BoostedStumps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Pseudo-count κ pulling each cell mean toward the global mean; keeps
    /// singleton cells from producing extreme allocation weights.
    pub smoothing: f64,
    pub rounds: usize,
    pub learning_rate: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::CellMean,
            smoothing: 1.0,
            rounds: 50,
            learning_rate: 0.1,
        }
    }
}

/// Ordered axis names with their sorted category vocabularies, fixed at fit
/// time. Sorting makes the fitted model independent of training-pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    axes: Vec<(String, Vec<String>)>,
}

impl FeatureSchema {
    pub fn from_profiles<'a, I>(profiles: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DemographicProfile>,
    {
        let mut iter = profiles.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| PdiError::Input("cannot build a feature schema from zero profiles".into()))?;
        let axis_names: Vec<String> = first.axes().map(str::to_string).collect();
        if axis_names.is_empty() {
            return Err(PdiError::Schema("profiles carry no demographic axes".into()));
        }
        let mut vocab: Vec<std::collections::BTreeSet<String>> =
            vec![Default::default(); axis_names.len()];
        for profile in std::iter::once(first).chain(iter) {
            for (i, axis) in axis_names.iter().enumerate() {
                let cat = profile.get(axis).ok_or_else(|| {
                    PdiError::Schema(format!("profile missing axis `{axis}`"))
                })?;
                vocab[i].insert(cat.to_string());
            }
        }
        Ok(Self {
            axes: axis_names
                .into_iter()
                .zip(vocab.into_iter().map(|s| s.into_iter().collect()))
                .collect(),
        })
    }

    pub fn axes(&self) -> impl Iterator<Item = &str> {
        self.axes.iter().map(|(a, _)| a.as_str())
    }

    /// Total one-hot width (sum of vocabulary sizes).
    pub fn width(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).sum()
    }

    /// Feature index of (axis i, category), if the category was seen at fit.
    fn feature_index(&self, axis_idx: usize, category: &str) -> Option<usize> {
        let offset: usize = self.axes[..axis_idx].iter().map(|(_, v)| v.len()).sum();
        self.axes[axis_idx]
            .1
            .iter()
            .position(|c| c == category)
            .map(|p| offset + p)
    }

    /// Category labels of `profile` in schema axis order.
    fn cell_key(&self, profile: &DemographicProfile) -> Result<Vec<String>> {
        self.axes
            .iter()
            .map(|(axis, _)| {
                profile
                    .get(axis)
                    .map(str::to_string)
                    .ok_or_else(|| PdiError::Schema(format!("profile missing axis `{axis}`")))
            })
            .collect()
    }
}

/// One-hot encoding of a profile. Unseen categories leave their axis block
/// all-zero and are reported so downstream fallbacks can trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    pub values: Vec<f64>,
    pub unseen_axes: Vec<String>,
}

pub fn encode_features(profile: &DemographicProfile, schema: &FeatureSchema) -> Result<EncodedFeatures> {
    let mut values = vec![0.0; schema.width()];
    let mut unseen_axes = Vec::new();
    for (i, (axis, _)) in schema.axes.iter().enumerate() {
        let cat = profile
            .get(axis)
            .ok_or_else(|| PdiError::Schema(format!("profile missing axis `{axis}`")))?;
        match schema.feature_index(i, cat) {
            Some(f) => values[f] = 1.0,
            None => unseen_axes.push(axis.clone()),
        }
    }
    Ok(EncodedFeatures { values, unseen_axes })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stump {
    feature: usize,
    /// Leaf value when the feature is absent / present, already scaled by
    /// the learning rate.
    absent: f64,
    present: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum ModelState {
    CellMean {
        /// Smoothed mean per fully crossed cell, keyed by categories in
        /// schema axis order.
        cells: BTreeMap<Vec<String>, f64>,
        /// Smoothed mean per (axis index, category).
        marginals: BTreeMap<(usize, String), f64>,
        global: f64,
    },
    Stumps { base: f64, stumps: Vec<Stump> },
}

/// A fitted squared-error model; immutable and safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorModel {
    pub schema: FeatureSchema,
    pub kind: PredictorKind,
    pub training_size: usize,
    state: ModelState,
}

pub fn fit_error_model(pairs: &[TrainingPair], config: &PredictorConfig) -> Result<ErrorModel> {
    if pairs.is_empty() {
        return Err(PdiError::Input("cannot fit an error model on zero pairs".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if !p.target.is_finite() || p.target < 0.0 {
            return Err(PdiError::Input(format!(
                "training pair {i}: target {} must be a finite nonnegative squared error",
                p.target
            )));
        }
    }
    let schema = FeatureSchema::from_profiles(pairs.iter().map(|p| &p.demographics))?;
    let state = match config.kind {
        PredictorKind::CellMean => fit_cell_mean(pairs, &schema, config.smoothing)?,
        PredictorKind::BoostedStumps => {
            if pairs.len() < 5 {
                return Err(PdiError::Input(format!(
                    "boosted stumps need at least 5 training pairs, got {}",
                    pairs.len()
                )));
            }
            fit_stumps(pairs, &schema, config)?
        }
    };
    Ok(ErrorModel {
        schema,
        kind: config.kind,
        training_size: pairs.len(),
        state,
    })
}

fn fit_cell_mean(pairs: &[TrainingPair], schema: &FeatureSchema, kappa: f64) -> Result<ModelState> {
    let global = pairs.iter().map(|p| p.target).sum::<f64>() / pairs.len() as f64;

    let mut cell_stats: BTreeMap<Vec<String>, (f64, usize)> = BTreeMap::new();
    let mut marginal_stats: BTreeMap<(usize, String), (f64, usize)> = BTreeMap::new();
    for p in pairs {
        let key = schema.cell_key(&p.demographics)?;
        for (i, cat) in key.iter().enumerate() {
            let entry = marginal_stats.entry((i, cat.clone())).or_insert((0.0, 0));
            entry.0 += p.target;
            entry.1 += 1;
        }
        let entry = cell_stats.entry(key).or_insert((0.0, 0));
        entry.0 += p.target;
        entry.1 += 1;
    }

    let smooth = |(sum, count): (f64, usize)| (sum + kappa * global) / (count as f64 + kappa);
    Ok(ModelState::CellMean {
        cells: cell_stats.into_iter().map(|(k, s)| (k, smooth(s))).collect(),
        marginals: marginal_stats.into_iter().map(|(k, s)| (k, smooth(s))).collect(),
        global,
    })
}

fn fit_stumps(pairs: &[TrainingPair], schema: &FeatureSchema, config: &PredictorConfig) -> Result<ModelState> {
    let encoded: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| encode_features(&p.demographics, schema).map(|e| e.values))
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = pairs.iter().map(|p| p.target).collect();
    let n = targets.len() as f64;
    let base = targets.iter().sum::<f64>() / n;

    let mut predictions = vec![base; targets.len()];
    let mut stumps = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let residuals: Vec<f64> = targets
            .iter()
            .zip(&predictions)
            .map(|(t, p)| t - p)
            .collect();

        // Best single split by residual SSE; ties broken by feature index.
        let mut best: Option<(usize, f64, f64, f64)> = None; // (feature, sse, absent, present)
        for f in 0..schema.width() {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
            for (row, &r) in encoded.iter().zip(&residuals) {
                if row[f] == 1.0 {
                    s1 += r;
                    n1 += 1;
                } else {
                    s0 += r;
                    n0 += 1;
                }
            }
            let m1 = if n1 > 0 { s1 / n1 as f64 } else { 0.0 };
            let m0 = if n0 > 0 { s0 / n0 as f64 } else { 0.0 };
            let sse: f64 = encoded
                .iter()
                .zip(&residuals)
                .map(|(row, &r)| {
                    let m = if row[f] == 1.0 { m1 } else { m0 };
                    (r - m) * (r - m)
                })
                .sum();
            if best.as_ref().is_none_or(|(_, b, _, _)| sse < *b) {
                best = Some((f, sse, m0, m1));
            }
        }
        let (feature, _, m0, m1) = best.expect("schema width >= 1");
        let stump = Stump {
            feature,
            absent: config.learning_rate * m0,
            present: config.learning_rate * m1,
        };
        for (pred, row) in predictions.iter_mut().zip(&encoded) {
            *pred += if row[stump.feature] == 1.0 { stump.present } else { stump.absent };
        }
        stumps.push(stump);
    }
    Ok(ModelState::Stumps { base, stumps })
}

/// Predict the squared proxy error for a profile. Always finite and ≥ 0.
///
/// Cell-mean fallback chain: exact cell → mean of the observed per-axis
/// marginals → global training mean.
pub fn predict_error(model: &ErrorModel, profile: &DemographicProfile) -> Result<f64> {
    match &model.state {
        ModelState::CellMean { cells, marginals, global } => {
            let key = model.schema.cell_key(profile)?;
            if let Some(&v) = cells.get(&key) {
                return Ok(v);
            }
            let observed: Vec<f64> = key
                .iter()
                .enumerate()
                .filter_map(|(i, cat)| marginals.get(&(i, cat.clone())).copied())
                .collect();
            if observed.is_empty() {
                Ok(*global)
            } else {
                Ok(observed.iter().sum::<f64>() / observed.len() as f64)
            }
        }
        ModelState::Stumps { base, stumps } => {
            let enc = encode_features(profile, &model.schema)?;
            let score = stumps.iter().fold(*base, |acc, s| {
                acc + if enc.values[s.feature] == 1.0 { s.present } else { s.absent }
            });
            Ok(score.max(0.0))
        }
    }
}

impl ErrorModel {
    pub fn predict(&self, profile: &DemographicProfile) -> Result<f64> {
        predict_error(self, profile)
    }
}
