//! Group-mean estimators.
//!
//! Four methods share this module: the classical human-only Hájek estimator,
//! the LLM-only proxy mean, and the rectified proxy+human estimator used by
//! both uniform-sampling (`ppi`) and adaptive-sampling (`pdi`) designs. The
//! rectified estimator is
//!
//! ```text
//! θ̂(λ) = λ · mean(Ĥ over all group records)
//!       + Σ_{ξ=1} (H_i − λĤ_i)/π_i  /  Σ_{ξ=1} 1/π_i
//! ```
//!
//! with λ chosen to minimize variance (clipped to [0,1]) and confidence
//! intervals from a percentile bootstrap that re-tunes λ in every resample.
//! `ppi` and `pdi` run the identical estimator; they differ only in the
//! sampling trace produced upstream, so under a uniform trace and equal
//! seeds their outputs are bit-identical.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::model::{AnnotationRecord, Dataset, PartitionResult};
use crate::numeric;
use crate::seeds::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Classical,
    LlmOnly,
    Ppi,
    Pdi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Classical, Method::LlmOnly, Method::Ppi, Method::Pdi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::LlmOnly => "llm_only",
            Method::Ppi => "ppi",
            Method::Pdi => "pdi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PdiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Method::Classical),
            "llm_only" => Ok(Method::LlmOnly),
            "ppi" => Ok(Method::Ppi),
            "pdi" => Ok(Method::Pdi),
            other => Err(PdiError::Config(format!(
                "unknown method `{other}` (expected classical|llm_only|ppi|pdi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Nominal miscoverage; intervals target level 1 − α.
    pub alpha: f64,
    /// Bootstrap resamples per confidence interval.
    pub bootstrap: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { alpha: 0.1, bootstrap: 1000 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PdiError::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.bootstrap == 0 {
            return Err(PdiError::Config("bootstrap count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Point estimate with interval for one group under one method.
///
/// `lambda` is the proxy weight: 0 for the classical estimator, 1 for the
/// LLM-only estimator, the tuned value for the rectified methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub group: String,
    pub method: Method,
    pub theta_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub lambda: f64,
    /// True when λ tuning hit a degenerate input and fell back to 0.
    pub lambda_fallback: bool,
    pub n_labeled: usize,
    pub n_total: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupOutcome {
    Ok { estimate: GroupEstimate },
    Failed { group: String, error: String },
}

impl GroupOutcome {
    pub fn group(&self) -> &str {
        match self {
            GroupOutcome::Ok { estimate } => &estimate.group,
            GroupOutcome::Failed { group, .. } => group,
        }
    }

    pub fn estimate(&self) -> Option<&GroupEstimate> {
        match self {
            GroupOutcome::Ok { estimate } => Some(estimate),
            GroupOutcome::Failed { .. } => None,
        }
    }
}

/// Per-group estimates covering one partition; one entry per group, failing
/// groups carried as statuses rather than aborting the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateVector {
    pub method: Method,
    pub variant: String,
    pub alpha: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub groups: Vec<GroupOutcome>,
}

/// The view of one record the estimators consume.
#[derive(Debug, Clone, Copy)]
struct Row {
    proxy: f64,
    label: f64,
    pi: f64,
    labeled: bool,
}

fn extract_rows(records: &[&AnnotationRecord], variant: &str) -> Result<Vec<Row>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let proxy = *r.llm_labels.get(variant).ok_or_else(|| {
                PdiError::Schema(format!("record {i}: missing llm variant `{variant}`"))
            })?;
            let labeled = r.xi == Some(true);
            let (label, pi) = if labeled {
                let label = r.human_label.ok_or_else(|| {
                    PdiError::Data(format!("record {i}: xi=1 but human label missing"))
                })?;
                let pi = r.pi.ok_or_else(|| {
                    PdiError::Data(format!("record {i}: xi=1 but pi missing"))
                })?;
                if !(pi > 0.0 && pi <= 1.0) {
                    return Err(PdiError::Data(format!("record {i}: pi {pi} outside (0,1]")));
                }
                (label, pi)
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(Row { proxy, label, pi, labeled })
        })
        .collect()
}

/// Self-normalized inverse-probability-weighted mean over the sampled
/// records: Σ (v_i/π_i) / Σ (1/π_i) over ξ=1. Reduces to the plain mean when
/// all π are equal.
pub fn hajek_mean(records: &[(f64, f64, bool)]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(value, pi, xi) in records {
        if xi {
            if !(pi > 0.0 && pi <= 1.0) {
                return Err(PdiError::Input(format!("pi {pi} outside (0,1]")));
            }
            let w = 1.0 / pi;
            num += w * value;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(PdiError::EmptyGroup("(anonymous)".into()));
    }
    Ok(num / den)
}

fn hajek_rows(rows: &[Row], map: impl Fn(&Row) -> f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in rows {
        if r.labeled {
            let w = 1.0 / r.pi;
            num += w * map(r);
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn rectified_rows(rows: &[Row], lambda: f64) -> Option<f64> {
    let proxy_mean = rows.iter().map(|r| r.proxy).sum::<f64>() / rows.len() as f64;
    hajek_rows(rows, |r| r.label - lambda * r.proxy).map(|rect| lambda * proxy_mean + rect)
}

/// Rectified group estimate at a fixed λ: λ·mean(Ĥ over the whole group)
/// plus the Hájek mean of (H − λĤ) over the labeled records.
pub fn rectified_point_estimate(
    records: &[&AnnotationRecord],
    variant: &str,
    lambda: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(PdiError::EmptyGroup("(anonymous)".into()));
    }
    if !lambda.is_finite() {
        return Err(PdiError::Input(format!("lambda must be finite, got {lambda}")));
    }
    let rows = extract_rows(records, variant)?;
    rectified_rows(&rows, lambda).ok_or_else(|| PdiError::EmptyGroup("(anonymous)".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedLambda {
    pub value: f64,
    /// Degenerate inputs (fewer than two labeled records, constant proxies)
    /// fall back to λ = 0 and set this flag.
    pub fallback: bool,
}

fn tune_rows(rows: &[Row]) -> TunedLambda {
    let fallback = TunedLambda { value: 0.0, fallback: true };
    let n_total = rows.len();
    let labeled: Vec<&Row> = rows.iter().filter(|r| r.labeled).collect();
    let n_lab = labeled.len();
    if n_lab < 2 {
        return fallback;
    }
    let first = labeled[0].proxy;
    if labeled.iter().all(|r| r.proxy == first) {
        return fallback;
    }

    // IPW-weighted covariance of (H, Ĥ) over the labeled records.
    let w_sum: f64 = labeled.iter().map(|r| 1.0 / r.pi).sum();
    let mean_h: f64 = labeled.iter().map(|r| r.label / r.pi).sum::<f64>() / w_sum;
    let mean_proxy: f64 = labeled.iter().map(|r| r.proxy / r.pi).sum::<f64>() / w_sum;
    let cov: f64 = labeled
        .iter()
        .map(|r| (r.label - mean_h) * (r.proxy - mean_proxy) / r.pi)
        .sum::<f64>()
        / w_sum;

    // Proxy variance over the whole group (labels known for everyone).
    let all_mean = rows.iter().map(|r| r.proxy).sum::<f64>() / n_total as f64;
    let var_all = rows
        .iter()
        .map(|r| (r.proxy - all_mean) * (r.proxy - all_mean))
        .sum::<f64>()
        / n_total as f64;
    if var_all <= 0.0 || !var_all.is_finite() {
        return fallback;
    }

    let ratio = n_lab as f64 / n_total as f64;
    let raw = cov / ((1.0 + ratio) * var_all);
    if !raw.is_finite() {
        return fallback;
    }
    TunedLambda { value: raw.clamp(0.0, 1.0), fallback: false }
}

/// Variance-minimizing proxy weight, clipped to [0,1]:
/// Ĉov_w(H, Ĥ) / ((1 + n_g/N_g) · V̂ar(Ĥ over all group records)).
pub fn tune_lambda(records: &[&AnnotationRecord], variant: &str) -> Result<TunedLambda> {
    let rows = extract_rows(records, variant)?;
    Ok(tune_rows(&rows))
}

const RESAMPLE_RETRY_CAP: usize = 100;

/// Percentile bootstrap over i.i.d. record resamples. Each resample keeps the
/// records' (Ĥ, H, π, ξ) tuples and, when `retune` is set, re-tunes λ before
/// recomputing the rectified estimate; otherwise λ is fixed at 0 (the
/// classical estimator). Resamples with zero labeled records are redrawn up
/// to a retry cap. Deterministic given the seed.
fn bootstrap_rows(
    rows: &[Row],
    group: &str,
    alpha: f64,
    b: usize,
    seed: u64,
    retune: bool,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PdiError::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if b == 0 {
        return Err(PdiError::Config("bootstrap count must be at least 1".into()));
    }
    if !rows.iter().any(|r| r.labeled) {
        return Err(PdiError::EmptyGroup(group.to_string()));
    }
    let n = rows.len();
    let mut stats: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[tag::BOOTSTRAP, rep as u64]));
            let mut resample: Vec<Row> = Vec::with_capacity(n);
            for attempt in 0.. {
                if attempt >= RESAMPLE_RETRY_CAP {
                    return Err(PdiError::DegenerateGroup(
                        group.to_string(),
                        format!("no labeled records after {RESAMPLE_RETRY_CAP} resample attempts"),
                    ));
                }
                resample.clear();
                resample.extend((0..n).map(|_| rows[rng.random_range(0..n)]));
                if resample.iter().any(|r| r.labeled) {
                    break;
                }
            }
            let lambda = if retune { tune_rows(&resample).value } else { 0.0 };
            Ok(rectified_rows(&resample, lambda).expect("resample has a labeled record"))
        })
        .collect::<Result<_>>()?;
    stats.sort_by(|a, b| a.total_cmp(b));
    numeric::percentile_interval(&stats, alpha)
}

/// Bootstrap confidence interval for the tuned rectified estimator.
pub fn bootstrap_ci(
    records: &[&AnnotationRecord],
    variant: &str,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(PdiError::EmptyGroup("(anonymous)".into()));
    }
    let rows = extract_rows(records, variant)?;
    bootstrap_rows(&rows, "(anonymous)", alpha, b, seed, true)
}

fn rectified_estimate(
    rows: &[Row],
    group: &str,
    method: Method,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<GroupEstimate> {
    let n_total = rows.len();
    let n_labeled = rows.iter().filter(|r| r.labeled).count();
    if n_labeled == 0 {
        return Err(PdiError::EmptyGroup(group.to_string()));
    }
    let tuned = tune_rows(rows);
    let theta_hat = rectified_rows(rows, tuned.value).expect("labeled record present");
    let (ci_lower, ci_upper) = bootstrap_rows(rows, group, alpha, b, seed, true)?;
    Ok(GroupEstimate {
        group: group.to_string(),
        method,
        theta_hat,
        ci_lower,
        ci_upper,
        lambda: tuned.value,
        lambda_fallback: tuned.fallback,
        n_labeled,
        n_total,
        alpha,
    })
}

/// Proxy-only baseline: treats Ĥ as ground truth. Point estimate is the
/// plain proxy mean; the interval is the normal approximation
/// mean ± z₁₋α/₂ · sd/√N over the whole group. Consumes no human labels.
pub fn llm_only_estimate(
    records: &[&AnnotationRecord],
    group: &str,
    variant: &str,
    alpha: f64,
) -> Result<GroupEstimate> {
    if records.is_empty() {
        return Err(PdiError::EmptyGroup(group.to_string()));
    }
    let rows = extract_rows(records, variant)?;
    let proxies: Vec<f64> = rows.iter().map(|r| r.proxy).collect();
    let n = proxies.len();
    let mean = numeric::mean(&proxies);
    let sd = numeric::population_variance(&proxies).sqrt();
    let z = numeric::normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * sd / (n as f64).sqrt();
    Ok(GroupEstimate {
        group: group.to_string(),
        method: Method::LlmOnly,
        theta_hat: mean,
        ci_lower: mean - half,
        ci_upper: mean + half,
        lambda: 1.0,
        lambda_fallback: false,
        n_labeled: 0,
        n_total: n,
        alpha,
    })
}

/// Human-only baseline: Hájek mean of the collected labels with a bootstrap
/// interval under the same resampling contract as the rectified methods but
/// λ fixed to 0.
pub fn classical_human_estimate(
    records: &[&AnnotationRecord],
    group: &str,
    variant: &str,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<GroupEstimate> {
    if records.is_empty() {
        return Err(PdiError::EmptyGroup(group.to_string()));
    }
    let rows = extract_rows(records, variant)?;
    let n_labeled = rows.iter().filter(|r| r.labeled).count();
    let theta_hat = hajek_rows(&rows, |r| r.label)
        .ok_or_else(|| PdiError::EmptyGroup(group.to_string()))?;
    let (ci_lower, ci_upper) = bootstrap_rows(&rows, group, alpha, b, seed, false)?;
    Ok(GroupEstimate {
        group: group.to_string(),
        method: Method::Classical,
        theta_hat,
        ci_lower,
        ci_upper,
        lambda: 0.0,
        lambda_fallback: false,
        n_labeled,
        n_total: rows.len(),
        alpha,
    })
}

/// Apply the per-group estimator for `method` to every group of the
/// partition. A failing group is recorded in its outcome slot without
/// aborting the others.
pub fn estimate_groups(
    dataset: &Dataset,
    partition: &PartitionResult,
    method: Method,
    variant: &str,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<EstimateVector> {
    config.validate()?;
    if !dataset.has_variant(variant) {
        return Err(PdiError::Schema(format!(
            "dataset has no llm variant `{variant}` on every record"
        )));
    }
    let k = partition.partition.k();
    let mut grouped: Vec<Vec<&AnnotationRecord>> = vec![Vec::new(); k];
    for (record, &g) in dataset.records.iter().zip(&partition.membership) {
        grouped[g].push(record);
    }

    let groups = grouped
        .iter()
        .enumerate()
        .map(|(g, records)| {
            let name = partition.partition.groups[g].name.clone();
            let group_seed = seeds::derive(seed, &[tag::GROUP, g as u64]);
            let result = match method {
                Method::Classical => classical_human_estimate(
                    records, &name, variant, config.alpha, config.bootstrap, group_seed,
                ),
                Method::LlmOnly => llm_only_estimate(records, &name, variant, config.alpha),
                Method::Ppi | Method::Pdi => {
                    if records.is_empty() {
                        Err(PdiError::EmptyGroup(name.clone()))
                    } else {
                        extract_rows(records, variant).and_then(|rows| {
                            rectified_estimate(
                                &rows, &name, method, config.alpha, config.bootstrap, group_seed,
                            )
                        })
                    }
                }
            };
            match result {
                Ok(estimate) => GroupOutcome::Ok { estimate },
                Err(e) => GroupOutcome::Failed { group: name, error: e.to_string() },
            }
        })
        .collect();

    Ok(EstimateVector {
        method,
        variant: variant.to_string(),
        alpha: config.alpha,
        bootstrap: config.bootstrap,
        seed,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemographicProfile, GroupingRules, RatingScale, partition_groups};
    use std::collections::BTreeMap;

    fn record(proxy: f64, label: Option<f64>, pi: Option<f64>, xi: Option<bool>) -> AnnotationRecord {
        AnnotationRecord {
            instance_id: "x".into(),
            text: None,
            human_label: label,
            llm_labels: [("v".to_string(), proxy)].into_iter().collect(),
            demographics: DemographicProfile::from_pairs([("group", "g")]).unwrap(),
            pi,
            xi,
        }
    }

    fn refs(records: &[AnnotationRecord]) -> Vec<&AnnotationRecord> {
        records.iter().collect()
    }

    #[test]
    fn hajek_equal_weights_is_plain_mean() {
        let v = hajek_mean(&[(1.0, 0.5, true), (0.0, 0.5, true)]).unwrap();
        assert_eq!(v, 0.5);
    }

    // Hand evaluation: weights (5, 1.25) → (5·1 + 1.25·0)/6.25 = 0.8.
    #[test]
    fn hajek_unequal_weights() {
        let v = hajek_mean(&[(1.0, 0.2, true), (0.0, 0.8, true)]).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn hajek_ignores_unlabeled() {
        let v = hajek_mean(&[(0.7, 0.3, true), (0.7, 0.9, true), (0.2, 0.5, false)]).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn hajek_empty_is_error() {
        assert!(matches!(
            hajek_mean(&[(0.5, 0.5, false)]),
            Err(PdiError::EmptyGroup(_))
        ));
        assert!(hajek_mean(&[(0.5, 0.0, true)]).is_err());
    }

    #[test]
    fn rectified_lambda_zero_is_exactly_hajek() {
        let records = vec![
            record(0.9, Some(0.3), Some(0.25), Some(true)),
            record(0.1, None, Some(0.25), Some(false)),
            record(0.4, Some(0.8), Some(0.5), Some(true)),
        ];
        let est = rectified_point_estimate(&refs(&records), "v", 0.0).unwrap();
        let hajek = hajek_mean(&[(0.3, 0.25, true), (0.8, 0.5, true)]).unwrap();
        assert_eq!(est.to_bits(), hajek.to_bits());
    }

    // Frozen against a direct-formula oracle:
    // proxies (0.2,0.4,0.6,0.8), H observed on records 1 and 3 with values
    // (0.3, 0.5), π = 0.5 both, λ = 0.5 → 0.45.
    #[test]
    fn rectified_matches_direct_formula_oracle() {
        let records = vec![
            record(0.2, Some(0.3), Some(0.5), Some(true)),
            record(0.4, None, Some(0.5), Some(false)),
            record(0.6, Some(0.5), Some(0.5), Some(true)),
            record(0.8, None, Some(0.5), Some(false)),
        ];
        let est = rectified_point_estimate(&refs(&records), "v", 0.5).unwrap();
        assert!((est - 0.45).abs() < 1e-12, "{est}");
    }

    #[test]
    fn rectified_full_information_telescopes_to_plain_mean() {
        let labels = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let proxies = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let records: Vec<AnnotationRecord> = labels
            .iter()
            .zip(&proxies)
            .map(|(&h, &p)| record(p, Some(h), Some(1.0), Some(true)))
            .collect();
        let plain = labels.iter().sum::<f64>() / labels.len() as f64;
        // Dyadic λ values keep the arithmetic exact.
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let est = rectified_point_estimate(&refs(&records), "v", lambda).unwrap();
            assert_eq!(est.to_bits(), plain.to_bits(), "λ={lambda}");
        }
        // Arbitrary λ telescopes up to rounding.
        for lambda in [0.3, 0.619, 0.97] {
            let est = rectified_point_estimate(&refs(&records), "v", lambda).unwrap();
            assert!((est - plain).abs() < 1e-12, "λ={lambda}");
        }
    }

    #[test]
    fn rectified_missing_variant_is_schema_error() {
        let records = vec![record(0.2, Some(0.3), Some(0.5), Some(true))];
        assert!(matches!(
            rectified_point_estimate(&refs(&records), "nope", 0.5),
            Err(PdiError::Schema(_))
        ));
    }

    #[test]
    fn tuned_lambda_near_one_for_perfect_proxy() {
        // Ĥ = H on every record, 100 of 10,000 labeled uniformly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<AnnotationRecord> = (0..10_000)
            .map(|i| {
                let h = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
                let labeled = i < 100;
                record(h, labeled.then_some(h), Some(0.01), Some(labeled))
            })
            .collect();
        let tuned = tune_lambda(&refs(&records), "v").unwrap();
        assert!(!tuned.fallback);
        assert!(tuned.value > 0.9 && tuned.value <= 1.0, "{}", tuned.value);
    }

    #[test]
    fn tuned_lambda_mean_near_zero_for_independent_proxy() {
        // Monte Carlo oracle: with Ĥ independent of H the tuned λ should
        // average out near 0 (clipping keeps it nonnegative).
        let mut total = 0.0;
        let trials = 1000;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let records: Vec<AnnotationRecord> = (0..400)
                .map(|i| {
                    let h = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                    let proxy = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                    let labeled = i < 200;
                    record(proxy, labeled.then_some(h), Some(0.5), Some(labeled))
                })
                .collect();
            total += tune_lambda(&refs(&records), "v").unwrap().value;
        }
        let mean = total / trials as f64;
        assert!(mean < 0.05, "mean tuned λ = {mean}");
    }

    #[test]
    fn tuned_lambda_constant_proxy_falls_back() {
        let records = vec![
            record(0.5, Some(0.1), Some(0.5), Some(true)),
            record(0.5, Some(0.9), Some(0.5), Some(true)),
            record(0.2, None, None, None),
        ];
        let tuned = tune_lambda(&refs(&records), "v").unwrap();
        assert_eq!(tuned.value, 0.0);
        assert!(tuned.fallback);
    }

    #[test]
    fn tuned_lambda_single_label_falls_back() {
        let records = vec![
            record(0.5, Some(0.1), Some(0.5), Some(true)),
            record(0.7, None, None, None),
        ];
        let tuned = tune_lambda(&refs(&records), "v").unwrap();
        assert!(tuned.fallback);
    }

    #[test]
    fn bootstrap_degenerate_group_gives_point_interval() {
        let records: Vec<AnnotationRecord> = (0..20)
            .map(|_| record(0.6, Some(0.6), Some(1.0), Some(true)))
            .collect();
        let (lo, hi) = bootstrap_ci(&refs(&records), "v", 0.1, 200, 3).unwrap();
        assert_eq!(lo.to_bits(), hi.to_bits());
        assert!((lo - 0.6).abs() < 1e-12, "{lo}");
    }

    #[test]
    fn bootstrap_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<AnnotationRecord> = (0..60)
            .map(|i| {
                let labeled = i % 3 == 0;
                let h = rng.random::<f64>();
                record(rng.random::<f64>(), labeled.then_some(h), Some(1.0 / 3.0), Some(labeled))
            })
            .collect();
        let a = bootstrap_ci(&refs(&records), "v", 0.1, 300, 42).unwrap();
        let b = bootstrap_ci(&refs(&records), "v", 0.1, 300, 42).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&refs(&records), "v", 0.1, 300, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bootstrap_zero_labeled_is_empty_group() {
        let records = vec![record(0.5, None, Some(0.5), Some(false))];
        assert!(matches!(
            bootstrap_ci(&refs(&records), "v", 0.1, 10, 1),
            Err(PdiError::EmptyGroup(_))
        ));
    }

    // Monte Carlo coverage oracle: nominal 90% intervals should cover the
    // true mean in roughly 87–93% of 500 independent trials. Group of 1000
    // records with ~50 labeled under uniform Poisson sampling.
    #[test]
    fn bootstrap_coverage_near_nominal() {
        let truth = 0.4;
        let trials = 500;
        let mut covered = 0;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(50_000 + t);
            let records: Vec<AnnotationRecord> = (0..1000)
                .map(|_| {
                    let h = if rng.random::<f64>() < truth { 1.0 } else { 0.0 };
                    // Noisy proxy: flips with probability 0.2.
                    let proxy = if rng.random::<f64>() < 0.2 { 1.0 - h } else { h };
                    let labeled = rng.random::<f64>() < 0.05;
                    record(proxy, labeled.then_some(h), Some(0.05), Some(labeled))
                })
                .collect();
            if !records.iter().any(|r| r.xi == Some(true)) {
                continue;
            }
            let (lo, hi) = bootstrap_ci(&refs(&records), "v", 0.1, 200, 900 + t).unwrap();
            if lo <= truth && truth <= hi {
                covered += 1;
            }
        }
        let coverage = covered as f64 / trials as f64;
        assert!(
            (0.87..=0.93).contains(&coverage),
            "coverage {coverage} outside [0.87, 0.93]"
        );
    }

    #[test]
    fn llm_only_constant_proxy_zero_width() {
        let records: Vec<AnnotationRecord> = (0..100).map(|_| record(0.4, None, None, None)).collect();
        let est = llm_only_estimate(&refs(&records), "g", "v", 0.1).unwrap();
        assert!((est.theta_hat - 0.4).abs() < 1e-12);
        assert!(est.ci_upper - est.ci_lower < 1e-9);
        assert_eq!(est.n_labeled, 0);
    }

    // Closed-form normal arithmetic: balanced {0,1} over 400 records at
    // α=0.05 → half-width 1.96·0.5/20 ≈ 0.049.
    #[test]
    fn llm_only_halfwidth_matches_closed_form() {
        let records: Vec<AnnotationRecord> = (0..400)
            .map(|i| record(if i % 2 == 0 { 1.0 } else { 0.0 }, None, None, None))
            .collect();
        let est = llm_only_estimate(&refs(&records), "g", "v", 0.05).unwrap();
        let half = (est.ci_upper - est.ci_lower) / 2.0;
        assert!((half - 0.04899909961350135).abs() < 1e-7, "{half}");
        assert!((half - 0.049).abs() < 1e-4);
    }

    #[test]
    fn llm_only_single_record_degenerate() {
        let records = vec![record(0.7, None, None, None)];
        let est = llm_only_estimate(&refs(&records), "g", "v", 0.1).unwrap();
        assert_eq!(est.theta_hat, 0.7);
        assert_eq!((est.ci_lower, est.ci_upper), (0.7, 0.7));
    }

    #[test]
    fn classical_plain_mean_under_uniform_pi() {
        let records = vec![
            record(0.1, Some(0.0), Some(0.5), Some(true)),
            record(0.2, Some(1.0), Some(0.5), Some(true)),
            record(0.3, Some(1.0), Some(0.5), Some(true)),
        ];
        let est = classical_human_estimate(&refs(&records), "g", "v", 0.1, 50, 1).unwrap();
        assert!((est.theta_hat - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(est.lambda, 0.0);
        assert_eq!(est.n_labeled, 3);
    }

    #[test]
    fn classical_hajek_arithmetic() {
        let records = vec![
            record(0.5, Some(1.0), Some(0.2), Some(true)),
            record(0.5, Some(0.0), Some(0.8), Some(true)),
        ];
        let est = classical_human_estimate(&refs(&records), "g", "v", 0.1, 50, 1).unwrap();
        assert!((est.theta_hat - 0.8).abs() < 1e-15);
    }

    #[test]
    fn classical_no_labels_is_error() {
        let records = vec![record(0.5, None, Some(0.5), Some(false))];
        assert!(matches!(
            classical_human_estimate(&refs(&records), "g", "v", 0.1, 50, 1),
            Err(PdiError::EmptyGroup(_))
        ));
    }

    fn two_group_dataset(seed: u64, n: usize, uniform_pi: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let group = if i < n / 2 { "g1" } else { "g2" };
                let h = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
                let proxy = if rng.random::<f64>() < 0.15 { 1.0 - h } else { h };
                let labeled = rng.random::<f64>() < uniform_pi;
                AnnotationRecord {
                    instance_id: format!("r{i}"),
                    text: None,
                    human_label: labeled.then_some(h),
                    llm_labels: [("v".to_string(), proxy)].into_iter().collect(),
                    demographics: DemographicProfile::from_pairs([("group", group)]).unwrap(),
                    pi: Some(uniform_pi),
                    xi: Some(labeled),
                }
            })
            .collect();
        Dataset { records, rating_scale: RatingScale::Binary, metadata: BTreeMap::new() }
    }

    #[test]
    fn estimate_groups_k1_classical_equals_corpus_hajek() {
        let ds = two_group_dataset(5, 200, 0.2);
        let part = partition_groups(&ds, "group", &GroupingRules::Single("all".into())).unwrap();
        let config = EstimatorConfig { alpha: 0.1, bootstrap: 50 };
        let vector = estimate_groups(&ds, &part, Method::Classical, "v", &config, 9).unwrap();
        assert_eq!(vector.groups.len(), 1);
        let rows: Vec<(f64, f64, bool)> = ds
            .records
            .iter()
            .map(|r| (r.human_label.unwrap_or(f64::NAN), r.pi.unwrap(), r.xi == Some(true)))
            .collect();
        let corpus = hajek_mean(&rows).unwrap();
        assert_eq!(vector.groups[0].estimate().unwrap().theta_hat.to_bits(), corpus.to_bits());
    }

    // Under an identical uniform trace and identical seeds the two rectified
    // methods are the same estimator: point estimates and CIs bit-identical.
    #[test]
    fn ppi_equals_pdi_under_uniform_pi() {
        let ds = two_group_dataset(6, 300, 0.15);
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        let config = EstimatorConfig { alpha: 0.1, bootstrap: 100 };
        let a = estimate_groups(&ds, &part, Method::Ppi, "v", &config, 77).unwrap();
        let b = estimate_groups(&ds, &part, Method::Pdi, "v", &config, 77).unwrap();
        for (x, y) in a.groups.iter().zip(&b.groups) {
            let (x, y) = (x.estimate().unwrap(), y.estimate().unwrap());
            assert_eq!(x.theta_hat.to_bits(), y.theta_hat.to_bits());
            assert_eq!(x.ci_lower.to_bits(), y.ci_lower.to_bits());
            assert_eq!(x.ci_upper.to_bits(), y.ci_upper.to_bits());
            assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
        }
    }

    #[test]
    fn estimate_groups_isolates_failing_group() {
        // g2 has no labeled records: its slot fails, g1 still estimates.
        let mut ds = two_group_dataset(8, 100, 0.3);
        for (i, r) in ds.records.iter_mut().enumerate() {
            if i >= 50 {
                r.human_label = None;
                r.xi = Some(false);
            }
        }
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        let config = EstimatorConfig { alpha: 0.1, bootstrap: 20 };
        let vector = estimate_groups(&ds, &part, Method::Ppi, "v", &config, 3).unwrap();
        assert!(vector.groups[0].estimate().is_some());
        assert!(vector.groups[1].estimate().is_none());
        assert!(matches!(&vector.groups[1], GroupOutcome::Failed { error, .. } if error.contains("empty group")));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_rows() -> impl Strategy<Value = Vec<(f64, f64, f64, bool)>> {
            // (proxy, label, pi, labeled); at least one labeled row.
            proptest::collection::vec(
                (0.0f64..=1.0, 0.0f64..=1.0, 0.05f64..=1.0, proptest::bool::ANY),
                2..40,
            )
            .prop_map(|mut rows| {
                if !rows.iter().any(|r| r.3) {
                    rows[0].3 = true;
                }
                rows
            })
        }

        fn to_records(rows: &[(f64, f64, f64, bool)]) -> Vec<AnnotationRecord> {
            rows.iter()
                .map(|&(proxy, label, pi, labeled)| {
                    record(proxy, labeled.then_some(label), Some(pi), Some(labeled))
                })
                .collect()
        }

        proptest! {
            #[test]
            fn lambda_zero_reduces_to_hajek(rows in arb_rows()) {
                let records = to_records(&rows);
                let est = rectified_point_estimate(&refs(&records), "v", 0.0).unwrap();
                let tuples: Vec<(f64, f64, bool)> =
                    rows.iter().map(|&(_, l, p, x)| (l, p, x)).collect();
                let hajek = hajek_mean(&tuples).unwrap();
                prop_assert_eq!(est.to_bits(), hajek.to_bits());
            }

            #[test]
            fn tuned_lambda_is_clipped(rows in arb_rows()) {
                let records = to_records(&rows);
                let tuned = tune_lambda(&refs(&records), "v").unwrap();
                prop_assert!((0.0..=1.0).contains(&tuned.value));
            }

            #[test]
            fn ci_bounds_are_ordered(rows in arb_rows(), seed in 0u64..500) {
                let records = to_records(&rows);
                let (lo, hi) = bootstrap_ci(&refs(&records), "v", 0.1, 60, seed).unwrap();
                prop_assert!(lo <= hi);
            }
        }
    }
}
