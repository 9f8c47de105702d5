//! Multi-trial evaluation harness: ground truth, per-trial runs with strict
//! label masking, coverage/delta aggregation, budget-allocation tables, and
//! the descriptive chi-squared test.
//!
//! Trials are independent given their derived seeds and run concurrently;
//! aggregation is a deterministic reduction independent of completion order.
//! Per-trial seeds derive from the master seed so methods compared within a
//! trial share sampling randomness where the designs allow (the uniform
//! baseline and the adaptive burn-in consume the same draw stream).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::estimators::{
    self, EstimateVector, EstimatorConfig, Method,
};
use crate::model::{Dataset, GroupingRules, PartitionResult, RatingScale, denormalize_rating, partition_groups};
use crate::numeric;
use crate::predictor::PredictorConfig;
use crate::sampling::{self, SamplingConfig, SamplingTrace};
use crate::seeds::{self, tag};
use crate::synthetic::{SynthConfig, generate_synthetic};

/// How masked (uncollected) human labels are represented. `Remove` is the
/// production behavior; `Poison` plants a sentinel that corrupts any
/// computation that illegally reads a masked label, which the leakage checks
/// exploit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Remove,
    Poison(f64),
}

/// Copy a dataset, overwriting each record's sampling state from the trace
/// and hiding human labels outside the collected set.
pub fn mask_unsampled(dataset: &Dataset, trace: &SamplingTrace, mode: MaskMode) -> Dataset {
    let mut masked = dataset.clone();
    for (record, entry) in masked.records.iter_mut().zip(&trace.entries) {
        record.pi = Some(entry.pi);
        record.xi = Some(entry.sampled);
        if !entry.sampled {
            record.human_label = match mode {
                MaskMode::Remove => None,
                MaskMode::Poison(v) => Some(v),
            };
        }
    }
    masked
}

/// True group means on the unit scale, computed from a full-information
/// dataset. Any missing human label is an error: truth requires full labels.
pub fn compute_ground_truth(dataset: &Dataset, partition: &PartitionResult) -> Result<Vec<f64>> {
    let k = partition.partition.k();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (idx, (record, &g)) in dataset.records.iter().zip(&partition.membership).enumerate() {
        let h = record.human_label.ok_or_else(|| {
            PdiError::Data(format!(
                "record {idx} has no human label; ground truth requires a fully labeled dataset"
            ))
        })?;
        sums[g] += h;
        counts[g] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect())
}

/// Everything a single trial needs besides its method and seed.
#[derive(Clone, Copy)]
pub struct TrialContext<'a> {
    pub dataset: &'a Dataset,
    pub partition: &'a PartitionResult,
    pub variant: &'a str,
    pub sampling: &'a SamplingConfig,
    pub estimator: &'a EstimatorConfig,
    pub predictor: &'a PredictorConfig,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub estimates: EstimateVector,
    /// Labeled count per partition group.
    pub labeled_per_group: Vec<usize>,
    pub realized_labeled: usize,
    /// Per-record collection flags, for budget-allocation tables over
    /// arbitrary partitions.
    pub sampled: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub method: Method,
    pub error: String,
}

/// Run one trial of one method: draw the method's sampling design, mask
/// labels outside the trace, and estimate every group. LLM-only consumes no
/// human labels at all.
pub fn run_trial(ctx: &TrialContext, method: Method, trial: usize, trial_seed: u64) -> Result<TrialResult> {
    run_trial_masked(ctx, method, trial, trial_seed, MaskMode::Remove)
}

/// [`run_trial`] with an explicit mask representation; the poisoned mode
/// exists for leakage instrumentation and must produce bit-identical
/// estimates to `Remove`.
pub fn run_trial_masked(
    ctx: &TrialContext,
    method: Method,
    trial: usize,
    trial_seed: u64,
    mode: MaskMode,
) -> Result<TrialResult> {
    let n = ctx.dataset.len();
    let k = ctx.partition.partition.k();
    let sampling_seed = seeds::derive(trial_seed, &[tag::SAMPLING]);
    let estimation_seed = seeds::derive(trial_seed, &[tag::ESTIMATION]);

    let trace = match method {
        Method::LlmOnly => None,
        Method::Classical | Method::Ppi => Some(sampling::uniform_sample(
            ctx.dataset,
            ctx.sampling.n_human,
            sampling_seed,
        )?),
        Method::Pdi => {
            let mut oracle = sampling::DatasetOracle::new(ctx.dataset);
            Some(sampling::run_adaptive_collection(
                ctx.dataset,
                ctx.sampling,
                ctx.predictor,
                ctx.variant,
                &mut oracle,
                sampling_seed,
            )?)
        }
    };

    let (estimates, labeled_per_group, realized, sampled) = match &trace {
        Some(trace) => {
            let masked = mask_unsampled(ctx.dataset, trace, mode);
            let estimates = estimators::estimate_groups(
                &masked,
                ctx.partition,
                method,
                ctx.variant,
                ctx.estimator,
                estimation_seed,
            )?;
            let counts: Vec<usize> = (0..k)
                .map(|g| trace.labeled_in_group(&ctx.partition.membership, g))
                .collect();
            (estimates, counts, trace.realized_labeled, trace.sampled_flags())
        }
        None => {
            let estimates = estimators::estimate_groups(
                ctx.dataset,
                ctx.partition,
                method,
                ctx.variant,
                ctx.estimator,
                estimation_seed,
            )?;
            (estimates, vec![0; k], 0, vec![false; n])
        }
    };

    Ok(TrialResult {
        trial,
        method,
        seed: trial_seed,
        estimates,
        labeled_per_group,
        realized_labeled: realized,
        sampled,
    })
}

fn coverage_impl<'a>(
    trials: &[TrialResult],
    k: usize,
    truth_for: impl Fn(usize) -> &'a [f64],
) -> Result<Vec<f64>> {
    if trials.is_empty() {
        return Err(PdiError::Input("coverage needs at least one trial".into()));
    }
    let mut covered = vec![0usize; k];
    for (i, trial) in trials.iter().enumerate() {
        let truth = truth_for(i);
        if truth.len() != k || trial.estimates.groups.len() != k {
            return Err(PdiError::Input(format!(
                "group mismatch: partition has {k} groups, trial {} has {}, truth has {}",
                trial.trial,
                trial.estimates.groups.len(),
                truth.len()
            )));
        }
        for (g, outcome) in trial.estimates.groups.iter().enumerate() {
            if let Some(est) = outcome.estimate() {
                if est.ci_lower <= truth[g] && truth[g] <= est.ci_upper {
                    covered[g] += 1;
                }
            }
        }
    }
    let t = trials.len() as f64;
    Ok(covered.into_iter().map(|c| c as f64 / t).collect())
}

/// Fraction of trials whose interval contains the true group mean, per
/// group. Trials whose group estimate failed count as not covering.
pub fn aggregate_coverage(trials: &[TrialResult], truth: &[f64]) -> Result<Vec<f64>> {
    coverage_impl(trials, truth.len(), |_| truth)
}

/// Coverage against per-trial truths (regenerated-dataset experiments).
pub fn aggregate_coverage_per_trial(trials: &[TrialResult], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    if trials.len() != truths.len() {
        return Err(PdiError::Input(format!(
            "{} trials but {} truth vectors",
            trials.len(),
            truths.len()
        )));
    }
    let k = truths.first().map_or(0, Vec::len);
    coverage_impl(trials, k, |i| &truths[i])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSummary {
    /// Mean |θ̂ − θ*| per group, in percentage points; `None` when no trial
    /// produced an estimate for the group.
    pub per_group: Vec<Option<f64>>,
    /// Unweighted mean over the groups with data.
    pub avg: Option<f64>,
    /// Trials contributing per group.
    pub trials_used: Vec<usize>,
}

fn delta_impl<'a>(
    trials: &[TrialResult],
    k: usize,
    truth_for: impl Fn(usize) -> &'a [f64],
) -> Result<DeltaSummary> {
    if trials.is_empty() {
        return Err(PdiError::Input("delta needs at least one trial".into()));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (i, trial) in trials.iter().enumerate() {
        let truth = truth_for(i);
        if truth.len() != k || trial.estimates.groups.len() != k {
            return Err(PdiError::Input("group mismatch in delta aggregation".into()));
        }
        for (g, outcome) in trial.estimates.groups.iter().enumerate() {
            if let Some(est) = outcome.estimate() {
                sums[g] += (est.theta_hat - truth[g]).abs() * 100.0;
                counts[g] += 1;
            }
        }
    }
    let per_group: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let available: Vec<f64> = per_group.iter().flatten().copied().collect();
    let avg = (!available.is_empty()).then(|| numeric::mean(&available));
    Ok(DeltaSummary { per_group, avg, trials_used: counts })
}

/// Mean absolute estimation error per group in percentage points, plus the
/// unweighted average across groups.
pub fn aggregate_delta(trials: &[TrialResult], truth: &[f64]) -> Result<DeltaSummary> {
    delta_impl(trials, truth.len(), |_| truth)
}

pub fn aggregate_delta_per_trial(trials: &[TrialResult], truths: &[Vec<f64>]) -> Result<DeltaSummary> {
    if trials.len() != truths.len() {
        return Err(PdiError::Input(format!(
            "{} trials but {} truth vectors",
            trials.len(),
            truths.len()
        )));
    }
    let k = truths.first().map_or(0, Vec::len);
    delta_impl(trials, k, |i| &truths[i])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountRow {
    pub axis: String,
    pub group: String,
    pub mean_count: f64,
}

/// Mean number of collected human annotations per group, for any set of
/// partitions over the same records (budget-allocation tables).
pub fn sampling_count_table(
    trials: &[TrialResult],
    partitions: &[(&str, &PartitionResult)],
) -> Vec<CountRow> {
    let t = trials.len().max(1) as f64;
    let mut rows = Vec::new();
    for (axis, partition) in partitions {
        let k = partition.partition.k();
        let mut totals = vec![0usize; k];
        for trial in trials {
            for (&sampled, &g) in trial.sampled.iter().zip(&partition.membership) {
                if sampled {
                    totals[g] += 1;
                }
            }
        }
        for (g, total) in totals.iter().enumerate() {
            rows.push(CountRow {
                axis: axis.to_string(),
                group: partition.partition.groups[g].name.clone(),
                mean_count: *total as f64 / t,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson chi-squared test of independence on a contingency table of
/// counts. Expected counts come from the row/column margins; the p-value is
/// the upper tail of the chi-squared distribution with (r−1)(c−1) degrees of
/// freedom.
pub fn chi_squared_test(table: &[Vec<u64>]) -> Result<ChiSquared> {
    let rows = table.len();
    if rows < 2 {
        return Err(PdiError::Input("contingency table needs at least 2 rows".into()));
    }
    let cols = table[0].len();
    if cols < 2 {
        return Err(PdiError::Input("contingency table needs at least 2 columns".into()));
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(PdiError::Input("contingency table rows have unequal lengths".into()));
    }

    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..cols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let total: u64 = row_sums.iter().sum();
    if let Some(r) = row_sums.iter().position(|&s| s == 0) {
        return Err(PdiError::Input(format!("row {r} has zero margin")));
    }
    if let Some(c) = col_sums.iter().position(|&s| s == 0) {
        return Err(PdiError::Input(format!("column {c} has zero margin")));
    }

    let mut statistic = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let expected = row_sums[r] as f64 * col_sums[c] as f64 / total as f64;
            let diff = obs as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let df = (rows - 1) * (cols - 1);
    let p_value = numeric::regularized_gamma_q(df as f64 / 2.0, statistic / 2.0)?;
    Ok(ChiSquared { statistic, df, p_value })
}

/// Group × rating-level contingency table over the labeled records, with
/// rating levels taken from the dataset's scale.
pub fn rating_contingency(dataset: &Dataset, partition: &PartitionResult) -> Result<Vec<Vec<u64>>> {
    let levels: Vec<i64> = match dataset.rating_scale {
        RatingScale::Binary => vec![0, 1],
        RatingScale::Range { min, max } => (min..=max).collect(),
    };
    let k = partition.partition.k();
    let mut table = vec![vec![0u64; levels.len()]; k];
    for (record, &g) in dataset.records.iter().zip(&partition.membership) {
        let Some(h) = record.human_label else { continue };
        let raw = denormalize_rating(h, dataset.rating_scale).round() as i64;
        let Some(level_idx) = levels.iter().position(|&l| l == raw) else {
            return Err(PdiError::Data(format!(
                "label {h} denormalizes to {raw}, outside the rating scale"
            )));
        };
        table[g][level_idx] += 1;
    }
    Ok(table)
}

/// Dataset source for a multi-trial experiment. Synthetic experiments
/// regenerate the corpus each trial (with a trial-derived seed) so Monte
/// Carlo summaries target the generator's truth; fixed datasets reuse one
/// corpus and its realized group means.
pub enum TrialDataSource<'a> {
    Fixed(&'a Dataset),
    SyntheticPerTrial(&'a SynthConfig),
}

pub struct ExperimentPlan<'a> {
    pub source: TrialDataSource<'a>,
    pub axis: &'a str,
    pub rules: &'a GroupingRules,
    pub methods: &'a [Method],
    pub variant: &'a str,
    pub sampling: &'a SamplingConfig,
    pub estimator: &'a EstimatorConfig,
    pub predictor: &'a PredictorConfig,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub group: String,
    pub coverage: Option<f64>,
    pub delta_pp: Option<f64>,
    pub mean_count: Option<f64>,
    /// Mean interval width over trials, in percentage points.
    pub ci_width_mean: Option<f64>,
    pub trials_ok: usize,
    pub trials_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

/// Synthetic row name aggregating over groups (unweighted).
pub const AVG_GROUP: &str = "avg";

pub struct ExperimentOutcome {
    pub partition: PartitionResult,
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    /// Per-trial truth vectors (identical entries for fixed datasets).
    pub truths: Vec<Vec<f64>>,
    pub metrics: MetricsTable,
}

/// Run every (trial, method) cell of the plan, in parallel over trials, and
/// aggregate metrics. Per-cell failures are recorded, not fatal.
pub fn run_experiment_plan(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    if plan.trials == 0 {
        return Err(PdiError::Config("trials must be at least 1".into()));
    }
    if plan.methods.is_empty() {
        return Err(PdiError::Config("at least one method is required".into()));
    }
    plan.estimator.validate()?;

    // Template dataset fixes the partition; synthetic group structure is
    // seed-independent, so the membership applies to every trial's corpus.
    let template: Dataset;
    let (base, partition) = match plan.source {
        TrialDataSource::Fixed(ds) => {
            let partition = partition_groups(ds, plan.axis, plan.rules)?;
            (ds, partition)
        }
        TrialDataSource::SyntheticPerTrial(cfg) => {
            template = generate_synthetic(cfg, seeds::derive(plan.master_seed, &[tag::DATASET]))?;
            let partition = partition_groups(&template, plan.axis, plan.rules)?;
            (&template, partition)
        }
    };
    let fixed_truth = match plan.source {
        TrialDataSource::Fixed(_) => Some(compute_ground_truth(base, &partition)?),
        TrialDataSource::SyntheticPerTrial(_) => None,
    };

    struct TrialBundle {
        truth: Vec<f64>,
        cells: Vec<std::result::Result<TrialResult, TrialFailure>>,
    }

    let bundles: Vec<TrialBundle> = (0..plan.trials)
        .into_par_iter()
        .map(|t| -> Result<TrialBundle> {
            let trial_seed = seeds::derive(plan.master_seed, &[tag::TRIAL, t as u64]);
            let generated: Option<Dataset> = match plan.source {
                TrialDataSource::Fixed(_) => None,
                TrialDataSource::SyntheticPerTrial(cfg) => Some(generate_synthetic(
                    cfg,
                    seeds::derive(trial_seed, &[tag::DATASET]),
                )?),
            };
            let dataset = generated.as_ref().unwrap_or(base);
            let truth = match &fixed_truth {
                Some(t) => t.clone(),
                None => compute_ground_truth(dataset, &partition)?,
            };
            let ctx = TrialContext {
                dataset,
                partition: &partition,
                variant: plan.variant,
                sampling: plan.sampling,
                estimator: plan.estimator,
                predictor: plan.predictor,
            };
            let cells = plan
                .methods
                .iter()
                .map(|&method| {
                    run_trial(&ctx, method, t, trial_seed).map_err(|e| TrialFailure {
                        trial: t,
                        method,
                        error: e.to_string(),
                    })
                })
                .collect();
            Ok(TrialBundle { truth, cells })
        })
        .collect::<Result<_>>()?;

    let truths: Vec<Vec<f64>> = bundles.iter().map(|b| b.truth.clone()).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for bundle in bundles {
        for cell in bundle.cells {
            match cell {
                Ok(r) => results.push(r),
                Err(f) => failures.push(f),
            }
        }
    }

    let metrics = build_metrics(plan.methods, &results, &truths, &partition, plan.trials);
    Ok(ExperimentOutcome { partition, results, failures, truths, metrics })
}

/// Aggregate per-(method, group) metrics plus an `avg` row per method.
pub fn build_metrics(
    methods: &[Method],
    results: &[TrialResult],
    truths: &[Vec<f64>],
    partition: &PartitionResult,
    trials_total: usize,
) -> MetricsTable {
    let k = partition.partition.k();
    let mut rows = Vec::new();
    for &method in methods {
        let mut method_trials: Vec<&TrialResult> =
            results.iter().filter(|r| r.method == method).collect();
        method_trials.sort_by_key(|r| r.trial);

        let mut covered = vec![0usize; k];
        let mut delta_sums = vec![0.0; k];
        let mut width_sums = vec![0.0; k];
        let mut count_sums = vec![0usize; k];
        let mut ok = vec![0usize; k];
        for trial in &method_trials {
            let truth = &truths[trial.trial];
            for (g, outcome) in trial.estimates.groups.iter().enumerate() {
                count_sums[g] += trial.labeled_per_group[g];
                if let Some(est) = outcome.estimate() {
                    ok[g] += 1;
                    delta_sums[g] += (est.theta_hat - truth[g]).abs() * 100.0;
                    width_sums[g] += (est.ci_upper - est.ci_lower) * 100.0;
                    if est.ci_lower <= truth[g] && truth[g] <= est.ci_upper {
                        covered[g] += 1;
                    }
                }
            }
        }

        let ran = !method_trials.is_empty();
        let mut group_rows: Vec<MetricsRow> = Vec::new();
        for g in 0..k {
            let name = partition.partition.groups[g].name.clone();
            let empty_group = partition.counts[g] == 0;
            let warning = if empty_group {
                Some(format!("group `{name}` has no records"))
            } else if ran && ok[g] == 0 {
                Some(format!("group `{name}` produced no successful estimates"))
            } else {
                None
            };
            let have = ran && ok[g] > 0 && !empty_group;
            group_rows.push(MetricsRow {
                method,
                group: name,
                coverage: have.then(|| covered[g] as f64 / trials_total as f64),
                delta_pp: have.then(|| delta_sums[g] / ok[g] as f64),
                mean_count: (ran && !empty_group)
                    .then(|| count_sums[g] as f64 / method_trials.len() as f64),
                ci_width_mean: have.then(|| width_sums[g] / ok[g] as f64),
                trials_ok: ok[g],
                trials_total,
                warning,
            });
        }

        let avg = |extract: fn(&MetricsRow) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = group_rows.iter().filter_map(extract).collect();
            (!vals.is_empty()).then(|| numeric::mean(&vals))
        };
        let avg_row = MetricsRow {
            method,
            group: AVG_GROUP.to_string(),
            coverage: avg(|r| r.coverage),
            delta_pp: avg(|r| r.delta_pp),
            mean_count: avg(|r| r.mean_count),
            ci_width_mean: avg(|r| r.ci_width_mean),
            trials_ok: group_rows.iter().map(|r| r.trials_ok).min().unwrap_or(0),
            trials_total,
            warning: None,
        };
        rows.extend(group_rows);
        rows.push(avg_row);
    }
    MetricsTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::GroupOutcome;
    use crate::synthetic::SYNTH_VARIANT;

    fn synth_ctx() -> (Dataset, PartitionResult) {
        let cfg = SynthConfig { n: 1000, ..Default::default() };
        let ds = generate_synthetic(&cfg, 42).unwrap();
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        (ds, part)
    }

    fn small_sampling() -> SamplingConfig {
        SamplingConfig { n_human: 100, n_burnin: 30, batches: 3, gamma: 0.2, pi_floor: 0.05 }
    }

    #[test]
    fn ground_truth_matches_generator_rates() {
        let cfg = SynthConfig { n: 20_000, ..Default::default() };
        let ds = generate_synthetic(&cfg, 7).unwrap();
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        let truth = compute_ground_truth(&ds, &part).unwrap();
        for (g, (mean, rate)) in truth
            .iter()
            .zip([cfg.base_rate_g1, cfg.base_rate_g2])
            .enumerate()
        {
            let n = part.counts[g] as f64;
            let se = (rate * (1.0 - rate) / n).sqrt();
            assert!((mean - rate).abs() < 3.0 * se, "group {g}: {mean} vs {rate}");
        }
    }

    #[test]
    fn ground_truth_constant_labels() {
        let (mut ds, part) = synth_ctx();
        for r in &mut ds.records {
            r.human_label = Some(0.7);
        }
        let truth = compute_ground_truth(&ds, &part).unwrap();
        assert!(truth.iter().all(|&t| (t - 0.7).abs() < 1e-12));
    }

    #[test]
    fn ground_truth_requires_full_labels() {
        let (mut ds, part) = synth_ctx();
        ds.records[5].human_label = None;
        assert!(compute_ground_truth(&ds, &part).is_err());
    }

    #[test]
    fn llm_only_trial_consumes_no_labels() {
        let (ds, part) = synth_ctx();
        let ctx = TrialContext {
            dataset: &ds,
            partition: &part,
            variant: SYNTH_VARIANT,
            sampling: &small_sampling(),
            estimator: &EstimatorConfig { alpha: 0.1, bootstrap: 20 },
            predictor: &PredictorConfig::default(),
        };
        let result = run_trial(&ctx, Method::LlmOnly, 0, 5).unwrap();
        assert_eq!(result.realized_labeled, 0);
        assert!(result.labeled_per_group.iter().all(|&c| c == 0));
        assert!(result.sampled.iter().all(|&s| !s));
    }

    // Full budget: every label collected, any λ telescopes, so the point
    // estimate equals the ground-truth group mean exactly.
    #[test]
    fn full_budget_recovers_ground_truth() {
        let cfg = SynthConfig { n: 1024, small_group_share: 0.25, ..Default::default() };
        let ds = generate_synthetic(&cfg, 3).unwrap();
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        let truth = compute_ground_truth(&ds, &part).unwrap();
        let sampling = SamplingConfig { n_human: 1024, n_burnin: 50, ..Default::default() };
        let ctx = TrialContext {
            dataset: &ds,
            partition: &part,
            variant: SYNTH_VARIANT,
            sampling: &sampling,
            estimator: &EstimatorConfig { alpha: 0.1, bootstrap: 10 },
            predictor: &PredictorConfig::default(),
        };
        let result = run_trial(&ctx, Method::Ppi, 0, 9).unwrap();
        for (outcome, t) in result.estimates.groups.iter().zip(&truth) {
            let est = outcome.estimate().unwrap();
            assert!((est.theta_hat - t).abs() < 1e-12, "{} vs {}", est.theta_hat, t);
        }
        assert_eq!(result.realized_labeled, 1024);
    }

    // Poisoned masked labels must never be read: estimates are bit-identical
    // to the production masking and contain no propagated NaN.
    #[test]
    fn masked_labels_are_never_read() {
        let (ds, part) = synth_ctx();
        let ctx = TrialContext {
            dataset: &ds,
            partition: &part,
            variant: SYNTH_VARIANT,
            sampling: &small_sampling(),
            estimator: &EstimatorConfig { alpha: 0.1, bootstrap: 40 },
            predictor: &PredictorConfig::default(),
        };
        for method in [Method::Classical, Method::LlmOnly, Method::Ppi, Method::Pdi] {
            let clean = run_trial_masked(&ctx, method, 0, 77, MaskMode::Remove).unwrap();
            let poisoned =
                run_trial_masked(&ctx, method, 0, 77, MaskMode::Poison(f64::NAN)).unwrap();
            for (a, b) in clean.estimates.groups.iter().zip(&poisoned.estimates.groups) {
                let (a, b) = (a.estimate().unwrap(), b.estimate().unwrap());
                assert!(a.theta_hat.is_finite());
                assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits(), "{method}");
                assert_eq!(a.ci_lower.to_bits(), b.ci_lower.to_bits());
                assert_eq!(a.ci_upper.to_bits(), b.ci_upper.to_bits());
            }
        }
    }

    fn fake_trial(trial: usize, method: Method, estimates: Vec<(f64, f64, f64)>) -> TrialResult {
        let groups = estimates
            .iter()
            .enumerate()
            .map(|(g, &(theta, lo, hi))| GroupOutcome::Ok {
                estimate: crate::estimators::GroupEstimate {
                    group: format!("g{g}"),
                    method,
                    theta_hat: theta,
                    ci_lower: lo,
                    ci_upper: hi,
                    lambda: 0.5,
                    lambda_fallback: false,
                    n_labeled: 10,
                    n_total: 100,
                    alpha: 0.1,
                },
            })
            .collect();
        TrialResult {
            trial,
            method,
            seed: trial as u64,
            estimates: EstimateVector {
                method,
                variant: "v".into(),
                alpha: 0.1,
                bootstrap: 10,
                seed: 0,
                groups,
            },
            labeled_per_group: vec![5; estimates.len()],
            realized_labeled: 5 * estimates.len(),
            sampled: Vec::new(),
        }
    }

    #[test]
    fn coverage_arithmetic() {
        // 19 of 20 trials cover → 0.95.
        let truth = [0.5];
        let trials: Vec<TrialResult> = (0..20)
            .map(|t| {
                let lo = if t == 0 { 0.6 } else { 0.4 };
                fake_trial(t, Method::Ppi, vec![(0.5, lo, 0.7)])
            })
            .collect();
        let cov = aggregate_coverage(&trials, &truth).unwrap();
        assert_eq!(cov, vec![0.95]);
    }

    #[test]
    fn coverage_zero_width_at_truth_is_one() {
        let truth = [0.5];
        let trials: Vec<TrialResult> =
            (0..10).map(|t| fake_trial(t, Method::Ppi, vec![(0.5, 0.5, 0.5)])).collect();
        assert_eq!(aggregate_coverage(&trials, &truth).unwrap(), vec![1.0]);
    }

    #[test]
    fn coverage_never_containing_truth_is_zero() {
        let truth = [0.9];
        let trials: Vec<TrialResult> =
            (0..10).map(|t| fake_trial(t, Method::Ppi, vec![(0.5, 0.4, 0.6)])).collect();
        assert_eq!(aggregate_coverage(&trials, &truth).unwrap(), vec![0.0]);
    }

    #[test]
    fn coverage_group_mismatch_is_error() {
        let trials = vec![fake_trial(0, Method::Ppi, vec![(0.5, 0.4, 0.6)])];
        assert!(aggregate_coverage(&trials, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn delta_arithmetic() {
        let truth = [0.5, 0.5];
        let trials: Vec<TrialResult> = (0..5)
            .map(|t| fake_trial(t, Method::Ppi, vec![(0.56, 0.0, 1.0), (0.5, 0.0, 1.0)]))
            .collect();
        let delta = aggregate_delta(&trials, &truth).unwrap();
        assert!((delta.per_group[0].unwrap() - 6.0).abs() < 1e-9);
        assert!((delta.per_group[1].unwrap() - 0.0).abs() < 1e-12);
        assert!((delta.avg.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn delta_avg_is_unweighted_over_groups() {
        let truth = [0.5, 0.5];
        let trials =
            vec![fake_trial(0, Method::Ppi, vec![(0.54, 0.0, 1.0), (0.58, 0.0, 1.0)])];
        let delta = aggregate_delta(&trials, &truth).unwrap();
        assert!((delta.avg.unwrap() - 6.0).abs() < 1e-9);
    }

    // Under the uniform design a group holding 4.6% of the records expects
    // share × budget = 9.2 of 200 annotations.
    #[test]
    fn uniform_allocation_matches_share_times_budget() {
        let cfg = SynthConfig { n: 5000, small_group_share: 0.046, ..Default::default() };
        let ds = generate_synthetic(&cfg, 13).unwrap();
        let part = partition_groups(&ds, "group", &GroupingRules::PerCategory).unwrap();
        assert_eq!(part.counts[1], 230);

        let trials = 200;
        let mut total = 0usize;
        for t in 0..trials {
            let trace = crate::sampling::uniform_sample(&ds, 200, 9000 + t).unwrap();
            total += trace.labeled_in_group(&part.membership, 1);
        }
        let mean = total as f64 / trials as f64;
        // sd of the mean: sqrt(230 · π(1−π) / trials), π = 0.04
        let tol = 3.0 * (230.0 * 0.04 * 0.96 / trials as f64).sqrt();
        assert!((mean - 9.2).abs() < tol, "mean count {mean} vs expected 9.2");
    }

    #[test]
    fn count_table_over_multiple_axes() {
        let (ds, part) = synth_ctx();
        let mut trial = fake_trial(0, Method::Pdi, vec![(0.5, 0.4, 0.6), (0.5, 0.4, 0.6)]);
        trial.sampled = ds
            .records
            .iter()
            .enumerate()
            .map(|(i, _)| i % 10 == 0)
            .collect();
        let rows = sampling_count_table(&[trial], &[("group", &part)]);
        assert_eq!(rows.len(), 2);
        let total: f64 = rows.iter().map(|r| r.mean_count).sum();
        assert_eq!(total, 100.0);
    }

    // Frozen against an independent hand computation: margins (30,30)x(30,30),
    // expected 15 per cell, χ² = 4·25/15 = 20/3; p from scipy.
    #[test]
    fn chi_squared_oracle_2x2() {
        let res = chi_squared_test(&[vec![10, 20], vec![20, 10]]).unwrap();
        assert!((res.statistic - 6.666666666666667).abs() < 1e-9, "{}", res.statistic);
        assert_eq!(res.df, 1);
        assert!((res.p_value - 0.009823274507519235).abs() < 1e-9, "{}", res.p_value);
    }

    #[test]
    fn chi_squared_proportional_table_is_zero() {
        let res = chi_squared_test(&[vec![10, 20], vec![20, 40]]).unwrap();
        assert!(res.statistic.abs() < 1e-12);
        assert!((res.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_squared_df_formulas() {
        // Category counts (2, 8, 5) × 5 rating levels → df (4, 28, 16).
        for (k, df) in [(2usize, 4usize), (8, 28), (5, 16)] {
            let table: Vec<Vec<u64>> = (0..k)
                .map(|r| (0..5).map(|c| 5 + ((r * 7 + c * 3) % 11) as u64).collect())
                .collect();
            let res = chi_squared_test(&table).unwrap();
            assert_eq!(res.df, df);
        }
    }

    #[test]
    fn chi_squared_invariant_under_permutations() {
        let table = vec![vec![12, 7, 31], vec![25, 14, 9]];
        let base = chi_squared_test(&table).unwrap();
        let row_swapped = vec![table[1].clone(), table[0].clone()];
        let col_swapped: Vec<Vec<u64>> =
            table.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        for permuted in [row_swapped, col_swapped] {
            let res = chi_squared_test(&permuted).unwrap();
            assert!((res.statistic - base.statistic).abs() < 1e-12);
            assert_eq!(res.df, base.df);
        }
    }

    #[test]
    fn chi_squared_zero_margin_is_error() {
        assert!(chi_squared_test(&[vec![0, 0], vec![20, 10]]).is_err());
        assert!(chi_squared_test(&[vec![10, 0], vec![20, 0]]).is_err());
        assert!(chi_squared_test(&[vec![10, 20]]).is_err());
    }

    #[test]
    fn contingency_counts_levels_from_scale() {
        let (ds, part) = synth_ctx();
        let table = rating_contingency(&ds, &part).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].len(), 2);
        let total: u64 = table.iter().flatten().sum();
        assert_eq!(total, ds.len() as u64);
    }

    #[test]
    fn experiment_plan_end_to_end() {
        let cfg = SynthConfig { n: 600, ..Default::default() };
        let plan = ExperimentPlan {
            source: TrialDataSource::SyntheticPerTrial(&cfg),
            axis: "group",
            rules: &GroupingRules::PerCategory,
            methods: &[Method::Ppi, Method::Pdi],
            variant: SYNTH_VARIANT,
            sampling: &SamplingConfig { n_human: 120, n_burnin: 40, batches: 3, gamma: 0.2, pi_floor: 0.05 },
            estimator: &EstimatorConfig { alpha: 0.1, bootstrap: 30 },
            predictor: &PredictorConfig::default(),
            trials: 6,
            master_seed: 2024,
        };
        let outcome = run_experiment_plan(&plan).unwrap();
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
        assert_eq!(outcome.results.len(), 12);
        // 2 methods × (2 groups + avg row).
        assert_eq!(outcome.metrics.rows.len(), 6);
        for row in &outcome.metrics.rows {
            if row.group != AVG_GROUP {
                assert!(row.coverage.is_some());
                assert!(row.delta_pp.is_some());
            }
        }
        // Determinism of the whole harness.
        let again = run_experiment_plan(&plan).unwrap();
        assert_eq!(
            serde_json::to_string(&outcome.metrics).unwrap(),
            serde_json::to_string(&again.metrics).unwrap()
        );
    }
}
