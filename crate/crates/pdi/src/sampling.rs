//! Human-annotation collection: uniform burn-in, random batch partitioning,
//! error-driven inclusion probabilities with uniform smoothing, capping and
//! flooring, and independent Bernoulli (Poisson sampling) draws.
//!
//! The loop is sequential across batches because each refit depends on the
//! labels collected so far. Every random decision derives its seed from the
//! caller's seed, so a trace is a pure function of (dataset, config, seed)
//! given a deterministic predictor.

use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::model::Dataset;
use crate::predictor::{self, PredictorConfig, PredictorKind, TrainingPair};
use crate::seeds::{self, tag};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Expected total number of human annotations.
    pub n_human: usize,
    /// Uniform burn-in budget that seeds the error predictor.
    pub n_burnin: usize,
    /// Number of adaptive batches after burn-in.
    pub batches: usize,
    /// Uniform-smoothing weight γ in [0,1]; γ=1 reproduces the uniform
    /// design within every batch.
    pub gamma: f64,
    /// Floor on inclusion probabilities, as a fraction of the batch's
    /// uniform rate; keeps every record sampleable.
    pub pi_floor: f64,
}

impl Default for SamplingConfig {
    /// Burn-in defaults to half the budget: it matches the burn-in rate
    /// n_burnin/n to the per-batch rate, keeping the labeled records'
    /// IPW weights on a comparable scale across phases. A smaller burn-in
    /// concentrates enormous weights on the few burn-in-labeled records of
    /// rare groups, which measurably degrades their interval calibration.
    fn default() -> Self {
        Self { n_human: 200, n_burnin: 100, batches: 5, gamma: 0.2, pi_floor: 0.05 }
    }
}

impl SamplingConfig {
    pub fn validate(&self, n_records: usize) -> Result<()> {
        if self.n_human == 0 || self.n_human > n_records {
            return Err(PdiError::Config(format!(
                "budget n_human={} must be in 1..={n_records}",
                self.n_human
            )));
        }
        if self.n_burnin == 0 || self.n_burnin > self.n_human {
            return Err(PdiError::Config(format!(
                "burn-in {} must be in 1..=n_human ({})",
                self.n_burnin, self.n_human
            )));
        }
        if self.batches == 0 {
            return Err(PdiError::Config("batch count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PdiError::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if !(self.pi_floor > 0.0 && self.pi_floor < 1.0) {
            return Err(PdiError::Config(format!("pi_floor {} outside (0,1)", self.pi_floor)));
        }
        Ok(())
    }
}

/// The phase in which a record was last offered to the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Burnin,
    /// 1-based batch index.
    Batch(usize),
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Burnin => f.write_str("burnin"),
            Phase::Batch(i) => write!(f, "batch_{i}"),
        }
    }
}

/// Final sampling state of one record: the inclusion probability at its last
/// offer and whether the draw collected its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub pi: f64,
    pub sampled: bool,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub id: usize,
    pub kind: PredictorKind,
    pub training_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// 1-based batch index.
    pub index: usize,
    pub pool: usize,
    pub budget: usize,
    /// Σπ over the batch after capping and flooring.
    pub pi_sum: f64,
    /// Σπ − budget; nonzero only through capping/floor adjustments.
    pub budget_gap: f64,
    /// True when the predictor could not be fit and the batch fell back to
    /// the uniform design.
    pub uniform_fallback: bool,
    pub model: Option<ModelSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingTrace {
    /// One entry per dataset record, aligned with record order.
    pub entries: Vec<TraceEntry>,
    pub burnin_pi: f64,
    pub batches: Vec<BatchReport>,
    pub realized_labeled: usize,
}

impl SamplingTrace {
    pub fn labeled_count(&self) -> usize {
        self.entries.iter().filter(|e| e.sampled).count()
    }

    pub fn sampled_flags(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.sampled).collect()
    }

    /// Labeled count within one group of a record->group assignment.
    pub fn labeled_in_group(&self, membership: &[usize], group: usize) -> usize {
        self.entries
            .iter()
            .zip(membership)
            .filter(|(e, &g)| e.sampled && g == group)
            .count()
    }
}

fn bernoulli_draws(probabilities: impl Iterator<Item = f64>, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    probabilities.map(|p| rng.random::<f64>() < p).collect()
}

/// Uniform burn-in: every record receives π = n_burnin/n and an independent
/// Bernoulli draw. Returned as a burn-in-only trace.
pub fn burn_in_sample(dataset: &Dataset, n_burnin: usize, seed: u64) -> Result<SamplingTrace> {
    let n = dataset.len();
    if n_burnin == 0 || n_burnin > n {
        return Err(PdiError::Config(format!(
            "burn-in {n_burnin} must be in 1..={n}"
        )));
    }
    let pi = n_burnin as f64 / n as f64;
    let draws = bernoulli_draws(
        std::iter::repeat_n(pi, n),
        seeds::derive(seed, &[tag::DRAWS]),
    );
    let entries: Vec<TraceEntry> = draws
        .into_iter()
        .map(|sampled| TraceEntry { pi, sampled, phase: Phase::Burnin })
        .collect();
    let realized_labeled = entries.iter().filter(|e| e.sampled).count();
    Ok(SamplingTrace { entries, burnin_pi: pi, batches: Vec::new(), realized_labeled })
}

/// Uniform one-shot design with π = n_human/n for every record; the sampling
/// trace the uniform-sampling baseline runs on. Shares its draw stream with
/// [`burn_in_sample`] so paired comparisons reuse the same uniforms.
pub fn uniform_sample(dataset: &Dataset, n_human: usize, seed: u64) -> Result<SamplingTrace> {
    burn_in_sample(dataset, n_human, seed)
}

/// Randomly partition `indices` into `b` disjoint, near-equal sets (sizes
/// differ by at most one) covering the input.
pub fn partition_batches(indices: &[usize], b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 {
        return Err(PdiError::Config("batch count must be at least 1".into()));
    }
    let mut shuffled: Vec<usize> = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = shuffled.len();
    let base = n / b;
    let remainder = n % b;
    let mut out = Vec::with_capacity(b);
    let mut start = 0;
    for i in 0..b {
        let size = base + usize::from(i < remainder);
        out.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// Turn predicted errors into inclusion probabilities for one batch.
///
/// The predicted errors are normalized into a probability vector, smoothed
/// with the uniform distribution over the batch
/// (p_i = (1−γ)·err̂_i/Σerr̂ + γ/m), and scaled by the batch budget. Any
/// π_i > 1 is capped at 1 with the excess redistributed proportionally among
/// the uncapped entries (iterated until all π ≤ 1); finally each π is
/// floored at `pi_floor` times the batch's uniform rate.
pub fn compute_inclusion_probabilities(
    err_hat: &[f64],
    batch_budget: usize,
    gamma: f64,
    pi_floor: f64,
) -> Result<Vec<f64>> {
    let m = err_hat.len();
    if batch_budget > m {
        return Err(PdiError::Config(format!(
            "batch budget {batch_budget} exceeds pool size {m}"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PdiError::Input(format!("gamma {gamma} outside [0,1]")));
    }
    if !(0.0..1.0).contains(&pi_floor) {
        return Err(PdiError::Input(format!("pi_floor {pi_floor} outside [0,1)")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    for (i, &e) in err_hat.iter().enumerate() {
        if !e.is_finite() || e < 0.0 {
            return Err(PdiError::Input(format!(
                "predicted error at index {i} must be finite and nonnegative, got {e}"
            )));
        }
    }

    let target = batch_budget as f64;
    let uniform = 1.0 / m as f64;
    let total: f64 = err_hat.iter().sum();
    let probs: Vec<f64> = if total == 0.0 {
        vec![uniform; m]
    } else {
        err_hat
            .iter()
            .map(|&e| (1.0 - gamma) * e / total + gamma * uniform)
            .collect()
    };
    let mut pi: Vec<f64> = probs.iter().map(|p| target * p).collect();

    // Iterative capping: fix overflowing entries at 1 and rescale the rest
    // so the expected draw count stays at the budget.
    let mut capped = vec![false; m];
    loop {
        let mut newly_capped = false;
        for (p, c) in pi.iter_mut().zip(capped.iter_mut()) {
            if !*c && *p >= 1.0 {
                *p = 1.0;
                *c = true;
                newly_capped = true;
            }
        }
        if !newly_capped {
            break;
        }
        let n_capped = capped.iter().filter(|&&c| c).count();
        let remaining = target - n_capped as f64;
        let uncapped_sum: f64 = pi
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(p, _)| *p)
            .sum();
        if remaining <= 0.0 || uncapped_sum <= 0.0 {
            for (p, &c) in pi.iter_mut().zip(&capped) {
                if !c {
                    *p = 0.0;
                }
            }
            break;
        }
        let scale = remaining / uncapped_sum;
        for (p, &c) in pi.iter_mut().zip(&capped) {
            if !c {
                *p *= scale;
            }
        }
    }

    let floor = pi_floor * target * uniform;
    for p in pi.iter_mut() {
        *p = p.max(floor);
    }
    Ok(pi)
}

/// Independent Bernoulli draw per record (Poisson sampling): ξ_i ~ Bern(π_i).
pub fn poisson_draw(pi: &[f64], seed: u64) -> Result<Vec<bool>> {
    for (i, &p) in pi.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(PdiError::Input(format!(
                "inclusion probability at index {i} must be in (0,1], got {p}"
            )));
        }
    }
    Ok(bernoulli_draws(pi.iter().copied(), seed))
}

/// Reveals a human label on demand. Simulation binds this to held-out truth;
/// a deployment could bind it to an annotation queue.
pub trait LabelOracle {
    fn label(&mut self, record_index: usize) -> Result<f64>;
}

impl<F> LabelOracle for F
where
    F: FnMut(usize) -> Result<f64>,
{
    fn label(&mut self, record_index: usize) -> Result<f64> {
        self(record_index)
    }
}

/// Oracle backed by a full-information dataset.
pub struct DatasetOracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> DatasetOracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self { dataset }
    }
}

impl LabelOracle for DatasetOracle<'_> {
    fn label(&mut self, record_index: usize) -> Result<f64> {
        self.dataset
            .records
            .get(record_index)
            .and_then(|r| r.human_label)
            .ok_or_else(|| {
                PdiError::Data(format!("no held-out human label for record {record_index}"))
            })
    }
}

/// Run the full adaptive collection loop.
///
/// Burn-in samples uniformly and reveals labels; the squared proxy error of
/// each labeled record trains the predictor; the remaining records are
/// randomly split into disjoint batches, each offered once with error-driven
/// inclusion probabilities and refitting after every batch. Records never
/// re-offered keep their burn-in π, so every labeled record carries the
/// inclusion probability of the phase that drew it.
pub fn run_adaptive_collection<O: LabelOracle>(
    dataset: &Dataset,
    config: &SamplingConfig,
    predictor_config: &PredictorConfig,
    variant: &str,
    oracle: &mut O,
    seed: u64,
) -> Result<SamplingTrace> {
    let n = dataset.len();
    config.validate(n)?;
    if !dataset.has_variant(variant) {
        return Err(PdiError::Schema(format!(
            "dataset has no llm variant `{variant}` on every record"
        )));
    }

    let mut trace = burn_in_sample(dataset, config.n_burnin, seed)?;

    // A burn-in consuming the whole budget means uniform-only collection.
    if config.n_burnin == config.n_human {
        return Ok(trace);
    }

    let mut training: Vec<TrainingPair> = Vec::new();
    let reveal = |idx: usize, oracle: &mut O, training: &mut Vec<TrainingPair>| -> Result<()> {
        let label = oracle.label(idx)?;
        let record = &dataset.records[idx];
        let proxy = record.llm_labels[variant];
        let residual = proxy - label;
        training.push(TrainingPair {
            demographics: record.demographics.clone(),
            target: residual * residual,
        });
        Ok(())
    };
    for idx in 0..n {
        if trace.entries[idx].sampled {
            reveal(idx, oracle, &mut training)?;
        }
    }

    let remaining: Vec<usize> = (0..n).filter(|&i| !trace.entries[i].sampled).collect();
    let batches = partition_batches(
        &remaining,
        config.batches,
        seeds::derive(seed, &[tag::BATCH_ASSIGN]),
    )?;

    // Budget left after the realized burn-in, integer-split across batches.
    // Poisson sampling spends each batch's budget in expectation, so the
    // plan is fixed upfront; a batch smaller than its allocation hands the
    // excess to later batches.
    let adaptive_budget = config.n_human.saturating_sub(trace.realized_labeled);
    let base = adaptive_budget / config.batches;
    let remainder = adaptive_budget % config.batches;
    let mut carry = 0usize;

    let mut snapshot_id = 0usize;
    for (b, pool) in batches.iter().enumerate() {
        let planned = base + usize::from(b < remainder) + carry;
        let budget = planned.min(pool.len());
        carry = planned - budget;

        if budget == 0 {
            // Exhausted (or empty pool): the records keep their burn-in π.
            trace.batches.push(BatchReport {
                index: b + 1,
                pool: pool.len(),
                budget: 0,
                pi_sum: 0.0,
                budget_gap: 0.0,
                uniform_fallback: false,
                model: None,
            });
            continue;
        }

        // A predictor failure falls back to a constant error vector, which
        // normalizes to the uniform design for any γ.
        let fitted = predictor::fit_error_model(&training, predictor_config)
            .and_then(|model| {
                let preds: Result<Vec<f64>> = pool
                    .iter()
                    .map(|&i| model.predict(&dataset.records[i].demographics))
                    .collect();
                preds.map(|p| (p, model))
            })
            .ok();
        let (err_hat, uniform_fallback, model) = match fitted {
            Some((preds, model)) => {
                let snap = ModelSnapshot {
                    id: snapshot_id,
                    kind: model.kind,
                    training_pairs: model.training_size,
                };
                snapshot_id += 1;
                (preds, false, Some(snap))
            }
            None => (vec![1.0; pool.len()], true, None),
        };

        let pi = compute_inclusion_probabilities(&err_hat, budget, config.gamma, config.pi_floor)?;
        let draws = poisson_draw(&pi, seeds::derive(seed, &[tag::BATCH_DRAW, b as u64]))?;

        for ((&idx, &p), &sampled) in pool.iter().zip(&pi).zip(&draws) {
            trace.entries[idx] = TraceEntry { pi: p, sampled, phase: Phase::Batch(b + 1) };
            if sampled {
                reveal(idx, oracle, &mut training)?;
            }
        }
        let pi_sum: f64 = pi.iter().sum();
        trace.batches.push(BatchReport {
            index: b + 1,
            pool: pool.len(),
            budget,
            pi_sum,
            budget_gap: pi_sum - budget as f64,
            uniform_fallback,
            model,
        });
    }

    trace.realized_labeled = trace.labeled_count();
    Ok(trace)
}
