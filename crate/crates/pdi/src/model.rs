//! Shared data model: annotation records, datasets, demographic partitions,
//! and the canonical unit-interval normalization every estimator relies on.
//!
//! All types are immutable after construction and safe to share across
//! threads. Labels are normalized to [0,1] at ingestion; every estimator
//! operates on the unit scale and deltas are reported ×100 as percentage
//! points.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};

/// Ordered map of demographic axis name to category label for one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemographicProfile {
    attributes: IndexMap<String, String>,
}

impl DemographicProfile {
    /// Build a profile from (axis, category) pairs. Axis names must be
    /// nonempty and unique; category labels must be nonempty.
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut attributes = IndexMap::new();
        for (axis, category) in pairs {
            let axis = axis.into();
            let category = category.into();
            if axis.is_empty() {
                return Err(PdiError::Input("empty demographic axis name".into()));
            }
            if category.is_empty() {
                return Err(PdiError::Input(format!(
                    "empty category label for axis `{axis}`"
                )));
            }
            if attributes.insert(axis.clone(), category).is_some() {
                return Err(PdiError::Input(format!(
                    "duplicate demographic axis `{axis}`"
                )));
            }
        }
        Ok(Self { attributes })
    }

    pub fn get(&self, axis: &str) -> Option<&str> {
        self.attributes.get(axis).map(String::as_str)
    }

    pub fn axes(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attributes
            .iter()
            .map(|(a, c)| (a.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

/// One (text instance, annotator) observation.
///
/// `human_label` is present only when the annotation has been collected (or
/// the dataset is a full-information simulation source). `pi` and `xi` carry
/// the sampling state once the record has been offered to a collection
/// process: `xi == Some(true)` requires both `human_label` and `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub human_label: Option<f64>,
    pub llm_labels: IndexMap<String, f64>,
    pub demographics: DemographicProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<bool>,
}

/// Original rating scale of a task. `Range` covers Likert-style integer
/// scales; `Binary` tasks carry labels already in {0,1} and normalize as the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScale {
    Binary,
    Range { min: i64, max: i64 },
}

impl RatingScale {
    pub fn validate(&self) -> Result<()> {
        if let RatingScale::Range { min, max } = self {
            if min >= max {
                return Err(PdiError::Config(format!(
                    "rating scale requires min < max, got ({min}, {max})"
                )));
            }
        }
        Ok(())
    }
}

/// Map a raw rating onto [0,1]: r ↦ (r − min)/(max − min), identity for
/// binary tasks. Monotone; endpoints map to 0 and 1.
pub fn normalize_rating(raw: f64, scale: RatingScale) -> Result<f64> {
    scale.validate()?;
    match scale {
        RatingScale::Binary => {
            if !(0.0..=1.0).contains(&raw) || raw.is_nan() {
                Err(PdiError::Data(format!(
                    "binary label {raw} outside [0,1]"
                )))
            } else {
                Ok(raw)
            }
        }
        RatingScale::Range { min, max } => {
            let (lo, hi) = (min as f64, max as f64);
            if raw.is_nan() || raw < lo || raw > hi {
                Err(PdiError::Data(format!(
                    "rating {raw} outside scale [{min}, {max}]"
                )))
            } else {
                Ok((raw - lo) / (hi - lo))
            }
        }
    }
}

/// Inverse of [`normalize_rating`] on the same scale.
pub fn denormalize_rating(value: f64, scale: RatingScale) -> f64 {
    match scale {
        RatingScale::Binary => value,
        RatingScale::Range { min, max } => min as f64 + value * (max - min) as f64,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<AnnotationRecord>,
    pub rating_scale: RatingScale,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// LLM variant keys present on every record, in first-record order.
    pub fn common_variants(&self) -> Vec<String> {
        let Some(first) = self.records.first() else {
            return Vec::new();
        };
        first
            .llm_labels
            .keys()
            .filter(|k| self.records.iter().all(|r| r.llm_labels.contains_key(*k)))
            .cloned()
            .collect()
    }

    pub fn has_variant(&self, variant: &str) -> bool {
        !self.records.is_empty()
            && self
                .records
                .iter()
                .all(|r| r.llm_labels.contains_key(variant))
    }
}

/// One named group: the set of category labels it covers on the partition
/// axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDef {
    pub name: String,
    pub categories: Vec<String>,
}

/// Disjoint, covering partition of one demographic axis into K groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub axis: String,
    pub groups: Vec<GroupDef>,
}

impl GroupPartition {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn group_of(&self, category: &str) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.categories.iter().any(|c| c == category))
    }
}

/// How to bucket an axis's categories into groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingRules {
    /// One group per observed category, named after it (sorted order).
    PerCategory,
    /// A single group with the given name covering every observed category.
    Single(String),
    /// Explicit buckets; must be disjoint and cover every observed category.
    Buckets(Vec<GroupDef>),
}

/// Partition plus the per-record group assignment it induces on a dataset.
#[derive(Debug, Clone)]
pub struct PartitionResult {
    pub partition: GroupPartition,
    /// Record index -> group index.
    pub membership: Vec<usize>,
    pub counts: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Assign every record of `dataset` to exactly one group along `axis`.
///
/// Rejects records whose category is not covered by the rules (listing the
/// offending categories) and overlapping bucket definitions. Empty groups are
/// legal but flagged as warnings in the result.
pub fn partition_groups(
    dataset: &Dataset,
    axis: &str,
    rules: &GroupingRules,
) -> Result<PartitionResult> {
    let mut observed: BTreeSet<String> = BTreeSet::new();
    for (idx, record) in dataset.records.iter().enumerate() {
        match record.demographics.get(axis) {
            Some(cat) => {
                observed.insert(cat.to_string());
            }
            None => {
                return Err(PdiError::Schema(format!(
                    "record {idx} has no demographic axis `{axis}`"
                )))
            }
        }
    }

    let groups: Vec<GroupDef> = match rules {
        GroupingRules::PerCategory => observed
            .iter()
            .map(|c| GroupDef {
                name: c.clone(),
                categories: vec![c.clone()],
            })
            .collect(),
        GroupingRules::Single(name) => vec![GroupDef {
            name: name.clone(),
            categories: observed.iter().cloned().collect(),
        }],
        GroupingRules::Buckets(defs) => defs.clone(),
    };
    if groups.is_empty() {
        return Err(PdiError::Config("partition must define at least one group".into()));
    }

    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for g in &groups {
        for c in &g.categories {
            if let Some(other) = seen.insert(c.as_str(), g.name.as_str()) {
                return Err(PdiError::Config(format!(
                    "category `{c}` assigned to both `{other}` and `{}`",
                    g.name
                )));
            }
        }
    }

    let partition = GroupPartition {
        axis: axis.to_string(),
        groups,
    };

    let mut unmapped: BTreeSet<&str> = BTreeSet::new();
    let mut membership = Vec::with_capacity(dataset.len());
    let mut counts = vec![0usize; partition.k()];
    for record in &dataset.records {
        let cat = record.demographics.get(axis).expect("checked above");
        match partition.group_of(cat) {
            Some(g) => {
                membership.push(g);
                counts[g] += 1;
            }
            None => {
                unmapped.insert(cat);
                membership.push(usize::MAX);
            }
        }
    }
    if !unmapped.is_empty() {
        let list: Vec<&str> = unmapped.into_iter().collect();
        return Err(PdiError::Data(format!(
            "categories not covered by any group on axis `{axis}`: {}",
            list.join(", ")
        )));
    }

    let warnings = partition
        .groups
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c == 0)
        .map(|(g, _)| format!("group `{}` is empty", g.name))
        .collect();

    Ok(PartitionResult {
        partition,
        membership,
        counts,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    /// Hard checks gate acceptance; soft checks are informational.
    pub hard: bool,
    pub passed: bool,
    pub details: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    /// Accepted iff every hard check passed.
    pub fn accepted(&self) -> bool {
        self.checks.iter().all(|c| !c.hard || c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| c.hard && !c.passed)
    }
}

const MAX_DETAILS: usize = 8;

fn push_detail(details: &mut Vec<String>, total: &mut usize, msg: String) {
    *total += 1;
    if details.len() < MAX_DETAILS {
        details.push(msg);
    } else if details.len() == MAX_DETAILS {
        details.push("...".into());
    }
}

/// Pure, report-valued validation; callers decide what to do with failures.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut checks = Vec::new();

    checks.push(ValidationCheck {
        name: "nonempty".into(),
        hard: true,
        passed: !dataset.is_empty(),
        details: Vec::new(),
    });

    // Label ranges: every human and LLM label within [0,1].
    {
        let mut details = Vec::new();
        let mut total = 0;
        for (idx, r) in dataset.records.iter().enumerate() {
            if let Some(h) = r.human_label {
                if !(0.0..=1.0).contains(&h) || h.is_nan() {
                    push_detail(&mut details, &mut total, format!("record {idx}: human label {h}"));
                }
            }
            for (variant, &v) in &r.llm_labels {
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    push_detail(
                        &mut details,
                        &mut total,
                        format!("record {idx}: llm label `{variant}` = {v}"),
                    );
                }
            }
        }
        checks.push(ValidationCheck {
            name: "label_range".into(),
            hard: true,
            passed: total == 0,
            details,
        });
    }

    // Sampling-state consistency: xi=1 requires a label and a pi; any xi
    // requires pi; pi must lie in (0,1].
    {
        let mut details = Vec::new();
        let mut total = 0;
        for (idx, r) in dataset.records.iter().enumerate() {
            if r.xi == Some(true) {
                if r.human_label.is_none() {
                    push_detail(
                        &mut details,
                        &mut total,
                        format!("record {idx}: xi=1 but human label missing"),
                    );
                }
                if r.pi.is_none() {
                    push_detail(&mut details, &mut total, format!("record {idx}: xi=1 but pi missing"));
                }
            }
            if r.xi.is_some() && r.pi.is_none() {
                push_detail(&mut details, &mut total, format!("record {idx}: xi set but pi missing"));
            }
            if let Some(pi) = r.pi {
                if !(pi > 0.0 && pi <= 1.0) {
                    push_detail(&mut details, &mut total, format!("record {idx}: pi {pi} outside (0,1]"));
                }
            }
        }
        checks.push(ValidationCheck {
            name: "xi_pi_consistency".into(),
            hard: true,
            passed: total == 0,
            details,
        });
    }

    // Variant completeness: at least one LLM variant shared by all records.
    checks.push(ValidationCheck {
        name: "variant_completeness".into(),
        hard: true,
        passed: !dataset.common_variants().is_empty(),
        details: Vec::new(),
    });

    // Demographic completeness: nonempty profiles sharing one axis set.
    {
        let mut details = Vec::new();
        let mut total = 0;
        let reference: Option<BTreeSet<&str>> = dataset
            .records
            .first()
            .map(|r| r.demographics.axes().collect());
        for (idx, r) in dataset.records.iter().enumerate() {
            if r.demographics.is_empty() {
                push_detail(&mut details, &mut total, format!("record {idx}: empty demographics"));
                continue;
            }
            let axes: BTreeSet<&str> = r.demographics.axes().collect();
            if Some(&axes) != reference.as_ref() {
                push_detail(
                    &mut details,
                    &mut total,
                    format!("record {idx}: demographic axes differ from record 0"),
                );
            }
        }
        checks.push(ValidationCheck {
            name: "demographic_completeness".into(),
            hard: true,
            passed: total == 0,
            details,
        });
    }

    // Soft: any labeled record at all (llm-only runs don't need one).
    checks.push(ValidationCheck {
        name: "has_human_labels".into(),
        hard: false,
        passed: dataset.records.iter().any(|r| r.human_label.is_some()),
        details: Vec::new(),
    });

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(
        id: &str,
        human: Option<f64>,
        llm: &[(&str, f64)],
        demo: &[(&str, &str)],
    ) -> AnnotationRecord {
        AnnotationRecord {
            instance_id: id.to_string(),
            text: None,
            human_label: human,
            llm_labels: llm.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            demographics: DemographicProfile::from_pairs(demo.iter().copied()).unwrap(),
            pi: None,
            xi: None,
        }
    }

    fn small_dataset() -> Dataset {
        Dataset {
            records: vec![
                record("a", Some(0.5), &[("zero_shot", 0.25)], &[("age", "18-34")]),
                record("b", Some(1.0), &[("zero_shot", 0.75)], &[("age", "35-49")]),
                record("c", None, &[("zero_shot", 0.5)], &[("age", "50+")]),
            ],
            rating_scale: RatingScale::Range { min: 1, max: 5 },
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let scale = RatingScale::Range { min: 1, max: 5 };
        assert_eq!(normalize_rating(1.0, scale).unwrap(), 0.0);
        assert_eq!(normalize_rating(5.0, scale).unwrap(), 1.0);
        assert_eq!(normalize_rating(3.0, scale).unwrap(), 0.5);
        assert!(normalize_rating(6.0, scale).is_err());
        assert!(normalize_rating(0.0, scale).is_err());
    }

    #[test]
    fn normalize_binary_is_identity() {
        assert_eq!(normalize_rating(1.0, RatingScale::Binary).unwrap(), 1.0);
        assert_eq!(normalize_rating(0.0, RatingScale::Binary).unwrap(), 0.0);
        assert!(normalize_rating(1.2, RatingScale::Binary).is_err());
    }

    #[test]
    fn partition_age_buckets() {
        let ds = small_dataset();
        let rules = GroupingRules::Buckets(vec![
            GroupDef { name: "18-34".into(), categories: vec!["18-34".into()] },
            GroupDef { name: "35-49".into(), categories: vec!["35-49".into()] },
            GroupDef { name: "50+".into(), categories: vec!["50+".into()] },
        ]);
        let res = partition_groups(&ds, "age", &rules).unwrap();
        assert_eq!(res.partition.k(), 3);
        assert_eq!(res.counts, vec![1, 1, 1]);
        assert_eq!(res.counts.iter().sum::<usize>(), ds.len());
        assert!(res.warnings.is_empty());
    }

    #[test]
    fn partition_single_bucket_covers_everything() {
        let ds = small_dataset();
        let res = partition_groups(&ds, "age", &GroupingRules::Single("all".into())).unwrap();
        assert_eq!(res.partition.k(), 1);
        assert_eq!(res.counts, vec![3]);
    }

    #[test]
    fn partition_unmapped_category_is_an_error() {
        let ds = small_dataset();
        let rules = GroupingRules::Buckets(vec![GroupDef {
            name: "young".into(),
            categories: vec!["18-34".into()],
        }]);
        let err = partition_groups(&ds, "age", &rules).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("35-49") && msg.contains("50+"), "{msg}");
    }

    #[test]
    fn partition_overlapping_buckets_rejected() {
        let ds = small_dataset();
        let rules = GroupingRules::Buckets(vec![
            GroupDef { name: "a".into(), categories: vec!["18-34".into(), "35-49".into(), "50+".into()] },
            GroupDef { name: "b".into(), categories: vec!["35-49".into()] },
        ]);
        assert!(matches!(
            partition_groups(&ds, "age", &rules),
            Err(PdiError::Config(_))
        ));
    }

    #[test]
    fn partition_missing_axis_is_schema_error() {
        let ds = small_dataset();
        assert!(matches!(
            partition_groups(&ds, "gender", &GroupingRules::PerCategory),
            Err(PdiError::Schema(_))
        ));
    }

    #[test]
    fn partition_empty_group_warns() {
        let ds = small_dataset();
        let rules = GroupingRules::Buckets(vec![
            GroupDef { name: "all".into(), categories: vec!["18-34".into(), "35-49".into(), "50+".into()] },
            GroupDef { name: "nobody".into(), categories: vec!["never-seen".into()] },
        ]);
        let res = partition_groups(&ds, "age", &rules).unwrap();
        assert_eq!(res.warnings.len(), 1);
        assert!(res.warnings[0].contains("nobody"));
    }

    #[test]
    fn validate_accepts_well_formed() {
        let report = validate_dataset(&small_dataset());
        assert!(report.accepted(), "{report:?}");
    }

    #[test]
    fn validate_flags_xi_without_label() {
        let mut ds = small_dataset();
        ds.records[1].xi = Some(true);
        ds.records[1].pi = Some(0.5);
        ds.records[1].human_label = None;
        let report = validate_dataset(&ds);
        assert!(!report.accepted());
        let failing = report.failures().next().unwrap();
        assert_eq!(failing.name, "xi_pi_consistency");
        assert!(failing.details[0].contains("record 1"));
    }

    #[test]
    fn validate_flags_out_of_range_llm_label() {
        let mut ds = small_dataset();
        ds.records[0].llm_labels.insert("zero_shot".into(), 1.2);
        let report = validate_dataset(&ds);
        assert!(!report.accepted());
        assert!(report.failures().any(|c| c.name == "label_range"));
    }

    #[test]
    fn validate_is_pure() {
        let ds = small_dataset();
        let a = serde_json::to_string(&validate_dataset(&ds)).unwrap();
        let b = serde_json::to_string(&validate_dataset(&ds)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_rejects_duplicates_and_empties() {
        assert!(DemographicProfile::from_pairs([("age", "20"), ("age", "30")]).is_err());
        assert!(DemographicProfile::from_pairs([("", "20")]).is_err());
        assert!(DemographicProfile::from_pairs([("age", "")]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_round_trips(raw in 1.0f64..=5.0) {
                let scale = RatingScale::Range { min: 1, max: 5 };
                let v = normalize_rating(raw, scale).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!((denormalize_rating(v, scale) - raw).abs() < 1e-12);
            }

            #[test]
            fn normalize_is_monotone(a in 1.0f64..=5.0, b in 1.0f64..=5.0) {
                let scale = RatingScale::Range { min: 1, max: 5 };
                let (va, vb) = (
                    normalize_rating(a, scale).unwrap(),
                    normalize_rating(b, scale).unwrap(),
                );
                prop_assert_eq!(a.partial_cmp(&b), va.partial_cmp(&vb));
            }

            #[test]
            fn every_record_lands_in_exactly_one_group(cats in proptest::collection::vec(0usize..3, 1..40)) {
                let records: Vec<AnnotationRecord> = cats
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        tests::record(
                            &format!("r{i}"),
                            Some(0.5),
                            &[("zero_shot", 0.5)],
                            &[("age", ["18-34", "35-49", "50+"][c])],
                        )
                    })
                    .collect();
                let ds = Dataset {
                    records,
                    rating_scale: RatingScale::Binary,
                    metadata: BTreeMap::new(),
                };
                let res = partition_groups(&ds, "age", &GroupingRules::PerCategory).unwrap();
                prop_assert_eq!(res.membership.len(), ds.len());
                prop_assert!(res.membership.iter().all(|&g| g < res.partition.k()));
                prop_assert_eq!(res.counts.iter().sum::<usize>(), ds.len());
            }
        }
    }
}
