//! Every statistic the evaluation reports: binary F1, pooled multi-label
//! micro F1, McNemar's paired test, Matthews correlation, percentage change,
//! and the subset/distribution analyses over stage-1 output.
//!
//! All scores are computed in double precision; rounding happens only at
//! presentation. Records flagged `StageTwoFailed` count as incorrect
//! predictions regardless of the recorded abstain label (conservative
//! scoring), and records flagged `StageOneFailed` are excluded from the
//! analysis-driven subset and distribution computations because their
//! sentinel all-`No` analysis would bias the no-persuasion bucket.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::corpus::{Genre, SourceDataset};
use crate::label::Credibility;
use crate::parser::{ParseGrade, PersuasionAnalysis};
use crate::prompt::MethodVariant;
use crate::taxonomy::StrategyId;

/// Quality/warning flags attached to an evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordFlag {
    StageOneFailed,
    StageOneRepaired,
    StageTwoFailed,
    StageTwoRepaired,
    Truncated,
}

/// One (model, method, dataset, document) outcome: the prediction joined
/// with the gold label and the stage-1 analysis that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub gold_label: Credibility,
    pub predicted: Credibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<PersuasionAnalysis>,
    pub model_id: String,
    pub method: MethodVariant,
    pub dataset: SourceDataset,
    pub genre: Genre,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<RecordFlag>,
}

impl EvalRecord {
    /// Uniqueness key within a results store.
    pub fn key(&self) -> (String, String, SourceDataset, String) {
        (self.model_id.clone(), self.method.to_string(), self.dataset, self.doc_id.clone())
    }

    /// The prediction used for scoring: a failed stage-2 parse counts as
    /// incorrect no matter what abstain label was recorded.
    pub fn effective_prediction(&self) -> Credibility {
        if self.flags.contains(&RecordFlag::StageTwoFailed) {
            self.gold_label.flipped()
        } else {
            self.predicted
        }
    }

    pub fn is_correct(&self) -> bool {
        self.effective_prediction() == self.gold_label
    }

    /// Analysis usable for subset/distribution work: present and not the
    /// failed-parse sentinel.
    fn usable_analysis(&self) -> Option<&PersuasionAnalysis> {
        if self.flags.contains(&RecordFlag::StageOneFailed) {
            return None;
        }
        self.analysis.as_ref().filter(|a| a.parse_grade != ParseGrade::Failed)
    }
}

/// 2x2 discordance table for McNemar's test over paired predictions.
///
/// Orientation: `both_correct` (n00), `a_only_wrong` (n01: A wrong, B
/// correct), `b_only_wrong` (n10: A correct, B wrong), `both_wrong` (n11).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub both_correct: u64,
    pub a_only_wrong: u64,
    pub b_only_wrong: u64,
    pub both_wrong: u64,
}

impl ContingencyTable2x2 {
    pub fn new(both_correct: u64, a_only_wrong: u64, b_only_wrong: u64, both_wrong: u64) -> Self {
        Self { both_correct, a_only_wrong, b_only_wrong, both_wrong }
    }

    pub fn total(&self) -> u64 {
        self.both_correct + self.a_only_wrong + self.b_only_wrong + self.both_wrong
    }

    pub fn discordant(&self) -> u64 {
        self.a_only_wrong + self.b_only_wrong
    }
}

/// Which McNemar variant to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McNemarMode {
    Exact,
    ChiSquaredCC,
    /// Exact below 25 discordant pairs, continuity-corrected chi-square
    /// otherwise (standard practice).
    Auto,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("gold and predicted ids differ: {0}")]
    IdMismatch(String),
    #[error("all four confusion counts are zero")]
    AllZero,
    #[error("percentage change requires base > 0, got {0}")]
    NonPositiveBase(f64),
}

fn f1_from_confusion(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / denom as f64
}

/// Binary F1 with `Disinformation` as the positive class.
pub fn f1_binary<'a, I>(records: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = &'a EvalRecord>,
{
    let (mut n, mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        n += 1;
        let predicted_positive = r.effective_prediction() == Credibility::Disinformation;
        let gold_positive = r.gold_label == Credibility::Disinformation;
        match (predicted_positive, gold_positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(f1_from_confusion(tp, fp, fn_))
}

/// Micro-averaged multi-label F1: true/false positives and false negatives
/// are pooled across all six strategies and all documents, then F1 is taken
/// of the sums.
pub fn f1_micro_multilabel(
    gold: &BTreeMap<String, BTreeSet<StrategyId>>,
    pred: &BTreeMap<String, BTreeSet<StrategyId>>,
) -> Result<f64, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if gold.len() != pred.len() || gold.keys().any(|k| !pred.contains_key(k)) {
        return Err(MetricsError::IdMismatch(
            "gold and predicted strategy sets must cover the same documents".into(),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (doc, gold_set) in gold {
        let pred_set = &pred[doc];
        for s in StrategyId::ALL {
            match (pred_set.contains(&s), gold_set.contains(&s)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(f1_from_confusion(tp, fp, fn_))
}

/// Two-sided exact binomial p-value: doubled lower tail of Bin(n, 1/2) at
/// min(n01, n10), capped at 1. Exact u128 arithmetic up to n = 120, then the
/// numeric binomial CDF.
fn exact_two_sided(n: u64, m: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if n <= 120 {
        let mut coefficient: u128 = 1;
        let mut tail: u128 = 1; // C(n, 0)
        for k in 0..m {
            coefficient = coefficient * (n as u128 - k as u128) / (k as u128 + 1);
            tail += coefficient;
        }
        let p = 2.0 * (tail as f64) / 2f64.powi(n as i32);
        p.min(1.0)
    } else {
        let dist = Binomial::new(0.5, n).expect("valid binomial");
        (2.0 * dist.cdf(m)).min(1.0)
    }
}

/// McNemar's test p-value for paired binary classifiers.
///
/// `Exact` doubles the binomial lower tail at min(n01, n10) with p = 1/2;
/// `ChiSquaredCC` uses the continuity-corrected statistic
/// (|n01 - n10| - 1)^2 / (n01 + n10) against chi-square with one degree of
/// freedom. Zero discordant pairs give p = 1.
pub fn mcnemar(table: &ContingencyTable2x2, mode: McNemarMode) -> f64 {
    let n01 = table.a_only_wrong;
    let n10 = table.b_only_wrong;
    let discordant = n01 + n10;
    if discordant == 0 {
        return 1.0;
    }
    let mode = match mode {
        McNemarMode::Auto if discordant < 25 => McNemarMode::Exact,
        McNemarMode::Auto => McNemarMode::ChiSquaredCC,
        m => m,
    };
    match mode {
        McNemarMode::Exact => exact_two_sided(discordant, n01.min(n10)),
        McNemarMode::ChiSquaredCC => {
            let diff = (n01 as f64 - n10 as f64).abs();
            let statistic = (diff - 1.0).powi(2) / discordant as f64;
            let chi = ChiSquared::new(1.0).expect("df 1");
            (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0)
        }
        McNemarMode::Auto => unreachable!("resolved above"),
    }
}

/// The continuity-corrected McNemar statistic, exposed for reporting.
pub fn mcnemar_statistic(table: &ContingencyTable2x2) -> f64 {
    let discordant = table.discordant();
    if discordant == 0 {
        return 0.0;
    }
    let diff = (table.a_only_wrong as f64 - table.b_only_wrong as f64).abs();
    (diff - 1.0).powi(2) / discordant as f64
}

/// Build the paired contingency table for two methods over the same
/// instances, joined on (dataset, doc_id).
pub fn paired_table<'a, A, B>(a: A, b: B) -> Result<ContingencyTable2x2, MetricsError>
where
    A: IntoIterator<Item = &'a EvalRecord>,
    B: IntoIterator<Item = &'a EvalRecord>,
{
    let a_map: BTreeMap<(SourceDataset, &str), bool> =
        a.into_iter().map(|r| ((r.dataset, r.doc_id.as_str()), r.is_correct())).collect();
    let b_map: BTreeMap<(SourceDataset, &str), bool> =
        b.into_iter().map(|r| ((r.dataset, r.doc_id.as_str()), r.is_correct())).collect();
    if a_map.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if a_map.len() != b_map.len() || a_map.keys().any(|k| !b_map.contains_key(k)) {
        return Err(MetricsError::IdMismatch(
            "paired methods must cover the same (dataset, document) instances".into(),
        ));
    }
    let mut table = ContingencyTable2x2::default();
    for (key, &a_correct) in &a_map {
        let b_correct = b_map[key];
        match (a_correct, b_correct) {
            (true, true) => table.both_correct += 1,
            (false, true) => table.a_only_wrong += 1,
            (true, false) => table.b_only_wrong += 1,
            (false, false) => table.both_wrong += 1,
        }
    }
    Ok(table)
}

/// Matthews correlation coefficient from confusion counts. Any zero factor
/// in the denominator yields 0.
pub fn mcc(tp: u64, tn: u64, fp: u64, fn_: u64) -> Result<f64, MetricsError> {
    if tp + tn + fp + fn_ == 0 {
        return Err(MetricsError::AllZero);
    }
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom_sq = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom_sq == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom_sq.sqrt())
}

/// Signed percentage change of `new` relative to `base`.
pub fn percentage_change(base: f64, new: f64) -> Result<f64, MetricsError> {
    if base <= 0.0 {
        return Err(MetricsError::NonPositiveBase(base));
    }
    Ok(100.0 * (new - base) / base)
}

/// Records partitioned by predicted persuasion presence.
#[derive(Debug)]
pub struct SubsetSplit<'a> {
    /// Analysis has at least one `Yes` label.
    pub persuasion: Vec<&'a EvalRecord>,
    /// Analysis is all `No`.
    pub no_persuasion: Vec<&'a EvalRecord>,
    /// Records without a usable analysis (absent, failed, or flagged).
    pub excluded: usize,
}

/// Split records by whether their stage-1 analysis predicted any persuasion
/// strategy. Records without a usable analysis are excluded and counted.
pub fn subset_split<'a, I>(records: I) -> SubsetSplit<'a>
where
    I: IntoIterator<Item = &'a EvalRecord>,
{
    let mut split = SubsetSplit { persuasion: Vec::new(), no_persuasion: Vec::new(), excluded: 0 };
    for r in records {
        match r.usable_analysis() {
            Some(a) if a.has_any_yes() => split.persuasion.push(r),
            Some(_) => split.no_persuasion.push(r),
            None => split.excluded += 1,
        }
    }
    split
}

/// Which label defines the classes of a strategy distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistributionBy {
    GoldLabel,
    PredictedLabel,
}

/// One class row of the distribution table: per-strategy fraction of
/// documents with a `Yes` label plus the fraction with at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub class: Credibility,
    pub per_strategy: BTreeMap<StrategyId, f64>,
    pub any_strategy: f64,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    /// Rows in class order (Disinformation, then Credible); empty class
    /// buckets are absent rather than zero-filled.
    pub rows: Vec<DistributionRow>,
    pub excluded: usize,
}

/// Fraction of documents per class in which each strategy was predicted.
pub fn strategy_distribution<'a, I>(records: I, by: DistributionBy) -> DistributionTable
where
    I: IntoIterator<Item = &'a EvalRecord>,
{
    let mut excluded = 0usize;
    let mut buckets: BTreeMap<Credibility, Vec<&PersuasionAnalysis>> = BTreeMap::new();
    for r in records {
        let Some(analysis) = r.usable_analysis() else {
            excluded += 1;
            continue;
        };
        let class = match by {
            DistributionBy::GoldLabel => r.gold_label,
            DistributionBy::PredictedLabel => r.predicted,
        };
        buckets.entry(class).or_default().push(analysis);
    }
    let mut rows = Vec::new();
    for class in [Credibility::Disinformation, Credibility::Credible] {
        let Some(analyses) = buckets.get(&class) else { continue };
        let n = analyses.len();
        let per_strategy = StrategyId::ALL
            .iter()
            .map(|&s| {
                let yes = analyses.iter().filter(|a| a.label(s) == crate::parser::Presence::Yes).count();
                (s, yes as f64 / n as f64)
            })
            .collect();
        let any = analyses.iter().filter(|a| a.has_any_yes()).count() as f64 / n as f64;
        rows.push(DistributionRow { class, per_strategy, any_strategy: any, documents: n });
    }
    DistributionTable { rows, excluded }
}

/// Arithmetic mean.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (a single value has deviation 0).
pub fn std_population(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}
