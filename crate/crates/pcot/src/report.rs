//! Report generation: the Base-vs-PCoT main table with percentage deltas
//! and significance marks, the persuasion/no-persuasion subset table, and
//! strategy-distribution matrices, rendered as Markdown and CSV.
//!
//! Reports are deterministic functions of a results store. An external-store
//! mode ingests published score tables (model, method, grouping, base,
//! pcot) so the report arithmetic — averages and percentage deltas — can be
//! exercised against known numbers without any provider access; external
//! tables carry no per-document data, so they get no significance marks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CutoffClass, Genre};
use crate::label::Credibility;
use crate::metrics::{
    self, mcnemar, mean, paired_table, percentage_change, std_population, DistributionBy,
    EvalRecord, McNemarMode, MetricsError,
};
use crate::prompt::MethodVariant;
use crate::taxonomy::{strategy, StrategyId};

/// Record groupings mirroring the evaluation's column taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    Overall,
    Articles,
    Posts,
    PriorCutoff,
    PostCutoff,
}

impl Grouping {
    pub const ALL: [Grouping; 5] = [
        Grouping::Overall,
        Grouping::Articles,
        Grouping::Posts,
        Grouping::PriorCutoff,
        Grouping::PostCutoff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Grouping::Overall => "Overall",
            Grouping::Articles => "Articles",
            Grouping::Posts => "Posts",
            Grouping::PriorCutoff => "Prior Cutoff",
            Grouping::PostCutoff => "Post Cutoff",
        }
    }

    pub fn matches(self, record: &EvalRecord) -> bool {
        match self {
            Grouping::Overall => true,
            Grouping::Articles => record.genre == Genre::Article,
            Grouping::Posts => record.genre == Genre::Post,
            Grouping::PriorCutoff => record.dataset.cutoff_class() == CutoffClass::Prior,
            Grouping::PostCutoff => record.dataset.cutoff_class() == CutoffClass::Post,
        }
    }
}

impl FromStr for Grouping {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "overall" => Ok(Grouping::Overall),
            "articles" => Ok(Grouping::Articles),
            "posts" => Ok(Grouping::Posts),
            "prior" | "priorcutoff" => Ok(Grouping::PriorCutoff),
            "post" | "postcutoff" => Ok(Grouping::PostCutoff),
            other => Err(ReportError::UnknownGrouping(other.to_string())),
        }
    }
}

/// One Base-vs-PCoT comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparePair {
    pub base: MethodVariant,
    pub pcot: MethodVariant,
}

impl ComparePair {
    /// Method label for the row: the stage-2 method name when both sides
    /// share it, otherwise the explicit pair.
    pub fn label(&self) -> String {
        if self.base.stage2_kind() == self.pcot.stage2_kind() {
            self.pcot.stage2_kind().label().to_string()
        } else {
            format!("{}:{}", self.base, self.pcot)
        }
    }
}

impl FromStr for ComparePair {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, pcot) = s
            .split_once(':')
            .ok_or_else(|| ReportError::InvalidComparePair(s.to_string()))?;
        let parse = |v: &str| {
            v.parse::<MethodVariant>()
                .map_err(|_| ReportError::InvalidComparePair(s.to_string()))
        };
        Ok(ComparePair { base: parse(base)?, pcot: parse(pcot)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// What to build and at which significance level.
#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub groupings: Vec<Grouping>,
    pub compare: Vec<ComparePair>,
    pub significance_level: f64,
    pub formats: Vec<ReportFormat>,
    /// Also emit per-model standard deviations over methods.
    pub extended: bool,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self {
            groupings: Grouping::ALL.to_vec(),
            compare: Vec::new(),
            significance_level: 0.01,
            formats: vec![ReportFormat::Markdown],
            extended: false,
        }
    }
}

impl ReportSpec {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.significance_level != 0.05 && self.significance_level != 0.01 {
            return Err(ReportError::InvalidLevel(self.significance_level));
        }
        if self.compare.is_empty() {
            return Err(ReportError::NoComparePairs);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("store does not contain variant {0}")]
    MissingVariant(String),
    #[error("store is empty")]
    EmptyStore,
    #[error("unknown grouping {0:?}")]
    UnknownGrouping(String),
    #[error("invalid compare pair {0:?} (expected base-variant:pcot-variant)")]
    InvalidComparePair(String),
    #[error("significance level must be 0.05 or 0.01, got {0}")]
    InvalidLevel(f64),
    #[error("report needs at least one compare pair")]
    NoComparePairs,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("external scores file {path}: {message}")]
    External { path: String, message: String },
}

/// One grouping cell of the main table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainCell {
    pub base_f1: f64,
    pub pcot_f1: f64,
    /// Absent when the base score is 0 (percentage change undefined).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainRow {
    pub model: String,
    pub method: String,
    /// One entry per grouping; `None` when the grouping holds no records.
    pub cells: Vec<Option<MainCell>>,
}

/// Per-model standard deviation of F1 over methods (extended report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpread {
    pub model: String,
    pub grouping: String,
    pub base_std: f64,
    pub pcot_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTable {
    pub groupings: Vec<String>,
    pub rows: Vec<MainRow>,
    pub average: MainRow,
    pub significance_level: f64,
    /// True when built from per-document records (significance available).
    pub has_significance: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub model_spreads: Vec<ModelSpread>,
}

fn models_in_order(records: &[EvalRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        if !out.contains(&r.model_id) {
            out.push(r.model_id.clone());
        }
    }
    out
}

fn f1_of<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Option<f64> {
    metrics::f1_binary(records).ok()
}

/// Build the main Base-vs-PCoT table from per-document records.
pub fn build_main_table(records: &[EvalRecord], spec: &ReportSpec) -> Result<MainTable, ReportError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    for pair in &spec.compare {
        for variant in [pair.base, pair.pcot] {
            if !records.iter().any(|r| r.method == variant) {
                return Err(ReportError::MissingVariant(variant.to_string()));
            }
        }
    }
    let models = models_in_order(records);
    let mut rows = Vec::new();
    // Cell pools for the Average row: per grouping, every (model, method)
    // base and pcot score.
    let mut pool: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); spec.groupings.len()];

    for model in &models {
        for pair in &spec.compare {
            let base_records: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.model_id == *model && r.method == pair.base)
                .collect();
            let pcot_records: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.model_id == *model && r.method == pair.pcot)
                .collect();
            let mut cells = Vec::new();
            for (gi, grouping) in spec.groupings.iter().enumerate() {
                let base_group: Vec<&EvalRecord> =
                    base_records.iter().copied().filter(|r| grouping.matches(r)).collect();
                let pcot_group: Vec<&EvalRecord> =
                    pcot_records.iter().copied().filter(|r| grouping.matches(r)).collect();
                let (Some(base_f1), Some(pcot_f1)) =
                    (f1_of(base_group.iter().copied()), f1_of(pcot_group.iter().copied()))
                else {
                    cells.push(None);
                    continue;
                };
                let p_value = paired_table(base_group.iter().copied(), pcot_group.iter().copied())
                    .map(|t| mcnemar(&t, McNemarMode::Auto))
                    .ok();
                let delta_pct = percentage_change(base_f1, pcot_f1).ok();
                pool[gi].0.push(base_f1);
                pool[gi].1.push(pcot_f1);
                cells.push(Some(MainCell {
                    base_f1,
                    pcot_f1,
                    delta_pct,
                    p_value,
                    significant: p_value.is_some_and(|p| p <= spec.significance_level),
                }));
            }
            rows.push(MainRow { model: model.clone(), method: pair.label(), cells });
        }
    }

    let average = MainRow {
        model: "Average".to_string(),
        method: String::new(),
        cells: pool
            .iter()
            .map(|(bases, pcots)| {
                if bases.is_empty() {
                    return None;
                }
                let base_f1 = mean(bases);
                let pcot_f1 = mean(pcots);
                let delta_pct = percentage_change(base_f1, pcot_f1).ok();
                Some(MainCell { base_f1, pcot_f1, delta_pct, p_value: None, significant: false })
            })
            .collect(),
    };

    let mut model_spreads = Vec::new();
    if spec.extended {
        for model in &models {
            for (gi, grouping) in spec.groupings.iter().enumerate() {
                let _ = gi;
                let mut bases = Vec::new();
                let mut pcots = Vec::new();
                for row in rows.iter().filter(|r| r.model == *model) {
                    let idx = spec.groupings.iter().position(|g| g == grouping).unwrap();
                    if let Some(cell) = &row.cells[idx] {
                        bases.push(cell.base_f1);
                        pcots.push(cell.pcot_f1);
                    }
                }
                if !bases.is_empty() {
                    model_spreads.push(ModelSpread {
                        model: model.clone(),
                        grouping: grouping.label().to_string(),
                        base_std: std_population(&bases),
                        pcot_std: std_population(&pcots),
                    });
                }
            }
        }
    }

    Ok(MainTable {
        groupings: spec.groupings.iter().map(|g| g.label().to_string()).collect(),
        rows,
        average,
        significance_level: spec.significance_level,
        has_significance: true,
        model_spreads,
    })
}

fn fmt_f1(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_delta(cell: &MainCell, has_significance: bool) -> String {
    let mark = if has_significance && cell.significant { "*" } else { "" };
    match cell.delta_pct {
        Some(delta) => format!("{delta:+.1}%{mark}"),
        None => format!("-{mark}"),
    }
}

/// Markdown rendering of the main table.
pub fn render_main_markdown(table: &MainTable) -> String {
    let mut out = String::new();
    out.push_str("# F1 results: Base vs PCoT\n\n");
    let mut header = String::from("| Model | Method |");
    let mut rule = String::from("| --- | --- |");
    for g in &table.groupings {
        write!(header, " {g} Base | {g} PCoT | {g} Δ% |").unwrap();
        rule.push_str(" ---: | ---: | ---: |");
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    let render_row = |row: &MainRow, out: &mut String| {
        write!(out, "| {} | {} |", row.model, row.method).unwrap();
        for cell in &row.cells {
            match cell {
                Some(c) => write!(
                    out,
                    " {} | {} | {} |",
                    fmt_f1(c.base_f1),
                    fmt_f1(c.pcot_f1),
                    fmt_delta(c, table.has_significance)
                )
                .unwrap(),
                None => out.push_str(" - | - | - |"),
            }
        }
        out.push('\n');
    };
    for row in &table.rows {
        render_row(row, &mut out);
    }
    render_row(&table.average, &mut out);
    if table.has_significance {
        write!(
            out,
            "\n`*` marks PCoT significantly different from Base (McNemar, p <= {}).\n",
            table.significance_level
        )
        .unwrap();
    }
    if !table.model_spreads.is_empty() {
        out.push_str("\n## Per-model standard deviation over methods\n\n");
        out.push_str("| Model | Grouping | Base std | PCoT std |\n| --- | --- | ---: | ---: |\n");
        for s in &table.model_spreads {
            writeln!(
                out,
                "| {} | {} | {:.3} | {:.3} |",
                s.model, s.grouping, s.base_std, s.pcot_std
            )
            .unwrap();
        }
    }
    out
}

/// CSV mirror of the main table: one row per (model, method, grouping).
pub fn render_main_csv(table: &MainTable) -> String {
    let mut out = String::from("model,method,grouping,base_f1,pcot_f1,delta_pct,p_value,significant\n");
    let render_row = |row: &MainRow, out: &mut String| {
        for (g, cell) in table.groupings.iter().zip(&row.cells) {
            if let Some(c) = cell {
                let p = c.p_value.map(|p| format!("{p:.6}")).unwrap_or_default();
                let delta = c.delta_pct.map(|d| format!("{d:.4}")).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{:.6},{:.6},{delta},{p},{}",
                    row.model, row.method, g, c.base_f1, c.pcot_f1, c.significant
                )
                .unwrap();
            }
        }
    };
    for row in &table.rows {
        render_row(row, &mut out);
    }
    render_row(&table.average, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// One model row of the subset table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub model: String,
    pub persuasion_base: Option<MeanStd>,
    pub persuasion_pcot: Option<MeanStd>,
    pub no_persuasion_base: Option<MeanStd>,
    pub no_persuasion_pcot: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTable {
    pub rows: Vec<SubsetRow>,
    pub average: SubsetRow,
    /// Documents excluded because no usable analysis exists for them.
    pub excluded_documents: usize,
}

/// Build the persuasion/no-persuasion subset table: per model, mean ± std
/// of F1 over the compared methods, on the two document subsets defined by
/// the stage-1 analyses.
pub fn build_subset_table(
    records: &[EvalRecord],
    compare: &[ComparePair],
) -> Result<SubsetTable, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    if compare.is_empty() {
        return Err(ReportError::NoComparePairs);
    }
    // Subset membership per (model, dataset, doc), taken from any usable
    // analysis (stage-1 output is shared across the PCoT methods).
    let mut membership: BTreeMap<(String, crate::corpus::SourceDataset, String), bool> =
        BTreeMap::new();
    let mut docs_seen: std::collections::BTreeSet<(String, crate::corpus::SourceDataset, String)> =
        Default::default();
    for r in records {
        let key = (r.model_id.clone(), r.dataset, r.doc_id.clone());
        docs_seen.insert(key.clone());
        if r.flags.contains(&crate::metrics::RecordFlag::StageOneFailed) {
            continue;
        }
        if let Some(analysis) = &r.analysis {
            if analysis.parse_grade != crate::parser::ParseGrade::Failed {
                membership.entry(key).or_insert_with(|| analysis.has_any_yes());
            }
        }
    }
    let excluded_documents = docs_seen.len() - membership.len();

    let models = models_in_order(records);
    let subset_f1 = |model: &str, variant: MethodVariant, wants_persuasion: bool| -> Option<f64> {
        let subset: Vec<&EvalRecord> = records
            .iter()
            .filter(|r| {
                r.model_id == model
                    && r.method == variant
                    && membership
                        .get(&(r.model_id.clone(), r.dataset, r.doc_id.clone()))
                        .is_some_and(|&m| m == wants_persuasion)
            })
            .collect();
        f1_of(subset)
    };
    let mean_std = |values: &[f64]| -> Option<MeanStd> {
        if values.is_empty() {
            None
        } else {
            Some(MeanStd { mean: mean(values), std: std_population(values) })
        }
    };

    let mut rows = Vec::new();
    for model in &models {
        let mut cols: [Vec<f64>; 4] = Default::default();
        for pair in compare {
            for (idx, (variant, wants)) in [
                (pair.base, true),
                (pair.pcot, true),
                (pair.base, false),
                (pair.pcot, false),
            ]
            .into_iter()
            .enumerate()
            {
                if let Some(f1) = subset_f1(model, variant, wants) {
                    cols[idx].push(f1);
                }
            }
        }
        rows.push(SubsetRow {
            model: model.clone(),
            persuasion_base: mean_std(&cols[0]),
            persuasion_pcot: mean_std(&cols[1]),
            no_persuasion_base: mean_std(&cols[2]),
            no_persuasion_pcot: mean_std(&cols[3]),
        });
    }

    let column_average = |get: fn(&SubsetRow) -> Option<MeanStd>| -> Option<MeanStd> {
        let means: Vec<f64> = rows.iter().filter_map(get).map(|m| m.mean).collect();
        mean_std(&means)
    };
    let average = SubsetRow {
        model: "Average".to_string(),
        persuasion_base: column_average(|r| r.persuasion_base),
        persuasion_pcot: column_average(|r| r.persuasion_pcot),
        no_persuasion_base: column_average(|r| r.no_persuasion_base),
        no_persuasion_pcot: column_average(|r| r.no_persuasion_pcot),
    };
    Ok(SubsetTable { rows, average, excluded_documents })
}

fn fmt_mean_std(v: &Option<MeanStd>) -> String {
    match v {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.std),
        None => "-".to_string(),
    }
}

pub fn render_subset_markdown(table: &SubsetTable) -> String {
    let mut out = String::new();
    out.push_str("# F1 by predicted-persuasion subset\n\n");
    out.push_str("| Model | Persuasion Base | Persuasion PCoT | No Persuasion Base | No Persuasion PCoT |\n");
    out.push_str("| --- | ---: | ---: | ---: | ---: |\n");
    for row in table.rows.iter().chain([&table.average]) {
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            row.model,
            fmt_mean_std(&row.persuasion_base),
            fmt_mean_std(&row.persuasion_pcot),
            fmt_mean_std(&row.no_persuasion_base),
            fmt_mean_std(&row.no_persuasion_pcot),
        )
        .unwrap();
    }
    writeln!(
        out,
        "\nValues are mean ± std of F1 over the compared methods; {} document(s) without a usable analysis excluded.",
        table.excluded_documents
    )
    .unwrap();
    out
}

pub fn render_subset_csv(table: &SubsetTable) -> String {
    let mut out =
        String::from("model,subset,side,mean_f1,std_f1\n");
    let emit = |model: &str, subset: &str, side: &str, v: &Option<MeanStd>, out: &mut String| {
        if let Some(m) = v {
            writeln!(out, "{model},{subset},{side},{:.6},{:.6}", m.mean, m.std).unwrap();
        }
    };
    for row in table.rows.iter().chain([&table.average]) {
        emit(&row.model, "persuasion", "base", &row.persuasion_base, &mut out);
        emit(&row.model, "persuasion", "pcot", &row.persuasion_pcot, &mut out);
        emit(&row.model, "no_persuasion", "base", &row.no_persuasion_base, &mut out);
        emit(&row.model, "no_persuasion", "pcot", &row.no_persuasion_pcot, &mut out);
    }
    out
}

/// CSV export of the paired contingency tables behind the significance
/// marks: one row per (model, method pair, grouping) with the four cells
/// and the p-values under each test variant.
pub fn render_contingency_csv(
    records: &[EvalRecord],
    spec: &ReportSpec,
) -> Result<String, ReportError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    let mut out = String::from(
        "model,method,grouping,both_correct,base_only_wrong,pcot_only_wrong,both_wrong,discordant,p_exact,p_chisq_cc,p_auto\n",
    );
    for model in models_in_order(records) {
        for pair in &spec.compare {
            for grouping in &spec.groupings {
                let side = |variant| {
                    records
                        .iter()
                        .filter(|r| {
                            r.model_id == model && r.method == variant && grouping.matches(r)
                        })
                        .collect::<Vec<_>>()
                };
                let base = side(pair.base);
                let pcot = side(pair.pcot);
                let Ok(table) = paired_table(base, pcot) else {
                    continue;
                };
                writeln!(
                    out,
                    "{model},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
                    pair.label(),
                    grouping.label(),
                    table.both_correct,
                    table.a_only_wrong,
                    table.b_only_wrong,
                    table.both_wrong,
                    table.discordant(),
                    mcnemar(&table, McNemarMode::Exact),
                    mcnemar(&table, McNemarMode::ChiSquaredCC),
                    mcnemar(&table, McNemarMode::Auto),
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

/// Strategy-distribution matrix: one row per class (DIS, REL), one column
/// per strategy shortcut plus ALL, percentages averaged across the models
/// present in the store. Returns the CSV plus human-readable notes about
/// omitted rows or exclusions.
pub fn build_distribution_csv(
    records: &[EvalRecord],
    by: DistributionBy,
) -> Result<(String, Vec<String>), ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    let models = models_in_order(records);
    let mut per_model = Vec::new();
    let mut excluded = 0usize;
    for model in &models {
        let model_records: Vec<&EvalRecord> =
            records.iter().filter(|r| r.model_id == *model).collect();
        let table = metrics::strategy_distribution(model_records, by);
        excluded += table.excluded;
        per_model.push(table);
    }

    let mut notes = Vec::new();
    if excluded > 0 {
        notes.push(format!("{excluded} record(s) without a usable analysis excluded"));
    }
    let mut out = String::from("class");
    for id in StrategyId::ALL {
        write!(out, ",{}", strategy(id).shortcut).unwrap();
    }
    out.push_str(",ALL\n");
    for class in [Credibility::Disinformation, Credibility::Credible] {
        let class_rows: Vec<_> = per_model
            .iter()
            .flat_map(|t| t.rows.iter().filter(|r| r.class == class))
            .collect();
        let class_label = match class {
            Credibility::Disinformation => "DIS",
            Credibility::Credible => "REL",
        };
        if class_rows.is_empty() {
            notes.push(format!("class {class_label} absent (no documents)"));
            continue;
        }
        out.push_str(class_label);
        for id in StrategyId::ALL {
            let values: Vec<f64> = class_rows.iter().map(|r| r.per_strategy[&id] * 100.0).collect();
            write!(out, ",{:.1}", mean(&values)).unwrap();
        }
        let all: Vec<f64> = class_rows.iter().map(|r| r.any_strategy * 100.0).collect();
        writeln!(out, ",{:.1}", mean(&all)).unwrap();
    }
    Ok((out, notes))
}

/// Direction check on a distribution CSV built with both classes present:
/// the ALL percentage for DIS must exceed the one for REL.
pub fn dis_all_exceeds_rel_all(distribution_csv: &str) -> Option<bool> {
    let mut dis = None;
    let mut rel = None;
    for line in distribution_csv.lines().skip(1) {
        let mut fields = line.split(',');
        let class = fields.next()?;
        let all: f64 = fields.next_back()?.parse().ok()?;
        match class {
            "DIS" => dis = Some(all),
            "REL" => rel = Some(all),
            _ => {}
        }
    }
    Some(dis? > rel?)
}

/// Published score tables ingested as score-only records: no per-document
/// data, so deltas and averages are computable but significance is not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub entries: Vec<ExternalEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEntry {
    pub model: String,
    pub method: String,
    pub grouping: String,
    pub base: f64,
    pub pcot: f64,
}

impl ExternalScores {
    pub fn from_file(path: &Path) -> Result<Self, ReportError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ReportError::External {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| ReportError::External {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Build a main table from published scores. An explicit `model ==
/// "Average"` row, when present, is preserved as the table's average
/// (publications average over unrounded values); otherwise the average is
/// recomputed from the entries.
pub fn build_main_table_external(scores: &ExternalScores) -> Result<MainTable, ReportError> {
    if scores.entries.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    let mut groupings: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for e in &scores.entries {
        if !groupings.contains(&e.grouping) {
            groupings.push(e.grouping.clone());
        }
        if e.model != "Average" && !models.contains(&e.model) {
            models.push(e.model.clone());
        }
        if e.model != "Average" && !methods.contains(&e.method) {
            methods.push(e.method.clone());
        }
    }

    let lookup = |model: &str, method: &str, grouping: &str| -> Option<&ExternalEntry> {
        scores
            .entries
            .iter()
            .find(|e| e.model == model && e.method == method && e.grouping == grouping)
    };
    let make_cell = |base: f64, pcot: f64| -> MainCell {
        MainCell {
            base_f1: base,
            pcot_f1: pcot,
            delta_pct: percentage_change(base, pcot).ok(),
            p_value: None,
            significant: false,
        }
    };

    let mut rows = Vec::new();
    let mut pool: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); groupings.len()];
    for model in &models {
        for method in &methods {
            let mut cells = Vec::new();
            for (gi, grouping) in groupings.iter().enumerate() {
                match lookup(model, method, grouping) {
                    Some(e) => {
                        pool[gi].0.push(e.base);
                        pool[gi].1.push(e.pcot);
                        cells.push(Some(make_cell(e.base, e.pcot)));
                    }
                    None => cells.push(None),
                }
            }
            rows.push(MainRow { model: model.clone(), method: method.clone(), cells });
        }
    }

    let mut average_cells = Vec::new();
    for (gi, grouping) in groupings.iter().enumerate() {
        let published = scores
            .entries
            .iter()
            .find(|e| e.model == "Average" && e.grouping == *grouping);
        let cell = match published {
            Some(e) => Some(make_cell(e.base, e.pcot)),
            None if !pool[gi].0.is_empty() => {
                Some(make_cell(mean(&pool[gi].0), mean(&pool[gi].1)))
            }
            None => None,
        };
        average_cells.push(cell);
    }

    Ok(MainTable {
        groupings,
        rows,
        average: MainRow { model: "Average".into(), method: String::new(), cells: average_cells },
        significance_level: 0.0,
        has_significance: false,
        model_spreads: Vec::new(),
    })
}
