//! Dataset ingestion into one unified record schema, balance validation, and
//! seeded test-set sampling.
//!
//! Five upstream datasets arrive in heterogeneous CSV layouts; per-source
//! adapters translate them into [`Document`] records and the unified on-disk
//! format is JSONL with one document per line. Adapters drop rows the
//! experiments exclude (MultiDis rows labelled `Hard-to-say` or `Inconsistent
//! with the topic`) and report the drop counts. Date parsing accepts
//! ISO-8601 (`YYYY-MM-DD`) only.
//!
//! Expected CSV headers per source:
//!
//! - `coaid`: `id,content,label,type,date` — label `fake`/`real`, type
//!   `article`/`post`
//! - `isot`: `title,text,subject,date,label` — label `Fake`/`True`
//! - `ectf`: `tweet_id,tweet,label,date` — label `fake`/`genuine`
//! - `multidis`: `id,content,credibility,topic,published`
//! - `eudisinfo`: `id,content,label,published` — label
//!   `disinformation`/`credible`

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Credibility;

/// The five evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SourceDataset {
    #[serde(rename = "CoAID")]
    CoAID,
    #[serde(rename = "ISOT")]
    Isot,
    #[serde(rename = "ECTF")]
    Ectf,
    #[serde(rename = "MultiDis")]
    MultiDis,
    #[serde(rename = "EUDisinfo")]
    EuDisinfo,
}

impl<'de> Deserialize<'de> for SourceDataset {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl SourceDataset {
    pub const ALL: [SourceDataset; 5] = [
        SourceDataset::CoAID,
        SourceDataset::Isot,
        SourceDataset::Ectf,
        SourceDataset::MultiDis,
        SourceDataset::EuDisinfo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceDataset::CoAID => "CoAID",
            SourceDataset::Isot => "ISOT",
            SourceDataset::Ectf => "ECTF",
            SourceDataset::MultiDis => "MultiDis",
            SourceDataset::EuDisinfo => "EUDisinfo",
        }
    }

    /// Whether the dataset was published before or after the evaluated
    /// models' knowledge cutoffs.
    pub fn cutoff_class(self) -> CutoffClass {
        match self {
            SourceDataset::CoAID | SourceDataset::Isot | SourceDataset::Ectf => CutoffClass::Prior,
            SourceDataset::MultiDis | SourceDataset::EuDisinfo => CutoffClass::Post,
        }
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceDataset {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coaid" => Ok(SourceDataset::CoAID),
            "isot" => Ok(SourceDataset::Isot),
            "ectf" => Ok(SourceDataset::Ectf),
            "multidis" => Ok(SourceDataset::MultiDis),
            "eudisinfo" => Ok(SourceDataset::EuDisinfo),
            other => Err(CorpusError::UnknownDataset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    Article,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CutoffClass {
    Prior,
    Post,
}

/// One text instance with its gold credibility label and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub gold_label: Credibility,
    pub source_dataset: SourceDataset,
    pub genre: Genre,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub cutoff_class: CutoffClass,
}

impl Document {
    /// Check the structural invariants a well-formed document satisfies.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.is_empty() {
            return Err(CorpusError::Invalid(format!("document {}: empty text", self.id)));
        }
        if self.cutoff_class != self.source_dataset.cutoff_class() {
            return Err(CorpusError::Invalid(format!(
                "document {}: cutoff class {:?} does not match dataset {}",
                self.id, self.cutoff_class, self.source_dataset
            )));
        }
        if self.cutoff_class == CutoffClass::Post {
            if let Some(date) = self.published_date {
                if date < NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() {
                    return Err(CorpusError::Invalid(format!(
                        "document {}: post-cutoff document dated {date}",
                        self.id
                    )));
                }
            }
        }
        let genre_ok = match self.source_dataset {
            SourceDataset::Ectf => self.genre == Genre::Post,
            SourceDataset::CoAID => true,
            _ => self.genre == Genre::Article,
        };
        if !genre_ok {
            return Err(CorpusError::Invalid(format!(
                "document {}: genre {:?} not allowed for dataset {}",
                self.id, self.genre, self.source_dataset
            )));
        }
        Ok(())
    }
}

/// Summary of one corpus: per-dataset counts and class shares plus the
/// sampling settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub counts: BTreeMap<String, usize>,
    pub disinformation_share: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
}

impl CorpusManifest {
    pub fn from_documents(docs: &[Document], seed: Option<u64>, sample_size: Option<usize>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut positives: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            *counts.entry(d.source_dataset.name().to_string()).or_default() += 1;
            if d.gold_label == Credibility::Disinformation {
                *positives.entry(d.source_dataset.name().to_string()).or_default() += 1;
            }
        }
        let disinformation_share = counts
            .iter()
            .map(|(name, &n)| {
                let p = positives.get(name).copied().unwrap_or(0);
                (name.clone(), p as f64 / n as f64)
            })
            .collect();
        Self { counts, disinformation_share, sampling_seed: seed, sample_size }
    }
}

/// Per-row ingestion problem; the row is skipped, not fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

/// What an ingestion run accepted and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: usize,
    pub ingested: usize,
    pub dropped_hard_to_say: usize,
    pub dropped_off_topic: usize,
    pub row_errors: Vec<RowError>,
}

/// Balance check outcome; failure is data, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub documents: usize,
    pub observed_share: f64,
    pub expected_share: f64,
    pub tolerance: f64,
    pub passes: bool,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown dataset name: {0:?}")]
    UnknownDataset(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dataset produced no documents")]
    EmptyDataset,
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error("sample size {requested} exceeds corpus size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error at line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

struct ColumnMap {
    indices: BTreeMap<String, usize>,
}

impl ColumnMap {
    fn new(headers: &csv::StringRecord, required: &[&str]) -> Result<Self, CorpusError> {
        let indices: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        for col in required {
            if !indices.contains_key(*col) {
                return Err(CorpusError::SchemaMismatch(format!(
                    "missing column {col:?}; found headers {:?}",
                    headers.iter().collect::<Vec<_>>()
                )));
            }
        }
        Ok(Self { indices })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, col: &str) -> &'r str {
        self.indices
            .get(col)
            .and_then(|&i| record.get(i))
            .map(str::trim)
            .unwrap_or("")
    }
}

fn parse_date(raw: &str) -> Result<Option<NaiveDate>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(Some)
        .map_err(|_| format!("date {raw:?} is not ISO-8601 (YYYY-MM-DD)"))
}

fn parse_binary_label(raw: &str, positive: &[&str], negative: &[&str]) -> Result<Credibility, String> {
    let lower = raw.to_ascii_lowercase();
    if positive.contains(&lower.as_str()) {
        Ok(Credibility::Disinformation)
    } else if negative.contains(&lower.as_str()) {
        Ok(Credibility::Credible)
    } else {
        Err(format!("unrecognized label {raw:?}"))
    }
}

/// Load one upstream file through its per-source adapter.
pub fn load_dataset(
    path: &Path,
    schema: SourceDataset,
) -> Result<(Vec<Document>, IngestReport), CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let required: &[&str] = match schema {
        SourceDataset::CoAID => &["id", "content", "label", "type", "date"],
        SourceDataset::Isot => &["title", "text", "subject", "date", "label"],
        SourceDataset::Ectf => &["tweet_id", "tweet", "label", "date"],
        SourceDataset::MultiDis => &["id", "content", "credibility", "topic", "published"],
        SourceDataset::EuDisinfo => &["id", "content", "label", "published"],
    };
    let headers = reader.headers()?.clone();
    let columns = ColumnMap::new(&headers, required)?;

    let mut docs = Vec::new();
    let mut report = IngestReport::default();
    let mut seen_ids = std::collections::BTreeSet::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        report.total_rows += 1;
        let record = record?;
        match adapt_row(schema, &columns, &record, idx) {
            Ok(AdaptedRow::Document(doc)) => {
                if !seen_ids.insert(doc.id.clone()) {
                    report.row_errors.push(RowError {
                        row,
                        message: format!("duplicate id {:?}", doc.id),
                    });
                    continue;
                }
                if let Err(e) = doc.validate() {
                    report.row_errors.push(RowError { row, message: e.to_string() });
                    continue;
                }
                docs.push(doc);
                report.ingested += 1;
            }
            Ok(AdaptedRow::HardToSay) => report.dropped_hard_to_say += 1,
            Ok(AdaptedRow::OffTopic) => report.dropped_off_topic += 1,
            Err(message) => report.row_errors.push(RowError { row, message }),
        }
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok((docs, report))
}

enum AdaptedRow {
    Document(Document),
    HardToSay,
    OffTopic,
}

fn adapt_row(
    schema: SourceDataset,
    columns: &ColumnMap,
    record: &csv::StringRecord,
    index: usize,
) -> Result<AdaptedRow, String> {
    let doc = match schema {
        SourceDataset::CoAID => {
            let text = columns.get(record, "content");
            if text.is_empty() {
                return Err("empty text".into());
            }
            let genre = match columns.get(record, "type").to_ascii_lowercase().as_str() {
                "article" | "news" => Genre::Article,
                "post" => Genre::Post,
                other => return Err(format!("unrecognized type {other:?}")),
            };
            Document {
                id: format!("coaid-{}", columns.get(record, "id")),
                text: text.to_string(),
                gold_label: parse_binary_label(columns.get(record, "label"), &["fake"], &["real"])?,
                source_dataset: schema,
                genre,
                published_date: parse_date(columns.get(record, "date"))?,
                topic: None,
                cutoff_class: schema.cutoff_class(),
            }
        }
        SourceDataset::Isot => {
            let title = columns.get(record, "title");
            let body = columns.get(record, "text");
            if body.is_empty() && title.is_empty() {
                return Err("empty text".into());
            }
            let text = if title.is_empty() {
                body.to_string()
            } else {
                format!("{title}\n\n{body}")
            };
            Document {
                id: format!("isot-{index:05}"),
                text,
                gold_label: parse_binary_label(columns.get(record, "label"), &["fake"], &["true"])?,
                source_dataset: schema,
                genre: Genre::Article,
                published_date: parse_date(columns.get(record, "date"))?,
                topic: Some(columns.get(record, "subject").to_string()).filter(|s| !s.is_empty()),
                cutoff_class: schema.cutoff_class(),
            }
        }
        SourceDataset::Ectf => {
            let text = columns.get(record, "tweet");
            if text.is_empty() {
                return Err("empty text".into());
            }
            Document {
                id: format!("ectf-{}", columns.get(record, "tweet_id")),
                text: text.to_string(),
                gold_label: parse_binary_label(
                    columns.get(record, "label"),
                    &["fake"],
                    &["genuine", "real"],
                )?,
                source_dataset: schema,
                genre: Genre::Post,
                published_date: parse_date(columns.get(record, "date"))?,
                topic: None,
                cutoff_class: schema.cutoff_class(),
            }
        }
        SourceDataset::MultiDis => {
            let credibility = columns.get(record, "credibility");
            match credibility.to_ascii_lowercase().as_str() {
                "hard-to-say" | "hard to say" => return Ok(AdaptedRow::HardToSay),
                "inconsistent with the topic" => return Ok(AdaptedRow::OffTopic),
                _ => {}
            }
            let text = columns.get(record, "content");
            if text.is_empty() {
                return Err("empty text".into());
            }
            Document {
                id: format!("multidis-{}", columns.get(record, "id")),
                text: text.to_string(),
                gold_label: parse_binary_label(
                    credibility,
                    &["disinformation"],
                    &["credible information", "credible"],
                )?,
                source_dataset: schema,
                genre: Genre::Article,
                published_date: parse_date(columns.get(record, "published"))?,
                topic: Some(columns.get(record, "topic").to_string()).filter(|s| !s.is_empty()),
                cutoff_class: schema.cutoff_class(),
            }
        }
        SourceDataset::EuDisinfo => {
            let text = columns.get(record, "content");
            if text.is_empty() {
                return Err("empty text".into());
            }
            Document {
                id: format!("eudisinfo-{}", columns.get(record, "id")),
                text: text.to_string(),
                gold_label: parse_binary_label(
                    columns.get(record, "label"),
                    &["disinformation"],
                    &["credible"],
                )?,
                source_dataset: schema,
                genre: Genre::Article,
                published_date: parse_date(columns.get(record, "published"))?,
                // EUDisinfo records carry no topic.
                topic: None,
                cutoff_class: schema.cutoff_class(),
            }
        }
    };
    Ok(AdaptedRow::Document(doc))
}

/// Write documents to the unified JSONL format, one per line.
pub fn write_jsonl(docs: &[Document], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| CorpusError::Json { line: 0, source: e })?;
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Read documents from the unified JSONL format, validating each record.
pub fn read_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut docs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| CorpusError::Json { line: i + 1, source: e })?;
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::Invalid(format!("duplicate id {:?} at line {}", doc.id, i + 1)));
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(docs)
}

/// Check the observed disinformation share against an expected value.
pub fn validate_balance(
    docs: &[Document],
    expected_share: f64,
    tolerance: f64,
) -> Result<BalanceReport, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let positives = docs.iter().filter(|d| d.gold_label == Credibility::Disinformation).count();
    let observed = positives as f64 / docs.len() as f64;
    Ok(BalanceReport {
        documents: docs.len(),
        observed_share: observed,
        expected_share,
        tolerance,
        passes: (observed - expected_share).abs() <= tolerance,
    })
}

/// Uniform sample without replacement, reproducible from `seed`; the result
/// is sorted by id so downstream iteration order is deterministic.
pub fn sample_test_set(docs: &[Document], n: usize, seed: u64) -> Result<Vec<Document>, CorpusError> {
    if n > docs.len() {
        return Err(CorpusError::SampleTooLarge { requested: n, available: docs.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, docs.len(), n);
    let mut sampled: Vec<Document> = chosen.into_iter().map(|i| docs[i].clone()).collect();
    sampled.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(sampled)
}
