//! Decoding of raw model output into structured stage-1 analyses and stage-2
//! verdicts.
//!
//! Both entry points are total: every byte string yields a result with a
//! [`ParseGrade`] instead of an error. The strict path accepts the exact
//! response format the prompts demand; the repaired path applies syntax-only
//! fixes (code fences, key casing, shortcut keys, label synonyms, embedded
//! JSON extraction); anything else is graded `Failed` and mapped to a
//! sentinel so the pipeline never halts mid-run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::label::Credibility;
use crate::taxonomy::{resolve_strategy, StrategyId};

/// Per-strategy binary label inside a stage-1 analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Presence {
    Yes,
    No,
}

impl Presence {
    pub fn as_str(self) -> &'static str {
        match self {
            Presence::Yes => "Yes",
            Presence::No => "No",
        }
    }
}

/// How much repair a parse needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParseGrade {
    Strict,
    Repaired,
    Failed,
}

/// Stage-1 output: one binary label and one explanation per strategy.
///
/// Always carries exactly six labels; a `Failed` grade means the sentinel
/// form (all `No`, empty explanations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersuasionAnalysis {
    pub labels: BTreeMap<StrategyId, Presence>,
    pub explanations: BTreeMap<StrategyId, String>,
    pub parse_grade: ParseGrade,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParserError {
    #[error("analysis has parse_grade=Failed; refusing to transform a sentinel")]
    FailedAnalysis,
    #[error("analysis must carry exactly the six strategies")]
    IncompleteAnalysis,
}

impl PersuasionAnalysis {
    /// Build from complete label/explanation maps.
    pub fn new(
        labels: BTreeMap<StrategyId, Presence>,
        explanations: BTreeMap<StrategyId, String>,
        parse_grade: ParseGrade,
    ) -> Result<Self, ParserError> {
        if labels.len() != 6 || explanations.len() != 6 {
            return Err(ParserError::IncompleteAnalysis);
        }
        Ok(Self { labels, explanations, parse_grade })
    }

    /// The all-`No` sentinel used when stage-1 output could not be parsed.
    pub fn sentinel() -> Self {
        let labels = StrategyId::ALL.iter().map(|&s| (s, Presence::No)).collect();
        let explanations = StrategyId::ALL.iter().map(|&s| (s, String::new())).collect();
        Self { labels, explanations, parse_grade: ParseGrade::Failed }
    }

    pub fn label(&self, id: StrategyId) -> Presence {
        self.labels[&id]
    }

    /// Strategies labelled `Yes`.
    pub fn yes_strategies(&self) -> Vec<StrategyId> {
        StrategyId::ALL
            .iter()
            .copied()
            .filter(|s| self.labels[s] == Presence::Yes)
            .collect()
    }

    pub fn has_any_yes(&self) -> bool {
        self.labels.values().any(|&l| l == Presence::Yes)
    }

    /// Serialize to the dictionary shape embedded in stage-2 prompts:
    /// strategy name -> {label, explanation}, keys in taxonomy order.
    pub fn to_prompt_json(&self) -> String {
        let mut root = serde_json::Map::new();
        for &id in &StrategyId::ALL {
            let mut entry = serde_json::Map::new();
            entry.insert("label".into(), Value::String(self.labels[&id].as_str().into()));
            entry.insert("explanation".into(), Value::String(self.explanations[&id].clone()));
            root.insert(id.name().into(), Value::Object(entry));
        }
        serde_json::to_string_pretty(&Value::Object(root)).expect("analysis serialization")
    }
}

/// Project an analysis onto its labels, dropping every explanation.
pub fn strip_explanations(a: &PersuasionAnalysis) -> Result<PersuasionAnalysis, ParserError> {
    if a.parse_grade == ParseGrade::Failed {
        return Err(ParserError::FailedAnalysis);
    }
    let explanations = StrategyId::ALL.iter().map(|&s| (s, String::new())).collect();
    Ok(PersuasionAnalysis { labels: a.labels.clone(), explanations, parse_grade: a.parse_grade })
}

/// Stage-2 output: the binary disinformation verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Credibility,
    pub raw_text: String,
    pub parse_grade: ParseGrade,
}

/// Parse a stage-1 response covering all six strategies. Total.
pub fn parse_analysis(raw: &str) -> PersuasionAnalysis {
    if let Some(a) = parse_analysis_strict(raw) {
        return a;
    }
    if let Some(a) = parse_analysis_repaired(raw) {
        return a;
    }
    PersuasionAnalysis::sentinel()
}

fn analysis_object(value: &Value) -> Option<&serde_json::Map<String, Value>> {
    let obj = value.as_object()?;
    // Single-step responses nest the analysis under "persuasion_analysis".
    match obj.get("persuasion_analysis") {
        Some(Value::Object(inner)) => Some(inner),
        _ => Some(obj),
    }
}

fn parse_analysis_strict(raw: &str) -> Option<PersuasionAnalysis> {
    let value: Value = serde_json::from_str(raw.trim()).ok()?;
    let obj = analysis_object(&value)?;
    let mut labels = BTreeMap::new();
    let mut explanations = BTreeMap::new();
    for &id in &StrategyId::ALL {
        let entry = obj.get(id.name())?.as_object()?;
        let label = match entry.get("label")?.as_str()? {
            "Yes" => Presence::Yes,
            "No" => Presence::No,
            _ => return None,
        };
        let explanation = match entry.get("explanation") {
            None => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return None,
        };
        labels.insert(id, label);
        explanations.insert(id, explanation);
    }
    Some(PersuasionAnalysis { labels, explanations, parse_grade: ParseGrade::Strict })
}

fn parse_analysis_repaired(raw: &str) -> Option<PersuasionAnalysis> {
    let value = lenient_json_object(raw)?;
    let obj = analysis_object(&value)?;
    let mut labels = BTreeMap::new();
    let mut explanations = BTreeMap::new();
    for (key, entry) in obj {
        let Ok(strategy) = resolve_strategy(key) else { continue };
        let (label, explanation) = lenient_entry(entry)?;
        labels.insert(strategy.id, label);
        explanations.insert(strategy.id, explanation);
    }
    // Missing strategies after repair mean the response is unusable.
    if labels.len() != 6 {
        return None;
    }
    Some(PersuasionAnalysis { labels, explanations, parse_grade: ParseGrade::Repaired })
}

/// Parse one per-strategy response from a single-strategy stage-1 prompt.
/// Returns the label, explanation, and grade for `target`. Total.
pub fn parse_single_strategy(raw: &str, target: StrategyId) -> (Presence, String, ParseGrade) {
    // Strict: {"<name>": {"label": "Yes", "explanation": "..."}}
    if let Ok(value) = serde_json::from_str::<Value>(raw.trim()) {
        if let Some(obj) = value.as_object() {
            if let Some(entry) = obj.get(target.name()).and_then(Value::as_object) {
                if let Some(label) = entry.get("label").and_then(Value::as_str) {
                    let grade = match label {
                        "Yes" => Some(Presence::Yes),
                        "No" => Some(Presence::No),
                        _ => None,
                    };
                    if let Some(label) = grade {
                        let explanation = entry
                            .get("explanation")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .to_string();
                        return (label, explanation, ParseGrade::Strict);
                    }
                }
            }
        }
    }
    // Repaired: shortcut or case-variant keys, bare {label, explanation}, synonyms.
    if let Some(value) = lenient_json_object(raw) {
        if let Some(obj) = value.as_object() {
            let entry = obj
                .iter()
                .find(|(k, _)| {
                    resolve_strategy(k).map(|s| s.id == target).unwrap_or(false)
                })
                .map(|(_, v)| v)
                .or_else(|| obj.contains_key("label").then_some(&value));
            if let Some(entry) = entry {
                if let Some((label, explanation)) = lenient_entry(entry) {
                    return (label, explanation, ParseGrade::Repaired);
                }
            }
        }
    }
    (Presence::No, String::new(), ParseGrade::Failed)
}

/// Parse a stage-2 response. Total; `abstain` is the label recorded when the
/// parse fails (the owning record must be flagged so metrics score it as
/// incorrect regardless of this value).
pub fn parse_verdict_with(raw: &str, abstain: Credibility) -> Verdict {
    if let Some(label) = parse_verdict_strict(raw) {
        return Verdict { label, raw_text: raw.to_string(), parse_grade: ParseGrade::Strict };
    }
    if let Some(label) = parse_verdict_repaired(raw) {
        return Verdict { label, raw_text: raw.to_string(), parse_grade: ParseGrade::Repaired };
    }
    Verdict { label: abstain, raw_text: raw.to_string(), parse_grade: ParseGrade::Failed }
}

/// [`parse_verdict_with`] using the default abstain mapping (`Credible`).
pub fn parse_verdict(raw: &str) -> Verdict {
    parse_verdict_with(raw, Credibility::Credible)
}

fn parse_verdict_strict(raw: &str) -> Option<Credibility> {
    let value: Value = serde_json::from_str(raw.trim()).ok()?;
    match value.as_object()?.get("disinformation")?.as_str()? {
        "Yes" => Some(Credibility::Disinformation),
        "No" => Some(Credibility::Credible),
        _ => None,
    }
}

fn parse_verdict_repaired(raw: &str) -> Option<Credibility> {
    if let Some(value) = lenient_json_object(raw) {
        if let Some(obj) = value.as_object() {
            for (key, val) in obj {
                if key.trim().eq_ignore_ascii_case("disinformation") {
                    if let Some(p) = lenient_label(val) {
                        return Some(match p {
                            Presence::Yes => Credibility::Disinformation,
                            Presence::No => Credibility::Credible,
                        });
                    }
                }
            }
        }
    }
    // Token scan: isolated yes/no, last occurrence wins (chain-of-thought
    // outputs state the conclusion last).
    let mut verdict = None;
    for token in word_tokens(raw) {
        if token.eq_ignore_ascii_case("yes") {
            verdict = Some(Credibility::Disinformation);
        } else if token.eq_ignore_ascii_case("no") {
            verdict = Some(Credibility::Credible);
        }
    }
    verdict
}

fn word_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

/// Lenient extraction of a JSON object from free text: strips markdown code
/// fences and falls back to the first balanced `{...}` span.
fn lenient_json_object(raw: &str) -> Option<Value> {
    let candidates = [fence_stripped(raw), balanced_object(raw)];
    for candidate in candidates.into_iter().flatten() {
        if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(candidate.trim()) {
            return Some(value);
        }
    }
    None
}

fn fence_stripped(raw: &str) -> Option<&str> {
    let start = raw.find("```")?;
    let after = &raw[start + 3..];
    // Skip an optional language tag on the fence line.
    let body_start = after.find('\n')?;
    let body = &after[body_start + 1..];
    let end = body.find("```")?;
    Some(&body[..end])
}

fn balanced_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let bytes = raw.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn lenient_entry(entry: &Value) -> Option<(Presence, String)> {
    match entry {
        Value::Object(obj) => {
            let label_val = obj
                .iter()
                .find(|(k, _)| k.trim().eq_ignore_ascii_case("label"))
                .map(|(_, v)| v)?;
            let label = lenient_label(label_val)?;
            let explanation = obj
                .iter()
                .find(|(k, _)| k.trim().eq_ignore_ascii_case("explanation"))
                .and_then(|(_, v)| v.as_str())
                .unwrap_or_default()
                .to_string();
            Some((label, explanation))
        }
        // A bare scalar stands for the label alone.
        other => lenient_label(other).map(|l| (l, String::new())),
    }
}

fn lenient_label(value: &Value) -> Option<Presence> {
    match value {
        Value::Bool(true) => Some(Presence::Yes),
        Value::Bool(false) => Some(Presence::No),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" | "present" => Some(Presence::Yes),
            "no" | "false" | "absent" => Some(Presence::No),
            _ => None,
        },
        _ => None,
    }
}
