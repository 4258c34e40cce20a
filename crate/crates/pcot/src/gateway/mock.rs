//! Rule-based deterministic mock provider.
//!
//! Rules pair a regex with a canned response; the first match wins. When no
//! rule matches, the backend either returns a fixed fallback string or (the
//! default) synthesizes a well-formed response for whichever prompt family
//! it recognizes, with labels derived from a hash of the document text so an
//! entire experiment run is bit-reproducible across machines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{GatewayError, ProviderResponse};
use crate::parser::{ParseGrade, PersuasionAnalysis, Presence};
use crate::prompt::{
    BASE_VERSION_TASK_MARKER, SINGLE_STEP_GUIDELINES, STAGE1_MULTI_GUIDELINES,
    STAGE1_SINGLE_GUIDELINES, STAGE2_GUIDELINES,
};
use crate::taxonomy::{resolve_strategy, strategy, StrategyId};

/// One rulebook entry: a regular-expression pattern over the full prompt
/// text and the canned response returned on match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RulebookFile {
    #[serde(default)]
    rules: Vec<MockRule>,
    #[serde(default)]
    fallback: Option<String>,
}

struct CompiledRule {
    regex: Regex,
    response: String,
}

/// Deterministic mock provider backend.
pub struct MockBackend {
    rules: Vec<CompiledRule>,
    /// Fixed fallback response; when absent, responses are synthesized from
    /// the prompt structure.
    fallback: Option<String>,
}

impl MockBackend {
    /// Backend with no rules that synthesizes every response.
    pub fn synthesized() -> Self {
        Self { rules: Vec::new(), fallback: None }
    }

    /// Build from ordered rules; earlier rules win on overlap.
    pub fn from_rules(rules: &[MockRule], fallback: Option<String>) -> Result<Self, GatewayError> {
        let compiled = rules
            .iter()
            .map(|rule| {
                Regex::new(&rule.pattern)
                    .map(|regex| CompiledRule { regex, response: rule.response.clone() })
                    .map_err(|e| GatewayError::InvalidPattern {
                        pattern: rule.pattern.clone(),
                        message: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rules: compiled, fallback })
    }

    /// Load a rulebook JSON file: `{"rules": [{"pattern", "response"}], "fallback"?}`.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = fs::read_to_string(path)?;
        let file: RulebookFile = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Config(format!("rulebook {}: {e}", path.display())))?;
        Self::from_rules(&file.rules, file.fallback)
    }

    pub(super) fn respond(&self, prompt_text: &str) -> ProviderResponse {
        for rule in &self.rules {
            if rule.regex.is_match(prompt_text) {
                return ProviderResponse { text: rule.response.clone(), truncated: false };
            }
        }
        let text = match &self.fallback {
            Some(fixed) => fixed.clone(),
            None => synthesize(prompt_text),
        };
        ProviderResponse { text, truncated: false }
    }
}

/// Document text between the fences; the document block is the last block
/// of every template.
fn fenced_document(prompt: &str) -> &str {
    let Some(start) = prompt.rfind("\nBEGIN TEXT\n") else { return prompt };
    let body = &prompt[start + "\nBEGIN TEXT\n".len()..];
    match body.find("\nEND TEXT") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn sha(text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

fn synthesized_analysis(doc: &str) -> PersuasionAnalysis {
    let h = sha(doc);
    let mut labels = BTreeMap::new();
    let mut explanations = BTreeMap::new();
    for (i, &id) in StrategyId::ALL.iter().enumerate() {
        // One-in-eight per strategy keeps synthesized corpora from
        // saturating the any-strategy bucket.
        let yes = h[i].is_multiple_of(8);
        labels.insert(id, if yes { Presence::Yes } else { Presence::No });
        let s = strategy(id);
        let explanation = if yes {
            format!("Deterministic mock signal {:02x} matched {} in the text.", h[i], s.name)
        } else {
            format!("No deterministic mock signal ({:02x}) for {}.", h[i], s.name)
        };
        explanations.insert(id, explanation);
    }
    PersuasionAnalysis::new(labels, explanations, ParseGrade::Strict).expect("six strategies")
}

fn synthesized_verdict(prompt: &str) -> &'static str {
    // Derived from the full prompt so different methods and variants produce
    // discordant pairs; still fully deterministic.
    if sha(prompt)[0] % 2 == 1 {
        "Yes"
    } else {
        "No"
    }
}

fn target_strategy(prompt: &str) -> Option<StrategyId> {
    let line = prompt.lines().find_map(|l| l.strip_prefix("Strategy to evaluate: "))?;
    resolve_strategy(line.trim()).ok().map(|s| s.id)
}

fn synthesize(prompt: &str) -> String {
    let doc = fenced_document(prompt);
    if prompt.contains(SINGLE_STEP_GUIDELINES) {
        let analysis = synthesized_analysis(doc);
        let analysis_value: Value =
            serde_json::from_str(&analysis.to_prompt_json()).expect("analysis json");
        return serde_json::to_string_pretty(&json!({
            "persuasion_analysis": analysis_value,
            "disinformation": synthesized_verdict(prompt),
        }))
        .expect("single-step json");
    }
    if prompt.contains(STAGE1_MULTI_GUIDELINES) {
        return synthesized_analysis(doc).to_prompt_json();
    }
    if prompt.contains(STAGE1_SINGLE_GUIDELINES) {
        let id = target_strategy(prompt).unwrap_or(StrategyId::AttackOnReputation);
        let analysis = synthesized_analysis(doc);
        let entry = json!({
            "label": analysis.label(id).as_str(),
            "explanation": analysis.explanations[&id],
        });
        return serde_json::to_string_pretty(&json!({ strategy(id).name: entry }))
            .expect("single-strategy json");
    }
    if prompt.contains(STAGE2_GUIDELINES) {
        return serde_json::to_string(&json!({ "disinformation": synthesized_verdict(prompt) }))
            .expect("verdict json");
    }
    if prompt.contains(BASE_VERSION_TASK_MARKER) {
        let h = sha(doc);
        return format!(
            "The text relies on persuasion: it frames its claims emotionally rather than \
             presenting balanced evidence (deterministic mock signature {:02x}{:02x}).",
            h[0], h[1]
        );
    }
    "Mock response.".to_string()
}
