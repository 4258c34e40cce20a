//! Deterministic construction of every prompt variant in the pipeline.
//!
//! Prompts are assembled from typed components (impersonation, knowledge,
//! guidelines, analysis, document text) substituted into versioned template
//! files with `{{placeholder}}` syntax. Rendering is a pure function:
//! identical inputs produce byte-identical text and the same content hash.
//! Document text is fenced between explicit `BEGIN TEXT` / `END TEXT`
//! markers so instructions and content cannot be confused, and embedded
//! analyses are fenced the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;
use crate::parser::{strip_explanations, ParseGrade, PersuasionAnalysis};
use crate::taxonomy::{all_strategies, strategy, PersuasionStrategy, StrategyId};

/// Stage-1 prompt design: how much persuasion knowledge is infused and
/// whether the six strategies are covered by one prompt or six.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage1Kind {
    /// Single prompt, strategy names only, no definitions.
    BaseMT,
    /// Single prompt with strategy definitions.
    MT,
    /// Single prompt with strategy and technique definitions.
    DMT,
    /// Six per-strategy prompts, one strategy definition each.
    TAT,
    /// Six per-strategy prompts with the strategy's technique definitions.
    DTAT,
    /// Six per-strategy prompts, each carrying all strategy definitions.
    TATB,
}

impl Stage1Kind {
    pub const ALL: [Stage1Kind; 6] = [
        Stage1Kind::BaseMT,
        Stage1Kind::MT,
        Stage1Kind::DMT,
        Stage1Kind::TAT,
        Stage1Kind::DTAT,
        Stage1Kind::TATB,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Stage1Kind::BaseMT => "basemt",
            Stage1Kind::MT => "mt",
            Stage1Kind::DMT => "dmt",
            Stage1Kind::TAT => "tat",
            Stage1Kind::DTAT => "dtat",
            Stage1Kind::TATB => "tatb",
        }
    }

    /// Prompts issued per document: multitask kinds use one, the
    /// one-task-at-a-time family uses one per strategy.
    pub fn prompts_per_doc(self) -> usize {
        match self {
            Stage1Kind::BaseMT | Stage1Kind::MT | Stage1Kind::DMT => 1,
            Stage1Kind::TAT | Stage1Kind::DTAT | Stage1Kind::TATB => 6,
        }
    }

    fn parse_slug(s: &str) -> Option<Stage1Kind> {
        Self::ALL.into_iter().find(|k| k.slug() == s)
    }
}

/// Stage-2 prompt method: the baseline instruction style being used or
/// adapted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage2Kind {
    VaN,
    ZCoT,
    DeFSpeC,
}

impl Stage2Kind {
    pub const ALL: [Stage2Kind; 3] = [Stage2Kind::VaN, Stage2Kind::ZCoT, Stage2Kind::DeFSpeC];

    pub fn slug(self) -> &'static str {
        match self {
            Stage2Kind::VaN => "van",
            Stage2Kind::ZCoT => "zcot",
            Stage2Kind::DeFSpeC => "defspec",
        }
    }

    /// Human-readable method label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Stage2Kind::VaN => "VaN",
            Stage2Kind::ZCoT => "Z-CoT",
            Stage2Kind::DeFSpeC => "DeF-SpeC",
        }
    }

    fn parse_slug(s: &str) -> Option<Stage2Kind> {
        Self::ALL.into_iter().find(|k| k.slug() == s)
    }
}

/// How a stage-2 method relates to the two-stage pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Adaptation {
    /// The unmodified method, no persuasion content.
    Baseline,
    /// Two-stage: stage-1 analysis embedded into the stage-2 prompt.
    PCoT,
    /// Two-stage, but explanations are stripped before embedding.
    PCoTNoExplanation,
    /// One prompt performs persuasion analysis and detection together.
    PCoTSingleStep,
    /// Two-stage with a generic persuasion definition instead of the
    /// strategy taxonomy; the stage-1 output is free-form text.
    PCoTBaseVersion,
}

/// A fully specified experiment method: stage-1 design (if any), stage-2
/// method, and how the two are combined.
///
/// Construction enforces the structural invariants (baseline, single-step,
/// and base-version methods carry no stage-1 kind; the two-stage adaptations
/// require one), so a value of this type is always executable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodVariant {
    stage1: Option<Stage1Kind>,
    stage2: Stage2Kind,
    adaptation: Adaptation,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("variant {0} has no stage-1 prompt")]
    UnsupportedVariant(String),
    #[error("adaptation {0:?} requires a stage-1 kind")]
    MissingStage1(Adaptation),
    #[error("adaptation {0:?} must not carry a stage-1 kind")]
    UnexpectedStage1(Adaptation),
    #[error("PCoT adaptation rendered without a stage-1 analysis")]
    MissingAnalysis,
    #[error("baseline variant rendered with a stage-1 analysis")]
    UnexpectedAnalysis,
    #[error("document text is empty")]
    EmptyDocument,
    #[error("unresolved template placeholder: {{{{{0}}}}}")]
    UnresolvedPlaceholder(String),
    #[error("unknown method variant: {0:?}")]
    UnknownVariant(String),
}

impl MethodVariant {
    pub fn new(
        stage1: Option<Stage1Kind>,
        stage2: Stage2Kind,
        adaptation: Adaptation,
    ) -> Result<Self, PromptError> {
        match adaptation {
            Adaptation::Baseline | Adaptation::PCoTSingleStep | Adaptation::PCoTBaseVersion => {
                if stage1.is_some() {
                    return Err(PromptError::UnexpectedStage1(adaptation));
                }
            }
            Adaptation::PCoT | Adaptation::PCoTNoExplanation => {
                if stage1.is_none() {
                    return Err(PromptError::MissingStage1(adaptation));
                }
            }
        }
        Ok(Self { stage1, stage2, adaptation })
    }

    pub fn baseline(stage2: Stage2Kind) -> Self {
        Self { stage1: None, stage2, adaptation: Adaptation::Baseline }
    }

    /// The standard two-stage method with the detailed multitask stage 1.
    pub fn pcot(stage2: Stage2Kind) -> Self {
        Self::pcot_with(Stage1Kind::DMT, stage2)
    }

    pub fn pcot_with(stage1: Stage1Kind, stage2: Stage2Kind) -> Self {
        Self { stage1: Some(stage1), stage2, adaptation: Adaptation::PCoT }
    }

    pub fn pcot_no_explanation(stage2: Stage2Kind) -> Self {
        Self {
            stage1: Some(Stage1Kind::DMT),
            stage2,
            adaptation: Adaptation::PCoTNoExplanation,
        }
    }

    pub fn single_step(stage2: Stage2Kind) -> Self {
        Self { stage1: None, stage2, adaptation: Adaptation::PCoTSingleStep }
    }

    pub fn base_version(stage2: Stage2Kind) -> Self {
        Self { stage1: None, stage2, adaptation: Adaptation::PCoTBaseVersion }
    }

    pub fn stage1_kind(&self) -> Option<Stage1Kind> {
        self.stage1
    }

    pub fn stage2_kind(&self) -> Stage2Kind {
        self.stage2
    }

    pub fn adaptation(&self) -> Adaptation {
        self.adaptation
    }

    /// Whether executing this variant involves a stage-1 model call.
    pub fn has_stage1(&self) -> bool {
        self.stage1.is_some() || self.adaptation == Adaptation::PCoTBaseVersion
    }

    /// Identifier for the stage-1 artifact this variant consumes, shared by
    /// every variant that can reuse the same analysis.
    pub fn stage1_key(&self) -> Option<String> {
        match self.adaptation {
            Adaptation::PCoTBaseVersion => Some("bv".to_string()),
            _ => self.stage1.map(|k| k.slug().to_string()),
        }
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s2 = self.stage2.slug();
        match self.adaptation {
            Adaptation::Baseline => write!(f, "baseline-{s2}"),
            Adaptation::PCoT => match self.stage1 {
                Some(Stage1Kind::DMT) => write!(f, "pcot-{s2}"),
                Some(k) => write!(f, "pcot-{}-{s2}", k.slug()),
                None => unreachable!("PCoT variant without stage-1 kind"),
            },
            Adaptation::PCoTNoExplanation => match self.stage1 {
                Some(Stage1Kind::DMT) => write!(f, "pcot-noexp-{s2}"),
                Some(k) => write!(f, "pcot-noexp-{}-{s2}", k.slug()),
                None => unreachable!("PCoT variant without stage-1 kind"),
            },
            Adaptation::PCoTSingleStep => write!(f, "pcot-single-{s2}"),
            Adaptation::PCoTBaseVersion => write!(f, "pcot-bv-{s2}"),
        }
    }
}

impl FromStr for MethodVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || PromptError::UnknownVariant(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split('-').collect();
        let (&last, head) = parts.split_last().ok_or_else(unknown)?;
        let stage2 = Stage2Kind::parse_slug(last).ok_or_else(unknown)?;
        match head {
            ["baseline"] => Ok(MethodVariant::baseline(stage2)),
            ["pcot"] => Ok(MethodVariant::pcot(stage2)),
            ["pcot", "single"] => Ok(MethodVariant::single_step(stage2)),
            ["pcot", "bv"] => Ok(MethodVariant::base_version(stage2)),
            ["pcot", "noexp"] => Ok(MethodVariant::pcot_no_explanation(stage2)),
            ["pcot", kind] => Stage1Kind::parse_slug(kind)
                .map(|k| MethodVariant::pcot_with(k, stage2))
                .ok_or_else(unknown),
            ["pcot", "noexp", kind] => Stage1Kind::parse_slug(kind)
                .map(|k| MethodVariant {
                    stage1: Some(k),
                    stage2,
                    adaptation: Adaptation::PCoTNoExplanation,
                })
                .ok_or_else(unknown),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for MethodVariant {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MethodVariant {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The typed components a prompt is assembled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptComponentSet {
    pub impersonation: String,
    pub knowledge: Option<String>,
    pub guidelines: String,
    pub analysis: Option<String>,
    pub document_text: String,
}

/// A fully expanded prompt with a content hash suitable as a cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// 64-hex-digit SHA-256 of the hash scope and the prompt text. The scope
    /// identifies the (stage, kind, target strategy) so that stage-1 prompts
    /// shared across stage-2 methods hash identically; the model id joins the
    /// key at the gateway cache layer.
    pub content_hash: String,
    pub variant: MethodVariant,
}

/// One stage-1 prompt, tagged with the strategy it targets when the kind
/// issues one prompt per strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage1Prompt {
    pub target: Option<StrategyId>,
    pub prompt: RenderedPrompt,
}

/// Analyst persona for the persuasion-analysis stage. The exact wording is
/// this project's own; it is pinned by the prompt golden files.
pub const ANALYST_PERSONA: &str = "You are an expert media analyst who studies persuasion in news articles and social media posts. You examine every text objectively and thoroughly, you never refuse to analyze a text, and you always answer in exactly the format requested.";

/// Fact-checker persona for the disinformation-detection stage.
pub const FACT_CHECKER_PERSONA: &str = "You are an expert fact-checker with long experience in assessing the credibility of news articles and social media posts. You assess every text objectively, you never refuse to give an assessment, and you always answer in exactly the format requested.";

/// Combined persona for the single-step method.
pub const SINGLE_STEP_PERSONA: &str = "You are an expert media analyst and fact-checker who studies persuasion in news articles and social media posts and assesses their credibility. You work objectively, you never refuse to assess a text, and you always answer in exactly the format requested.";

/// Response-format guidelines for multitask stage-1 prompts.
pub const STAGE1_MULTI_GUIDELINES: &str = "Respond with a single JSON object containing exactly one key for each persuasion strategy listed above, using the exact strategy names as keys. Map each key to an object with two fields: \"label\", which must be \"Yes\" if the strategy is used in the text and \"No\" otherwise, and \"explanation\", a short justification for your decision that refers to the text. Output only the JSON object and nothing else.";

/// Response-format guidelines for per-strategy stage-1 prompts.
pub const STAGE1_SINGLE_GUIDELINES: &str = "Respond with a single JSON object whose only key is the exact name of the strategy to evaluate. Map that key to an object with two fields: \"label\", which must be \"Yes\" if the strategy is used in the text and \"No\" otherwise, and \"explanation\", a short justification for your decision that refers to the text. Output only the JSON object and nothing else.";

/// Response-format guidelines for stage-2 prompts.
pub const STAGE2_GUIDELINES: &str = "When you have made your decision, give your final answer as a single JSON object of the form {\"disinformation\": \"Yes\"} if the text contains disinformation, or {\"disinformation\": \"No\"} if it does not. The JSON object must be the last part of your response.";

/// Response-format guidelines for the single-step method.
pub const SINGLE_STEP_GUIDELINES: &str = "Respond with a single JSON object with two keys: \"persuasion_analysis\", mapping the exact name of every strategy listed above to an object with fields \"label\" (\"Yes\" or \"No\") and \"explanation\" (a short justification), and \"disinformation\", whose value must be \"Yes\" if the text contains disinformation and \"No\" otherwise. Output only the JSON object and nothing else.";

/// Task phrase unique to the base-version stage-1 template; the mock backend
/// keys on it to recognize that prompt family.
pub const BASE_VERSION_TASK_MARKER: &str =
    "write a short analysis of whether and how persuasion is used";

const TPL_STAGE1_BASE_MT: &str = include_str!("../templates/stage1_base_mt.tmpl");
const TPL_STAGE1_MT: &str = include_str!("../templates/stage1_mt.tmpl");
const TPL_STAGE1_DMT: &str = include_str!("../templates/stage1_dmt.tmpl");
const TPL_STAGE1_TAT: &str = include_str!("../templates/stage1_tat.tmpl");
const TPL_STAGE1_DTAT: &str = include_str!("../templates/stage1_dtat.tmpl");
const TPL_STAGE1_TATB: &str = include_str!("../templates/stage1_tatb.tmpl");
const TPL_STAGE1_BASE_VERSION: &str = include_str!("../templates/stage1_base_version.tmpl");
const TPL_STAGE2_BASELINE_VAN: &str = include_str!("../templates/stage2_baseline_van.tmpl");
const TPL_STAGE2_BASELINE_ZCOT: &str = include_str!("../templates/stage2_baseline_zcot.tmpl");
const TPL_STAGE2_BASELINE_DEFSPEC: &str = include_str!("../templates/stage2_baseline_defspec.tmpl");
const TPL_STAGE2_PCOT_VAN: &str = include_str!("../templates/stage2_pcot_van.tmpl");
const TPL_STAGE2_PCOT_ZCOT: &str = include_str!("../templates/stage2_pcot_zcot.tmpl");
const TPL_STAGE2_PCOT_DEFSPEC: &str = include_str!("../templates/stage2_pcot_defspec.tmpl");
const TPL_SINGLE_STEP_VAN: &str = include_str!("../templates/single_step_van.tmpl");
const TPL_SINGLE_STEP_ZCOT: &str = include_str!("../templates/single_step_zcot.tmpl");
const TPL_SINGLE_STEP_DEFSPEC: &str = include_str!("../templates/single_step_defspec.tmpl");

fn stage2_baseline_template(kind: Stage2Kind) -> &'static str {
    match kind {
        Stage2Kind::VaN => TPL_STAGE2_BASELINE_VAN,
        Stage2Kind::ZCoT => TPL_STAGE2_BASELINE_ZCOT,
        Stage2Kind::DeFSpeC => TPL_STAGE2_BASELINE_DEFSPEC,
    }
}

fn stage2_pcot_template(kind: Stage2Kind) -> &'static str {
    match kind {
        Stage2Kind::VaN => TPL_STAGE2_PCOT_VAN,
        Stage2Kind::ZCoT => TPL_STAGE2_PCOT_ZCOT,
        Stage2Kind::DeFSpeC => TPL_STAGE2_PCOT_DEFSPEC,
    }
}

fn single_step_template(kind: Stage2Kind) -> &'static str {
    match kind {
        Stage2Kind::VaN => TPL_SINGLE_STEP_VAN,
        Stage2Kind::ZCoT => TPL_SINGLE_STEP_ZCOT,
        Stage2Kind::DeFSpeC => TPL_SINGLE_STEP_DEFSPEC,
    }
}

/// Single-pass `{{placeholder}}` substitution. Substituted values are never
/// rescanned, so placeholder-like sequences inside document text are inert.
fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, value)) => out.push_str(value),
                    None => return Err(PromptError::UnresolvedPlaceholder(key.to_string())),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn content_hash(scope: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(scope.as_bytes());
    hasher.update(b"\n");
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn strategy_line(s: &PersuasionStrategy) -> String {
    format!("{} [{}]: {}", s.name, s.shortcut, s.definition)
}

fn technique_lines(s: &PersuasionStrategy) -> String {
    let mut out = String::from("Techniques:\n");
    for t in &s.techniques {
        out.push_str(&format!("- {}: {}\n", t.name, t.definition));
    }
    out.pop();
    out
}

/// Knowledge block with strategy names only.
fn knowledge_names(strategies: &[PersuasionStrategy]) -> String {
    strategies.iter().map(|s| format!("- {}", s.name)).collect::<Vec<_>>().join("\n")
}

/// Knowledge block with one definition line per strategy.
fn knowledge_definitions(strategies: &[PersuasionStrategy]) -> String {
    strategies.iter().map(strategy_line).collect::<Vec<_>>().join("\n")
}

/// Knowledge block with strategy definitions and their techniques.
fn knowledge_detailed(strategies: &[PersuasionStrategy]) -> String {
    strategies
        .iter()
        .map(|s| format!("{}\n{}", strategy_line(s), technique_lines(s)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn require_document_text(doc: &Document) -> Result<&str, PromptError> {
    if doc.text.is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    Ok(&doc.text)
}

fn validate_components(
    components: &PromptComponentSet,
    variant: &MethodVariant,
) -> Result<(), PromptError> {
    if components.document_text.is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    let wants_analysis = matches!(
        variant.adaptation(),
        Adaptation::PCoT | Adaptation::PCoTNoExplanation | Adaptation::PCoTBaseVersion
    );
    match (wants_analysis, components.analysis.is_some()) {
        (true, false) => Err(PromptError::MissingAnalysis),
        (false, true) => Err(PromptError::UnexpectedAnalysis),
        _ => Ok(()),
    }
}

/// Render the stage-1 prompt(s) for a variant. Multitask kinds return one
/// prompt; the one-task-at-a-time family returns six, in taxonomy order.
pub fn render_stage1(
    variant: MethodVariant,
    doc: &Document,
    strategies: &[PersuasionStrategy],
) -> Result<Vec<Stage1Prompt>, PromptError> {
    let Some(kind) = variant.stage1_kind() else {
        return Err(PromptError::UnsupportedVariant(variant.to_string()));
    };
    let text = require_document_text(doc)?;
    match kind {
        Stage1Kind::BaseMT | Stage1Kind::MT | Stage1Kind::DMT => {
            let (template, knowledge) = match kind {
                Stage1Kind::BaseMT => (TPL_STAGE1_BASE_MT, knowledge_names(strategies)),
                Stage1Kind::MT => (TPL_STAGE1_MT, knowledge_definitions(strategies)),
                _ => (TPL_STAGE1_DMT, knowledge_detailed(strategies)),
            };
            let rendered = render_template(
                template,
                &[
                    ("impersonation", ANALYST_PERSONA),
                    ("knowledge", &knowledge),
                    ("guidelines", STAGE1_MULTI_GUIDELINES),
                    ("document", text),
                ],
            )?;
            let scope = format!("stage1-{}", kind.slug());
            Ok(vec![Stage1Prompt {
                target: None,
                prompt: RenderedPrompt {
                    content_hash: content_hash(&scope, &rendered),
                    text: rendered,
                    variant,
                },
            }])
        }
        Stage1Kind::TAT | Stage1Kind::DTAT | Stage1Kind::TATB => {
            let template = match kind {
                Stage1Kind::TAT => TPL_STAGE1_TAT,
                Stage1Kind::DTAT => TPL_STAGE1_DTAT,
                _ => TPL_STAGE1_TATB,
            };
            strategies
                .iter()
                .map(|s| {
                    let knowledge = match kind {
                        Stage1Kind::TAT => strategy_line(s),
                        Stage1Kind::DTAT => format!("{}\n{}", strategy_line(s), technique_lines(s)),
                        _ => knowledge_definitions(strategies),
                    };
                    let rendered = render_template(
                        template,
                        &[
                            ("impersonation", ANALYST_PERSONA),
                            ("knowledge", &knowledge),
                            ("strategy_name", s.name),
                            ("guidelines", STAGE1_SINGLE_GUIDELINES),
                            ("document", text),
                        ],
                    )?;
                    let scope = format!("stage1-{}-{}", kind.slug(), s.shortcut.to_lowercase());
                    Ok(Stage1Prompt {
                        target: Some(s.id),
                        prompt: RenderedPrompt {
                            content_hash: content_hash(&scope, &rendered),
                            text: rendered,
                            variant,
                        },
                    })
                })
                .collect()
        }
    }
}

/// Render a stage-2 prompt. PCoT adaptations embed the serialized analysis
/// before the document text; the no-explanation adaptation strips
/// explanations first.
pub fn render_stage2(
    variant: MethodVariant,
    doc: &Document,
    analysis: Option<&PersuasionAnalysis>,
) -> Result<RenderedPrompt, PromptError> {
    let text = require_document_text(doc)?;
    let (template, analysis_block) = match variant.adaptation() {
        Adaptation::Baseline => {
            if analysis.is_some() {
                return Err(PromptError::UnexpectedAnalysis);
            }
            (stage2_baseline_template(variant.stage2_kind()), None)
        }
        Adaptation::PCoT => {
            let a = analysis.ok_or(PromptError::MissingAnalysis)?;
            (stage2_pcot_template(variant.stage2_kind()), Some(a.to_prompt_json()))
        }
        Adaptation::PCoTNoExplanation => {
            let a = analysis.ok_or(PromptError::MissingAnalysis)?;
            // The sentinel already carries no explanations.
            let embedded = if a.parse_grade == ParseGrade::Failed {
                a.clone()
            } else {
                strip_explanations(a).expect("non-failed analysis strips cleanly")
            };
            (stage2_pcot_template(variant.stage2_kind()), Some(embedded.to_prompt_json()))
        }
        Adaptation::PCoTSingleStep | Adaptation::PCoTBaseVersion => {
            return Err(PromptError::UnsupportedVariant(variant.to_string()));
        }
    };
    let components = PromptComponentSet {
        impersonation: FACT_CHECKER_PERSONA.to_string(),
        knowledge: None,
        guidelines: STAGE2_GUIDELINES.to_string(),
        analysis: analysis_block,
        document_text: text.to_string(),
    };
    validate_components(&components, &variant)?;
    let mut values = vec![
        ("impersonation", components.impersonation.as_str()),
        ("guidelines", components.guidelines.as_str()),
        ("document", components.document_text.as_str()),
    ];
    if let Some(block) = components.analysis.as_deref() {
        values.push(("analysis", block));
    }
    let rendered = render_template(template, &values)?;
    let scope = format!("stage2-{variant}");
    Ok(RenderedPrompt {
        content_hash: content_hash(&scope, &rendered),
        text: rendered,
        variant,
    })
}

/// Render the single prompt that performs persuasion analysis and
/// disinformation detection in one response.
pub fn render_single_step(
    stage2: Stage2Kind,
    doc: &Document,
    strategies: &[PersuasionStrategy],
) -> Result<RenderedPrompt, PromptError> {
    let text = require_document_text(doc)?;
    let variant = MethodVariant::single_step(stage2);
    let knowledge = knowledge_detailed(strategies);
    let rendered = render_template(
        single_step_template(stage2),
        &[
            ("impersonation", SINGLE_STEP_PERSONA),
            ("knowledge", &knowledge),
            ("guidelines", SINGLE_STEP_GUIDELINES),
            ("document", text),
        ],
    )?;
    let scope = format!("singlestep-{}", stage2.slug());
    Ok(RenderedPrompt {
        content_hash: content_hash(&scope, &rendered),
        text: rendered,
        variant,
    })
}

/// Render the base-version pair: a stage-1 prompt with a generic persuasion
/// definition (no strategy names) and the stage-2 prompt that embeds the
/// free-form analysis produced by stage 1. The second element depends on
/// `analysis_text`; render with the real stage-1 output once it exists.
pub fn render_base_version(
    stage2: Stage2Kind,
    doc: &Document,
    analysis_text: &str,
) -> Result<(RenderedPrompt, RenderedPrompt), PromptError> {
    let text = require_document_text(doc)?;
    let variant = MethodVariant::base_version(stage2);
    let stage1_text = render_template(
        TPL_STAGE1_BASE_VERSION,
        &[("impersonation", ANALYST_PERSONA), ("document", text)],
    )?;
    let stage1 = RenderedPrompt {
        content_hash: content_hash("stage1-bv", &stage1_text),
        text: stage1_text,
        variant,
    };
    let stage2_text = render_template(
        stage2_pcot_template(stage2),
        &[
            ("impersonation", FACT_CHECKER_PERSONA),
            ("guidelines", STAGE2_GUIDELINES),
            ("analysis", analysis_text),
            ("document", text),
        ],
    )?;
    let stage2 = RenderedPrompt {
        content_hash: content_hash(&format!("stage2-{variant}"), &stage2_text),
        text: stage2_text,
        variant,
    };
    Ok((stage1, stage2))
}

/// Render every prompt family for one document, named for prompt dumps and
/// golden-file tests. The PCoT stage-2 prompts embed `sample_analysis`, and
/// the base-version stage-2 prompt embeds `sample_free_form`.
pub fn render_all_for_document(
    doc: &Document,
    sample_analysis: &PersuasionAnalysis,
    sample_free_form: &str,
) -> Result<Vec<(String, RenderedPrompt)>, PromptError> {
    let strategies = all_strategies();
    let mut out = Vec::new();
    for kind in Stage1Kind::ALL {
        let variant = MethodVariant::pcot_with(kind, Stage2Kind::VaN);
        for p in render_stage1(variant, doc, strategies)? {
            let name = match p.target {
                Some(id) => format!(
                    "stage1_{}_{}",
                    kind.slug(),
                    strategy(id).shortcut.to_lowercase()
                ),
                None => format!("stage1_{}", kind.slug()),
            };
            out.push((name, p.prompt));
        }
    }
    for s2 in Stage2Kind::ALL {
        out.push((
            format!("stage2_baseline_{}", s2.slug()),
            render_stage2(MethodVariant::baseline(s2), doc, None)?,
        ));
        out.push((
            format!("stage2_pcot_{}", s2.slug()),
            render_stage2(MethodVariant::pcot(s2), doc, Some(sample_analysis))?,
        ));
        out.push((
            format!("stage2_pcot_noexp_{}", s2.slug()),
            render_stage2(MethodVariant::pcot_no_explanation(s2), doc, Some(sample_analysis))?,
        ));
        out.push((format!("single_step_{}", s2.slug()), render_single_step(s2, doc, strategies)?));
        let (bv1, bv2) = render_base_version(s2, doc, sample_free_form)?;
        if s2 == Stage2Kind::VaN {
            out.push(("stage1_bv".to_string(), bv1));
        }
        out.push((format!("stage2_bv_{}", s2.slug()), bv2));
    }
    Ok(out)
}
