//! The fixed taxonomy of six persuasion strategies and their 23 techniques.
//!
//! The taxonomy is compiled-in data: the pipeline treats it as fixed knowledge
//! that prompt construction and response parsing both depend on, so it lives
//! here as immutable structured data rather than a runtime config file.
//! [`export_text`] produces a canonical text rendering for documentation and
//! golden-file tests.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier for one of the six persuasion strategies.
///
/// Declaration order is the canonical presentation order (AR, J, S, D, C, MW);
/// `Ord` and all taxonomy-ordered serializations rely on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "Attack on reputation")]
    AttackOnReputation,
    #[serde(rename = "Justification")]
    Justification,
    #[serde(rename = "Simplification")]
    Simplification,
    #[serde(rename = "Distraction")]
    Distraction,
    #[serde(rename = "Call")]
    Call,
    #[serde(rename = "Manipulative wording")]
    ManipulativeWording,
}

impl StrategyId {
    /// All six ids in canonical order.
    pub const ALL: [StrategyId; 6] = [
        StrategyId::AttackOnReputation,
        StrategyId::Justification,
        StrategyId::Simplification,
        StrategyId::Distraction,
        StrategyId::Call,
        StrategyId::ManipulativeWording,
    ];

    /// Canonical display name, e.g. `"Attack on reputation"`.
    pub fn name(self) -> &'static str {
        match self {
            StrategyId::AttackOnReputation => "Attack on reputation",
            StrategyId::Justification => "Justification",
            StrategyId::Simplification => "Simplification",
            StrategyId::Distraction => "Distraction",
            StrategyId::Call => "Call",
            StrategyId::ManipulativeWording => "Manipulative wording",
        }
    }

    /// Two-letter shortcut code, e.g. `"AR"`.
    pub fn shortcut(self) -> &'static str {
        match self {
            StrategyId::AttackOnReputation => "AR",
            StrategyId::Justification => "J",
            StrategyId::Simplification => "S",
            StrategyId::Distraction => "D",
            StrategyId::Call => "C",
            StrategyId::ManipulativeWording => "MW",
        }
    }

    /// Position in canonical order (0..6).
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A persuasion technique belonging to exactly one strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersuasionTechnique {
    pub name: &'static str,
    pub definition: &'static str,
    pub parent: StrategyId,
}

/// A persuasion strategy with its definition and constituent techniques.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersuasionStrategy {
    pub id: StrategyId,
    pub name: &'static str,
    pub shortcut: &'static str,
    pub definition: &'static str,
    pub techniques: Vec<PersuasionTechnique>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown persuasion strategy: {0:?}")]
    UnknownStrategy(String),
}

const AR_DEF: &str = "the argument does not address the topic itself but targets the participant (personality, experience, etc.) to question and/or undermine their credibility. The object of the argumentation can also refer to a group of individuals, an organization, an object, or an activity.";
const J_DEF: &str = "the argument is made of two parts, a statement and an explanation or appeal, where the latter is used to justify and/or to support the statement.";
const S_DEF: &str = "the argument excessively simplifies a problem, usually regarding the cause, the consequence, or the existence of choices.";
const D_DEF: &str = "the argument takes focus away from the main topic or argument to distract the reader.";
const C_DEF: &str = "the text is not an argument, but an encouragement to act or to think in a particular way.";
const MW_DEF: &str = "the text is not an argument per se, but uses specific language, which contains words or phrases that are either non-neutral, confusing, exaggerating, loaded, etc., in order to impact the reader emotionally.";

fn technique(parent: StrategyId, name: &'static str, definition: &'static str) -> PersuasionTechnique {
    PersuasionTechnique { name, definition, parent }
}

fn build_taxonomy() -> Vec<PersuasionStrategy> {
    use StrategyId::*;
    vec![
        PersuasionStrategy {
            id: AttackOnReputation,
            name: AttackOnReputation.name(),
            shortcut: AttackOnReputation.shortcut(),
            definition: AR_DEF,
            techniques: vec![
                technique(AttackOnReputation, "Name Calling or Labelling", "a form of argument in which loaded labels are directed at an individual, group, object or activity, typically in an insulting or demeaning way, but also using labels the target audience finds desirable."),
                technique(AttackOnReputation, "Guilt by Association", "attacking the opponent or an activity by associating it with another group, activity or concept that has sharp negative connotations for the target audience."),
                technique(AttackOnReputation, "Casting Doubt", "questioning the character or personal attributes of someone or something in order to question their general credibility or quality."),
                technique(AttackOnReputation, "Appeal to Hypocrisy", "the target of the technique is attacked on its reputation by charging them with hypocrisy/inconsistency."),
                technique(AttackOnReputation, "Questioning the Reputation", "the target is attacked by making strong negative claims about it, focusing specially on undermining its character and moral stature rather than relying on an argument about the topic."),
            ],
        },
        PersuasionStrategy {
            id: Justification,
            name: Justification.name(),
            shortcut: Justification.shortcut(),
            definition: J_DEF,
            techniques: vec![
                technique(Justification, "Flag Waving", "justifying an idea by exhaling the pride of a group or highlighting the benefits for that specific group."),
                technique(Justification, "Appeal to Authority", "a weight is given to an argument, an idea or information by simply stating that a particular entity considered as an authority is the source of the information."),
                technique(Justification, "Appeal to Popularity", "a weight is given to an argument or idea by justifying it on the basis that allegedly \"everybody\" (or the large majority) agrees with it or \"nobody\" disagrees with it."),
                technique(Justification, "Appeal to Values", "a weight is given to an idea by linking it to values seen by the target audience as positive."),
                technique(Justification, "Appeal to Fear, Prejudice", "promotes or rejects an idea through the repulsion or fear of the audience towards this idea."),
            ],
        },
        PersuasionStrategy {
            id: Simplification,
            name: Simplification.name(),
            shortcut: Simplification.shortcut(),
            definition: S_DEF,
            techniques: vec![
                technique(Simplification, "Causal Oversimplification", "assuming a single cause or reason when there are actually multiple causes for an issue."),
                technique(Simplification, "False Dilemma or No Choice", "a logical fallacy that presents only two options or sides when there are many options or sides. In extreme, the author tells the audience exactly what actions to take, eliminating any other possible choices."),
                technique(Simplification, "Consequential Oversimplification", "is an assertion one is making of some \"first\" event/action leading to a domino-like chain of events that have some significant negative (positive) effects and consequences that appear to be ludicrous or unwarranted or with each step in the chain more and more improbable."),
            ],
        },
        PersuasionStrategy {
            id: Distraction,
            name: Distraction.name(),
            shortcut: Distraction.shortcut(),
            definition: D_DEF,
            techniques: vec![
                technique(Distraction, "Strawman", "consists in making an impression of refuting an argument of the opponent\u{2019}s proposition, whereas the real subject of the argument was not addressed or refuted, but instead replaced with a false one."),
                technique(Distraction, "Red Herring", "consists in diverting the attention of the audience from the main topic being discussed, by introducing another topic, which is irrelevant."),
                technique(Distraction, "Whataboutism", "a technique that attempts to discredit an opponent\u{2019}s position by charging them with hypocrisy without directly disproving their argument."),
            ],
        },
        PersuasionStrategy {
            id: Call,
            name: Call.name(),
            shortcut: Call.shortcut(),
            definition: C_DEF,
            techniques: vec![
                technique(Call, "Slogans", "a brief and striking phrase, often acting like emotional appeals, that may include labeling and stereotyping."),
                technique(Call, "Conversation Killer", "words or phrases that discourage critical thought and meaningful discussion about a given topic."),
                technique(Call, "Appeal to Time", "the argument is centred around the idea that time has come for a particular action."),
            ],
        },
        PersuasionStrategy {
            id: ManipulativeWording,
            name: ManipulativeWording.name(),
            shortcut: ManipulativeWording.shortcut(),
            definition: MW_DEF,
            techniques: vec![
                technique(ManipulativeWording, "Loaded Language", "use of specific words and phrases with strong emotional implications (either positive or negative) to influence and convince the audience that an argument is valid."),
                technique(ManipulativeWording, "Obfuscation, Intentional Vagueness, Confusion", "use of words that are deliberately not clear, vague or ambiguous so that the audience may have its own interpretations."),
                technique(ManipulativeWording, "Exaggeration or Minimisation", "consists of either representing something in an excessive manner or making something seem less important or smaller than it really is."),
                technique(ManipulativeWording, "Repetition", "the speaker uses the same phrase repeatedly with the hopes that the repetition will lead to persuade the audience."),
            ],
        },
    ]
}

/// The six persuasion strategies in canonical order (AR, J, S, D, C, MW).
pub fn all_strategies() -> &'static [PersuasionStrategy] {
    static TAXONOMY: OnceLock<Vec<PersuasionStrategy>> = OnceLock::new();
    TAXONOMY.get_or_init(build_taxonomy)
}

/// Look up a strategy by id.
pub fn strategy(id: StrategyId) -> &'static PersuasionStrategy {
    &all_strategies()[id.index()]
}

/// Resolve a strategy from any casing/whitespace variant of its name or shortcut.
pub fn resolve_strategy(name_or_shortcut: &str) -> Result<&'static PersuasionStrategy, TaxonomyError> {
    let needle = name_or_shortcut.trim();
    all_strategies()
        .iter()
        .find(|s| s.name.eq_ignore_ascii_case(needle) || s.shortcut.eq_ignore_ascii_case(needle))
        .ok_or_else(|| TaxonomyError::UnknownStrategy(name_or_shortcut.to_string()))
}

/// Canonical UTF-8 text export: one strategy block per section, with the
/// strategy line followed by its techniques. Pinned by a golden-file test.
pub fn export_text() -> String {
    let mut out = String::new();
    for s in all_strategies() {
        out.push_str(&format!("{} [{}]: {}\n", s.name, s.shortcut, s.definition));
        out.push_str("Techniques:\n");
        for t in &s.techniques {
            out.push_str(&format!("- {}: {}\n", t.name, t.definition));
        }
        out.push('\n');
    }
    out
}
