//! Two-stage persuasion-augmented pipeline for zero-shot disinformation
//! detection.
//!
//! The pipeline first asks a model to analyze which persuasion strategies a
//! text uses, then feeds that analysis into a second prompt that decides
//! whether the text is disinformation. This crate provides every layer needed
//! to run and evaluate that pipeline:
//!
//! - [`taxonomy`] — the fixed six-strategy / 23-technique persuasion taxonomy
//! - [`prompt`] — deterministic construction of every prompt variant
//! - [`gateway`] — provider-agnostic chat completions with caching, retries,
//!   budgets, and a rule-based mock backend
//! - [`parser`] — total decoding of model output with layered repair
//! - [`corpus`] — dataset ingestion into a unified record schema plus seeded
//!   sampling
//! - [`metrics`] — F1, multi-label micro F1, McNemar's test, Matthews
//!   correlation, and subset/distribution analyses
//! - [`runner`] — the experiment matrix executor with resume and budgets
//! - [`report`] — table and CSV generation from a results store
//! - [`store`] — the JSONL results store and its manifest

pub mod corpus;
pub mod gateway;
pub mod label;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod report;
pub mod runner;
pub mod store;
pub mod taxonomy;

pub use label::Credibility;
pub use parser::{ParseGrade, PersuasionAnalysis, Presence, Verdict};
pub use prompt::{Adaptation, MethodVariant, RenderedPrompt, Stage1Kind, Stage2Kind};
pub use taxonomy::{PersuasionStrategy, PersuasionTechnique, StrategyId};
