//! Issue report classification pipeline.
//!
//! The crate covers every stage of the workflow: loading labeled issue
//! reports from CSV ([`corpus`]), normalizing their text ([`textclean`]),
//! building chat-format fine-tuning files ([`promptgen`]), talking to an
//! OpenAI-compatible service or the bundled stub ([`gateway`]), classifying
//! test issues with a fine-tuned model or an offline naive Bayes baseline
//! ([`classify`]) and scoring the results ([`metrics`]).
//!
//! Batch stages (cleaning, baseline prediction, per-repository scoring) run
//! on rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise. See [`exec`].

pub mod classify;
pub mod corpus;
pub mod exec;
pub mod gateway;
pub mod metrics;
pub mod promptgen;
pub mod registry;
pub mod textclean;

pub use classify::{BaselineModel, Engine, Prediction};
pub use corpus::{IssueRecord, Label, RepoSplit, Role};
pub use exec::Execution;
pub use gateway::{Gateway, GatewayConfig};
pub use metrics::{EvalReport, LabelCounts, LabelScores, OverallReport};
pub use promptgen::{ChatExample, ChatMessage, ChatRole};
pub use registry::{ModelRegistry, RegistryEntry};
pub use textclean::{CleanedIssue, CleaningConfig, CleaningMethod};
