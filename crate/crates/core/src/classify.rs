//! Per-repository classification with a fine-tuned model or the offline
//! naive Bayes baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, UnknownLabel};
use crate::exec::Execution;
use crate::gateway::{ChatCompletion, CompletionRequest};
use crate::promptgen::{build_inference_messages, PromptOptions};
use crate::registry::{ModelRegistry, RegistryError};
use crate::textclean::CleanedIssue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[serde(rename = "finetuned")]
    FineTuned,
    Baseline,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::FineTuned => "finetuned",
            Engine::Baseline => "baseline",
        })
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finetuned" => Ok(Engine::FineTuned),
            "baseline" => Ok(Engine::Baseline),
            other => Err(format!("unknown engine {other:?} (expected finetuned or baseline)")),
        }
    }
}

/// Outcome for one test issue. `predicted` is `None` when the response did
/// not parse as a label; such rows always count as misclassified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub issue_index: usize,
    pub expected: Label,
    pub predicted: Option<Label>,
    pub raw_response: String,
    pub engine: Engine,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.expected)
    }
}

/// Normalizes a model reply and matches it exactly against the three labels.
///
/// Surrounding whitespace, quotes, backticks and periods are stripped and
/// case is folded. No fuzzy matching: `"bugs"` is rejected.
pub fn parse_label(raw: &str) -> Result<Label, UnknownLabel> {
    let trimmed = raw.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.') || c.is_whitespace());
    trimmed.to_lowercase().parse().map_err(|_| UnknownLabel(raw.to_string()))
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no training issues labeled {0}")]
    EmptyLabel(Label),
    #[error("smoothing alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("predictions file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multinomial naive Bayes over whitespace tokens with additive smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub alpha: f64,
    pub log_priors: [f64; 3],
    /// Per-token log likelihoods, indexed by [`Label::index`].
    pub token_log_probs: BTreeMap<String, [f64; 3]>,
    /// Log likelihood assigned to a token outside the vocabulary.
    pub unseen_log_probs: [f64; 3],
}

/// Fits the baseline on title and body tokens of `train`.
pub fn train_baseline(train: &[CleanedIssue], alpha: f64) -> Result<BaselineModel, ClassifyError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ClassifyError::BadAlpha(alpha));
    }
    let mut docs = [0u64; 3];
    let mut totals = [0u64; 3];
    let mut counts: BTreeMap<&str, [u64; 3]> = BTreeMap::new();
    for issue in train {
        let l = issue.label.index();
        docs[l] += 1;
        for tok in issue.tokens() {
            counts.entry(tok).or_default()[l] += 1;
            totals[l] += 1;
        }
    }
    if let Some(label) = Label::ALL.into_iter().find(|l| docs[l.index()] == 0) {
        return Err(ClassifyError::EmptyLabel(label));
    }
    let n_docs: u64 = docs.iter().sum();
    let vocab = counts.len() as f64;
    let denom = totals.map(|t| t as f64 + alpha * vocab);
    let token_log_probs = counts
        .into_iter()
        .map(|(tok, c)| {
            let lp = [0, 1, 2].map(|l| ((c[l] as f64 + alpha) / denom[l]).ln());
            (tok.to_string(), lp)
        })
        .collect();
    Ok(BaselineModel {
        alpha,
        log_priors: docs.map(|d| (d as f64 / n_docs as f64).ln()),
        token_log_probs,
        unseen_log_probs: denom.map(|d| (alpha / d).ln()),
    })
}

impl BaselineModel {
    /// Smoothed P(token | label); unseen tokens get `alpha / (total + alpha * |V|)`.
    pub fn likelihood(&self, label: Label, token: &str) -> f64 {
        self.token_log_probs.get(token).map_or(self.unseen_log_probs[label.index()], |lp| lp[label.index()]).exp()
    }

    /// Log prior plus the log likelihood of every in-vocabulary token.
    /// Tokens never seen in training carry no evidence and are skipped.
    pub fn log_posteriors<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> [f64; 3] {
        let mut scores = self.log_priors;
        for tok in tokens {
            if let Some(lp) = self.token_log_probs.get(tok) {
                for l in 0..3 {
                    scores[l] += lp[l];
                }
            }
        }
        scores
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.token_log_probs.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model always serializes")
    }
}

/// Argmax of the log posteriors; ties go to the first label in
/// bug < feature < question order.
pub fn predict_baseline(model: &BaselineModel, issue: &CleanedIssue) -> Label {
    argmax(&model.log_posteriors(issue.tokens()))
}

fn argmax(scores: &[f64; 3]) -> Label {
    let mut best = Label::Bug;
    for label in &Label::ALL[1..] {
        if scores[label.index()] > scores[best.index()] {
            best = *label;
        }
    }
    best
}

/// What answers the classification requests.
pub enum Backend<'a> {
    FineTuned { client: &'a dyn ChatCompletion, prompt: &'a PromptOptions },
    Baseline(&'a BaselineModel),
}

/// Predictions for one repository plus gateway failure bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifyRun {
    pub predictions: Vec<Prediction>,
    /// Requests that ended in a gateway error (recorded as unparsed rows).
    pub gateway_failures: usize,
    /// First error that will affect every request (e.g. rejected credentials).
    pub systemic_failure: Option<String>,
}

/// Classifies every test issue of `repository`, keeping input order.
///
/// Fine-tuned requests use the repository's registered model with
/// `max_tokens = 1` and `temperature = 0`, at most `max_workers` in flight.
/// A request that still fails after retries becomes an unparsed prediction
/// whose `raw_response` is the error text; the run continues.
pub fn classify_repo(
    repository: &str,
    test: &[CleanedIssue],
    registry: &ModelRegistry,
    backend: &Backend<'_>,
    exec: Execution,
    max_workers: usize,
) -> Result<ClassifyRun, ClassifyError> {
    registry.get(repository)?;
    match backend {
        Backend::Baseline(model) => {
            let predictions = exec
                .map(test, |issue| predict_baseline(model, issue))
                .into_iter()
                .zip(test)
                .enumerate()
                .map(|(i, (label, issue))| Prediction {
                    issue_index: i,
                    expected: issue.label,
                    predicted: Some(label),
                    raw_response: label.to_string(),
                    engine: Engine::Baseline,
                })
                .collect();
            Ok(ClassifyRun { predictions, gateway_failures: 0, systemic_failure: None })
        }
        Backend::FineTuned { client, prompt } => {
            let model_id = registry.model_id(repository)?;
            let replies = exec.map_bounded(test, max_workers, |issue| {
                let req = CompletionRequest::classification(model_id, build_inference_messages(issue, prompt));
                client.complete(&req)
            });
            let mut run = ClassifyRun {
                predictions: Vec::with_capacity(test.len()),
                gateway_failures: 0,
                systemic_failure: None,
            };
            for (i, (reply, issue)) in replies.into_iter().zip(test).enumerate() {
                let (predicted, raw_response) = match reply {
                    Ok(raw) => (parse_label(&raw).ok(), raw),
                    Err(e) => {
                        run.gateway_failures += 1;
                        if e.is_systemic() && run.systemic_failure.is_none() {
                            run.systemic_failure = Some(e.to_string());
                        }
                        (None, e.to_string())
                    }
                };
                run.predictions.push(Prediction {
                    issue_index: i,
                    expected: issue.label,
                    predicted,
                    raw_response,
                    engine: Engine::FineTuned,
                });
            }
            Ok(run)
        }
    }
}

/// Writes predictions as CSV: `issue_index,expected,predicted,raw_response,engine`.
pub fn write_predictions_csv(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in predictions {
        w.serialize(p)?;
    }
    if predictions.is_empty() {
        w.write_record(["issue_index", "expected", "predicted", "raw_response", "engine"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<Prediction>, ClassifyError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
