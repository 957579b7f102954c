//! Helpers shared by the integration test targets: random input strategies,
//! independent oracles and the published evaluation tables.

#![allow(dead_code)]

use proptest::prelude::*;
use triage_core::classify::{Engine, Prediction};
use triage_core::corpus::{IssueRecord, Label};
use triage_core::metrics::LabelCounts;
use triage_core::promptgen::{ChatExample, ChatMessage, ChatRole};
use triage_core::textclean::{CleaningConfig, CleaningMethod};

pub const PLACEHOLDERS: [&str; 4] = ["<URL>", "<HTML_TAG>", "<USER>", "<IMAGE>"];

// ---------------------------------------------------------------------------
// Cleaning

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("https://example.com/a?b=c".to_string()),
        Just("HTTP://X.IO/P".to_string()),
        Just("<b>".to_string()),
        Just("</div>".to_string()),
        Just("<!-- c -->".to_string()),
        Just("<img src=\"x.png\"/>".to_string()),
        Just("\u{1F600}".to_string()),
        Just("\u{1F468}\u{200D}\u{1F469}".to_string()),
        Just("\u{2764}\u{FE0F}".to_string()),
        Just("@octocat".to_string()),
        Just("me@host.org".to_string()),
        Just("![alt](http://i.img/x.png)".to_string()),
        Just("[text](http://d.io)".to_string()),
        Just("## ".to_string()),
        Just("\n> ".to_string()),
        Just("\n- ".to_string()),
        Just("```".to_string()),
        Just("**".to_string()),
        Just("`".to_string()),
        Just("\"".to_string()),
        Just("<URL>".to_string()),
        Just("<HTML_TAG>".to_string()),
        Just("<USER>".to_string()),
        Just("<IMAGE>".to_string()),
        Just("<url>".to_string()),
        Just("\u{E000}".to_string()),
        Just("\u{130}".to_string()),
        Just("\u{1C5}".to_string()),
        Just("\u{1D400}".to_string()),
        Just("\u{3A3}".to_string()),
        Just(" \t\n  ".to_string()),
        "[A-Za-z]{1,30}",
        "[a-z0-9_.,!?()-]{1,8}",
        any::<char>().prop_map(String::from),
    ]
}

/// Random UTF-8 text: either arbitrary code points or a mix of noisy
/// fragments (URLs, tags, emoji, mentions, Markdown, placeholders).
pub fn noisy_text() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<String>(),
        prop::collection::vec(fragment(), 0..24).prop_map(|v| v.concat()),
        prop::collection::vec(fragment(), 0..12).prop_map(|v| v.join(" ")),
    ]
}

/// Checks every documented output property of a cleaning method.
pub fn check_clean_invariants(cfg: &CleaningConfig, input: &str) -> Result<(), String> {
    let out = cfg.clean(input);
    let again = cfg.clean(&out);
    if again != out {
        return Err(format!("not idempotent: {input:?} -> {out:?} -> {again:?}"));
    }
    if out.starts_with(' ') || out.ends_with(' ') || out.contains("  ") {
        return Err(format!("whitespace not collapsed: {out:?}"));
    }
    if out.chars().any(|c| c.is_whitespace() && c != ' ') {
        return Err(format!("non-space whitespace survived: {out:?}"));
    }
    for tok in out.split(' ').filter(|t| !t.is_empty()) {
        let placeholder = PLACEHOLDERS.contains(&tok);
        if placeholder {
            if cfg.method == CleaningMethod::Method1 {
                return Err(format!("method1 emitted placeholder {tok:?}"));
            }
            continue;
        }
        if let Some(c) = tok.chars().find(|&c| !(c.is_alphanumeric() && !c.is_uppercase())) {
            return Err(format!("character {c:?} outside the output alphabet in {out:?}"));
        }
        if tok.chars().count() > cfg.max_token_len {
            return Err(format!("token {tok:?} longer than {}", cfg.max_token_len));
        }
    }
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
pub struct GoldenCase {
    pub method: String,
    pub input: String,
    pub expected: String,
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let text = include_str!("../fixtures/clean_golden.json");
    serde_json::from_str(text).expect("golden file parses")
}

// ---------------------------------------------------------------------------
// Chat examples

fn content() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<String>(),
        "[a-z \"'\\\\\n\t{}:,\\[\\]]{0,40}",
        Just("quote \" backslash \\ newline \n tab \t cr \r nul \u{0} ls \u{2028}".to_string()),
        Just("ünïcödé 日本語 \u{1F600} עברית".to_string()),
    ]
    .prop_filter("content must be non-empty", |s| !s.is_empty())
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Bug), Just(Label::Feature), Just(Label::Question)]
}

/// Random valid training examples with hostile content.
pub fn chat_example() -> impl Strategy<Value = ChatExample> {
    (prop::option::of(content()), content(), label()).prop_map(|(system, user, label)| {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(ChatMessage::new(ChatRole::System, s));
        }
        messages.push(ChatMessage::new(ChatRole::User, user));
        messages.push(ChatMessage::new(ChatRole::Assistant, label.as_str()));
        ChatExample { messages }
    })
}

// ---------------------------------------------------------------------------
// Metrics

pub fn prediction(expected: Label, predicted: Option<Label>) -> Prediction {
    Prediction {
        issue_index: 0,
        expected,
        predicted,
        raw_response: predicted.map(|l| l.to_string()).unwrap_or_else(|| "???".into()),
        engine: Engine::FineTuned,
    }
}

pub fn prediction_set() -> impl Strategy<Value = Vec<Prediction>> {
    prop::collection::vec((label(), prop::option::weighted(0.85, label())).prop_map(|(e, p)| prediction(e, p)), 1..25)
}

/// Precision, recall and F1 of one label by direct enumeration. F1 takes the
/// count route 2TP / (2TP + FP + FN) rather than the harmonic mean.
pub fn brute_force_scores(preds: &[Prediction], label: Label) -> (f64, f64, f64) {
    let predicted_as: Vec<&Prediction> = preds.iter().filter(|p| p.predicted == Some(label)).collect();
    let actually: Vec<&Prediction> = preds.iter().filter(|p| p.expected == label).collect();
    let hits = predicted_as.iter().filter(|p| p.expected == label).count() as f64;
    let precision = if predicted_as.is_empty() { 0.0 } else { hits / predicted_as.len() as f64 };
    let recall = if actually.is_empty() { 0.0 } else { hits / actually.len() as f64 };
    let misses = (predicted_as.len() as f64 - hits) + (actually.len() as f64 - hits);
    let f1 = if hits == 0.0 { 0.0 } else { 2.0 * hits / (2.0 * hits + misses) };
    (precision, recall, f1)
}

/// Published confusion rows, in the published label order (bug, feature,
/// question): repository, then (TP, FP, FN, TN) per label.
pub type CountsRow = (u64, u64, u64, u64);
pub type ScoresRow = (f64, f64, f64);

pub const CONFUSION_TABLE: [(&str, [CountsRow; 3]); 5] = [
    ("facebook/react", [(89, 15, 11, 185), (95, 19, 5, 181), (74, 8, 26, 192)]),
    ("tensorflow/tensorflow", [(82, 6, 18, 194), (88, 9, 12, 191), (91, 24, 9, 176)]),
    ("microsoft/vscode", [(87, 20, 13, 180), (80, 14, 20, 186), (79, 20, 21, 180)]),
    ("bitcoin/bitcoin", [(89, 18, 11, 182), (80, 29, 20, 171), (62, 22, 38, 178)]),
    ("opencv/opencv", [(80, 8, 20, 192), (86, 32, 14, 168), (81, 13, 19, 187)]),
];

/// Published scores: repository, then (P, R, F1) for bug, feature, question
/// and the repository average.
pub const METRICS_TABLE: [(&str, [ScoresRow; 4]); 5] = [
    (
        "facebook/react",
        [(0.8333, 0.9500, 0.8878), (0.8557, 0.8900, 0.8725), (0.9024, 0.7400, 0.8132), (0.8635, 0.8600, 0.8579)],
    ),
    (
        "tensorflow/tensorflow",
        [(0.9072, 0.8800, 0.8934), (0.9318, 0.8200, 0.8723), (0.7913, 0.9100, 0.8465), (0.8768, 0.8700, 0.8708)],
    ),
    (
        "microsoft/vscode",
        [(0.8511, 0.8000, 0.8247), (0.8131, 0.8700, 0.8406), (0.7980, 0.7900, 0.7938), (0.8207, 0.8200, 0.8198)],
    ),
    (
        "bitcoin/bitcoin",
        [(0.7339, 0.8000, 0.7656), (0.8318, 0.8900, 0.8599), (0.7381, 0.6200, 0.6739), (0.7679, 0.7700, 0.7665)],
    ),
    (
        "opencv/opencv",
        [(0.7288, 0.8600, 0.7890), (0.9091, 0.8000, 0.8511), (0.8617, 0.8100, 0.8351), (0.8332, 0.8233, 0.8250)],
    ),
];

/// Published overall rows: bug, feature, question, average.
pub const OVERALL_TABLE: [ScoresRow; 4] =
    [(0.8109, 0.8580, 0.8321), (0.8683, 0.8540, 0.8593), (0.8183, 0.7740, 0.7925), (0.8324, 0.8287, 0.8280)];

/// Confusion counts per repository with the bug and feature rows swapped,
/// which is the reading under which both published tables agree.
pub fn swapped_counts() -> Vec<(String, [LabelCounts; 3])> {
    CONFUSION_TABLE
        .iter()
        .map(|(repo, rows)| {
            let order = [rows[1], rows[0], rows[2]];
            let counts = [Label::Bug, Label::Feature, Label::Question].map(|l| {
                let (tp, fp, fn_, tn) = order[l.index()];
                LabelCounts::new(l, tp, fp, fn_, tn)
            });
            (repo.to_string(), counts)
        })
        .collect()
}

/// Builds predictions whose one-vs-rest counts equal `counts`.
///
/// Solves for a 3x3 confusion matrix with the given diagonal (TP), row
/// off-diagonal sums (FN) and column off-diagonal sums (FP); the system has
/// one free parameter, searched exhaustively.
pub fn predictions_from_counts(counts: &[LabelCounts; 3]) -> Vec<Prediction> {
    let fp = counts.map(|c| c.false_pos as i64);
    let fn_ = counts.map(|c| c.false_neg as i64);
    // m[t][p], t != p. Free variable: m[0][1].
    let mut matrix = None;
    for m01 in 0..=fn_[0] {
        let m02 = fn_[0] - m01;
        let m21 = fp[1] - m01;
        let m20 = fn_[2] - m21;
        let m10 = fp[0] - m20;
        let m12 = fn_[1] - m10;
        let ok = [m02, m21, m20, m10, m12].iter().all(|&v| v >= 0) && m02 + m12 == fp[2];
        if ok {
            matrix = Some([[0, m01, m02], [m10, 0, m12], [m20, m21, 0]]);
            break;
        }
    }
    let matrix = matrix.expect("counts admit a confusion matrix");
    let mut preds = Vec::new();
    for (t, truth) in Label::ALL.iter().enumerate() {
        for (p, guess) in Label::ALL.iter().enumerate() {
            let n = if t == p { counts[t].true_pos as i64 } else { matrix[t][p] };
            for _ in 0..n {
                preds.push(prediction(*truth, Some(*guess)));
            }
        }
    }
    for (i, p) in preds.iter_mut().enumerate() {
        p.issue_index = i;
    }
    preds
}

// ---------------------------------------------------------------------------
// Corpora

pub const BUG_WORDS: [&str; 10] =
    ["crash", "segfault", "panic", "exception", "broken", "regression", "freeze", "leak", "corrupt", "stacktrace"];
pub const FEATURE_WORDS: [&str; 10] =
    ["add", "support", "option", "proposal", "enhance", "configurable", "plugin", "extend", "toggle", "integrate"];
pub const QUESTION_WORDS: [&str; 10] =
    ["how", "why", "what", "where", "clarify", "documentation", "example", "explain", "wondering", "usage"];

fn words(label: Label) -> &'static [&'static str; 10] {
    match label {
        Label::Bug => &BUG_WORDS,
        Label::Feature => &FEATURE_WORDS,
        Label::Question => &QUESTION_WORDS,
    }
}

/// `per_label` issues for each label whose title and body draw only on that
/// label's vocabulary (disjoint across labels). `offset` shifts the word
/// choice so train and test sets differ.
pub fn separable_corpus(repository: &str, per_label: usize, offset: usize) -> Vec<IssueRecord> {
    let mut out = Vec::new();
    for i in 0..per_label {
        for label in Label::ALL {
            let w = words(label);
            let a = w[(i + offset) % 10];
            let b = w[(i + offset + 3) % 10];
            let c = w[(i + offset + 7) % 10];
            out.push(IssueRecord {
                repository: repository.to_string(),
                label,
                title: format!("{} {}", capitalize(a), b),
                body: format!("Details: **{c}** {a}!\nSee https://example.com/{i} <br> @reporter"),
            });
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Keyword mapping that routes every vocabulary word to its label.
pub fn echo_mapping() -> String {
    let mut out = String::from("# every word maps to the label whose vocabulary it belongs to\n");
    for label in Label::ALL {
        for w in words(label) {
            out.push_str(&format!("{w}={label}\n"));
        }
    }
    out
}
