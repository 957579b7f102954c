mod common;

use approx::assert_relative_eq;
use triage_core::classify::{classify_repo, predict_baseline, train_baseline, Backend, ClassifyError};
use triage_core::corpus::Label;
use triage_core::exec::Execution;
use triage_core::metrics::repo_report;
use triage_core::registry::{Epochs, ModelRegistry, RegistryEntry};
use triage_core::textclean::{clean_all, CleanedIssue, CleaningConfig, CleaningMethod};

fn issue(label: Label, text: &str) -> CleanedIssue {
    CleanedIssue {
        repository: "o/r".into(),
        label,
        title_clean: text.into(),
        body_clean: String::new(),
        method: CleaningMethod::Method1,
    }
}

fn two_document_corpus() -> Vec<CleanedIssue> {
    vec![
        issue(Label::Bug, "crash segfault"),
        issue(Label::Feature, "add option"),
        // needed only so that every label has a prior; contributes no tokens
        issue(Label::Question, ""),
    ]
}

#[test]
fn two_document_likelihoods_by_hand() {
    let model = train_baseline(&two_document_corpus(), 1.0).unwrap();
    let vocab: Vec<&str> = model.vocabulary().collect();
    assert_eq!(vocab, ["add", "crash", "option", "segfault"]);

    // (count + 1) / (class tokens + |V|), |V| = 4
    assert_relative_eq!(model.likelihood(Label::Bug, "crash"), 2.0 / 6.0, epsilon = 1e-12);
    assert_relative_eq!(model.likelihood(Label::Feature, "crash"), 1.0 / 6.0, epsilon = 1e-12);
    assert_relative_eq!(model.likelihood(Label::Question, "crash"), 1.0 / 4.0, epsilon = 1e-12);
    assert_relative_eq!(model.log_priors[0], model.log_priors[1]);

    let post = model.log_posteriors(["crash"]);
    let by_hand = [(1.0f64 / 3.0) * (2.0 / 6.0), (1.0 / 3.0) * (1.0 / 6.0), (1.0 / 3.0) * (1.0 / 4.0)];
    for l in 0..3 {
        assert_relative_eq!(post[l], by_hand[l].ln(), epsilon = 1e-12);
    }
    assert!(post[0] > post[1] && post[0] > post[2]);
    assert_eq!(predict_baseline(&model, &issue(Label::Question, "crash")), Label::Bug);
}

#[test]
fn unseen_token_has_positive_likelihood() {
    let model = train_baseline(&two_document_corpus(), 1.0).unwrap();
    for l in Label::ALL {
        assert!(model.likelihood(l, "xyzzy") > 0.0);
    }
}

#[test]
fn empty_text_falls_back_to_priors() {
    let train = vec![
        issue(Label::Bug, "a"),
        issue(Label::Feature, "b"),
        issue(Label::Feature, "c"),
        issue(Label::Question, "d"),
    ];
    let model = train_baseline(&train, 1.0).unwrap();
    assert_eq!(predict_baseline(&model, &issue(Label::Bug, "")), Label::Feature);
}

#[test]
fn full_tie_goes_to_bug() {
    let train = vec![issue(Label::Bug, "x"), issue(Label::Feature, "x"), issue(Label::Question, "x")];
    let model = train_baseline(&train, 1.0).unwrap();
    assert_eq!(predict_baseline(&model, &issue(Label::Question, "x x")), Label::Bug);
}

#[test]
fn missing_label_is_rejected() {
    let train = vec![issue(Label::Bug, "a"), issue(Label::Feature, "b")];
    assert!(matches!(train_baseline(&train, 1.0), Err(ClassifyError::EmptyLabel(Label::Question))));
    assert!(matches!(train_baseline(&two_document_corpus(), 0.0), Err(ClassifyError::BadAlpha(_))));
}

#[test]
fn three_issue_separable_corpus_is_classified_perfectly() {
    let train = vec![issue(Label::Bug, "crash"), issue(Label::Feature, "add"), issue(Label::Question, "how")];
    let model = train_baseline(&train, 1.0).unwrap();
    for i in &train {
        assert_eq!(predict_baseline(&model, i), i.label);
    }
}

#[test]
fn ten_per_label_separable_corpus_scores_one() {
    let repo = "acme/widgets";
    let cfg = CleaningConfig::new(CleaningMethod::Method1);
    let train = clean_all(&common::separable_corpus(repo, 10, 0), &cfg, Execution::Sequential);
    let test = clean_all(&common::separable_corpus(repo, 10, 5), &cfg, Execution::Sequential);
    let model = train_baseline(&train, 1.0).unwrap();

    let mut registry = ModelRegistry::new();
    registry
        .insert(repo, RegistryEntry { model_id: None, cleaning_method: CleaningMethod::Method1, epochs: Epochs::Auto });
    for exec in [Execution::Sequential, Execution::default()] {
        let run = classify_repo(repo, &test, &registry, &Backend::Baseline(&model), exec, 4).unwrap();
        assert_eq!(run.predictions.len(), 30);
        let report = repo_report(&run.predictions, repo).unwrap();
        for s in report.scores.iter().chain([&report.average]) {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = CleaningConfig::new(CleaningMethod::Method2);
    let train = clean_all(&common::separable_corpus("a/b", 7, 2), &cfg, Execution::default());
    let a = train_baseline(&train, 0.5).unwrap();
    let b = train_baseline(&train, 0.5).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}
