//! One-vs-rest confusion counts, precision/recall/F1 and macro averages.
//!
//! Per-repository averages are unweighted means over the three labels. The
//! overall table averages each label's score across repositories, then
//! averages those three overall scores. Any 0/0 ratio is defined as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Prediction;
use crate::corpus::Label;
use crate::exec::Execution;
use crate::registry::ModelRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    NoPredictions,
    #[error("no reports to aggregate")]
    NoReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub label: Label,
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl LabelCounts {
    pub fn new(label: Label, true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> Self {
        Self { label, true_pos, false_pos, false_neg, true_neg }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Ground-truth instances of the label.
    pub fn support(&self) -> u64 {
        self.true_pos + self.false_neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LabelScores {
    pub const ZERO: LabelScores = LabelScores { precision: 0.0, recall: 0.0, f1: 0.0 };

    fn mean<'a>(items: impl IntoIterator<Item = &'a LabelScores>) -> LabelScores {
        let mut n = 0usize;
        let mut acc = LabelScores::ZERO;
        for s in items {
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.f1 += s.f1;
            n += 1;
        }
        if n == 0 {
            return LabelScores::ZERO;
        }
        let n = n as f64;
        LabelScores { precision: acc.precision / n, recall: acc.recall / n, f1: acc.f1 / n }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / den
    }
}

pub fn scores(counts: &LabelCounts) -> LabelScores {
    let precision = ratio(counts.true_pos, counts.true_pos + counts.false_pos);
    let recall = ratio(counts.true_pos, counts.true_pos + counts.false_neg);
    LabelScores { precision, recall, f1: f1_score(precision, recall) }
}

/// Per-label one-vs-rest counts, indexed by [`Label::index`].
///
/// A prediction whose response did not parse counts as a false negative for
/// its expected label and a true negative for the other two.
pub fn confusion(predictions: &[Prediction]) -> Result<[LabelCounts; 3], MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let mut counts = Label::ALL.map(|l| LabelCounts::new(l, 0, 0, 0, 0));
    for p in predictions {
        for c in counts.iter_mut() {
            let actual = p.expected == c.label;
            let predicted = p.predicted == Some(c.label);
            match (actual, predicted) {
                (true, true) => c.true_pos += 1,
                (false, true) => c.false_pos += 1,
                (true, false) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
    }
    Ok(counts)
}

/// Scores of one repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub repository: String,
    pub counts: [LabelCounts; 3],
    pub scores: [LabelScores; 3],
    pub average: LabelScores,
}

impl EvalReport {
    /// Builds a report straight from confusion counts.
    pub fn from_counts(repository: impl Into<String>, counts: [LabelCounts; 3]) -> Self {
        let scores = counts.map(|c| scores(&c));
        Self { repository: repository.into(), counts, average: LabelScores::mean(&scores), scores }
    }

    pub fn label_scores(&self, label: Label) -> &LabelScores {
        &self.scores[label.index()]
    }

    pub fn label_counts(&self, label: Label) -> &LabelCounts {
        &self.counts[label.index()]
    }
}

pub fn repo_report(predictions: &[Prediction], repository: &str) -> Result<EvalReport, MetricsError> {
    Ok(EvalReport::from_counts(repository, confusion(predictions)?))
}

/// Reports for several repositories, computed per repository in parallel
/// when `exec` allows it.
pub fn repo_reports(groups: &[(String, Vec<Prediction>)], exec: Execution) -> Result<Vec<EvalReport>, MetricsError> {
    exec.map(groups, |(repo, preds)| repo_report(preds, repo)).into_iter().collect()
}

/// Cross-repository aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallReport {
    /// Mean of each label's score across repositories.
    pub per_label: [LabelScores; 3],
    /// Mean of the three `per_label` entries.
    pub average: LabelScores,
    pub repositories: usize,
}

pub fn overall_report(reports: &[EvalReport]) -> Result<OverallReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let per_label = Label::ALL.map(|l| LabelScores::mean(reports.iter().map(|r| r.label_scores(l))));
    Ok(OverallReport { average: LabelScores::mean(&per_label), per_label, repositories: reports.len() })
}

/// Four decimal places, ties to even on the exact binary value.
pub fn fmt4(x: f64) -> String {
    // std float formatting is exact and rounds half to even.
    format!("{x:.4}")
}

/// Rendered tables, ready to be written or printed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTables {
    pub metrics_csv: String,
    pub confusion_csv: String,
    pub metrics_text: String,
    pub confusion_text: String,
}

struct MetricsRow {
    repository: String,
    method: String,
    epochs: String,
    label: String,
    scores: LabelScores,
}

fn metrics_rows(reports: &[EvalReport], overall: &OverallReport, registry: Option<&ModelRegistry>) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for r in reports {
        let (method, epochs) = registry
            .and_then(|reg| reg.get(&r.repository).ok())
            .map(|e| (e.cleaning_method.to_string(), e.epochs.to_string()))
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        for label in Label::ALL {
            rows.push(MetricsRow {
                repository: r.repository.clone(),
                method: method.clone(),
                epochs: epochs.clone(),
                label: label.to_string(),
                scores: *r.label_scores(label),
            });
        }
        rows.push(MetricsRow {
            repository: r.repository.clone(),
            method,
            epochs,
            label: "average".into(),
            scores: r.average,
        });
    }
    let overall_rows = Label::ALL
        .iter()
        .map(|l| (l.to_string(), overall.per_label[l.index()]))
        .chain(std::iter::once(("average".to_string(), overall.average)));
    for (label, scores) in overall_rows {
        rows.push(MetricsRow { repository: "overall".into(), method: "NA".into(), epochs: "NA".into(), label, scores });
    }
    rows
}

fn align(table: &[Vec<String>]) -> String {
    let cols = table.first().map_or(0, Vec::len);
    let widths: Vec<usize> =
        (0..cols).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders the per-label/per-repository metric table and the confusion
/// table as CSV and aligned text. Cleaning method and epochs come from
/// `registry` when given, `NA` otherwise.
pub fn render_tables(
    reports: &[EvalReport],
    overall: &OverallReport,
    registry: Option<&ModelRegistry>,
) -> RenderedTables {
    let rows = metrics_rows(reports, overall, registry);

    let mut metrics_csv = String::from("repository,cleaning_method,epochs,label,precision,recall,f1\n");
    let mut metrics_table = vec![["Repo", "CM", "E", "Label", "P", "R", "F1"].map(String::from).to_vec()];
    for row in &rows {
        let cells = vec![
            row.repository.clone(),
            row.method.clone(),
            row.epochs.clone(),
            row.label.clone(),
            fmt4(row.scores.precision),
            fmt4(row.scores.recall),
            fmt4(row.scores.f1),
        ];
        let csv_cells: Vec<String> = cells.iter().map(|c| csv_field(c)).collect();
        let _ = writeln!(metrics_csv, "{}", csv_cells.join(","));
        metrics_table.push(cells);
    }

    let mut confusion_csv = String::from("repository,label,tp,fp,fn,tn\n");
    let mut confusion_table = vec![["Repository", "Label", "TP", "FP", "FN", "TN"].map(String::from).to_vec()];
    for r in reports {
        for c in &r.counts {
            let cells = vec![
                r.repository.clone(),
                c.label.to_string(),
                c.true_pos.to_string(),
                c.false_pos.to_string(),
                c.false_neg.to_string(),
                c.true_neg.to_string(),
            ];
            let csv_cells: Vec<String> = cells.iter().map(|c| csv_field(c)).collect();
            let _ = writeln!(confusion_csv, "{}", csv_cells.join(","));
            confusion_table.push(cells);
        }
    }

    RenderedTables {
        metrics_csv,
        confusion_csv,
        metrics_text: align(&metrics_table),
        confusion_text: align(&confusion_table),
    }
}

/// The one-line summary printed after an evaluation.
pub fn overall_line(overall: &OverallReport) -> String {
    format!(
        "overall average over {} repositories: precision {} recall {} f1 {}",
        overall.repositories,
        fmt4(overall.average.precision),
        fmt4(overall.average.recall),
        fmt4(overall.average.f1)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Engine;
    use approx::assert_abs_diff_eq;

    fn pred(expected: Label, predicted: Option<Label>) -> Prediction {
        Prediction {
            issue_index: 0,
            expected,
            predicted,
            raw_response: predicted.map(|l| l.to_string()).unwrap_or_default(),
            engine: Engine::Baseline,
        }
    }

    #[test]
    fn all_correct_nine() {
        let preds: Vec<_> = Label::ALL.iter().flat_map(|&l| std::iter::repeat_n(pred(l, Some(l)), 3)).collect();
        let counts = confusion(&preds).unwrap();
        for c in counts {
            assert_eq!((c.true_pos, c.false_pos, c.false_neg, c.true_neg), (3, 0, 0, 6));
        }
        let report = repo_report(&preds, "x/y").unwrap();
        assert_eq!(report.average, LabelScores { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn single_miss() {
        let counts = confusion(&[pred(Label::Bug, Some(Label::Feature))]).unwrap();
        assert_eq!(counts[0], LabelCounts::new(Label::Bug, 0, 0, 1, 0));
        assert_eq!(counts[1], LabelCounts::new(Label::Feature, 0, 1, 0, 0));
        assert_eq!(counts[2], LabelCounts::new(Label::Question, 0, 0, 0, 1));
    }

    #[test]
    fn unparsed_is_false_negative_only() {
        let counts = confusion(&[pred(Label::Question, None)]).unwrap();
        assert_eq!(counts[2], LabelCounts::new(Label::Question, 0, 0, 1, 0));
        assert_eq!(counts[0], LabelCounts::new(Label::Bug, 0, 0, 0, 1));
        assert_eq!(counts[1], LabelCounts::new(Label::Feature, 0, 0, 0, 1));
    }

    #[test]
    fn empty_inputs_error() {
        assert_eq!(confusion(&[]), Err(MetricsError::NoPredictions));
        assert_eq!(overall_report(&[]), Err(MetricsError::NoReports));
    }

    #[test]
    fn published_rows() {
        let s = scores(&LabelCounts::new(Label::Bug, 95, 19, 5, 181));
        assert_abs_diff_eq!(s.precision, 0.8333, epsilon = 5e-4);
        assert_abs_diff_eq!(s.recall, 0.9500, epsilon = 5e-4);
        assert_abs_diff_eq!(s.f1, 0.8878, epsilon = 5e-4);
        let s = scores(&LabelCounts::new(Label::Question, 74, 8, 26, 192));
        assert_eq!(
            (fmt4(s.precision), fmt4(s.recall), fmt4(s.f1)),
            ("0.9024".into(), "0.7400".into(), "0.8132".into())
        );
    }

    #[test]
    fn zero_division_is_zero() {
        assert_eq!(scores(&LabelCounts::new(Label::Bug, 0, 0, 0, 10)), LabelScores::ZERO);
        let s = scores(&LabelCounts::new(Label::Bug, 0, 3, 0, 0));
        assert_eq!(s, LabelScores::ZERO);
    }

    #[test]
    fn single_repo_overall_matches_repo() {
        let preds = vec![
            pred(Label::Bug, Some(Label::Bug)),
            pred(Label::Bug, Some(Label::Question)),
            pred(Label::Feature, Some(Label::Feature)),
            pred(Label::Question, None),
        ];
        let r = repo_report(&preds, "a/b").unwrap();
        let o = overall_report(std::slice::from_ref(&r)).unwrap();
        assert_eq!(o.per_label, r.scores);
        assert_eq!(o.average, r.average);
        let t = render_tables(&[r], &o, None);
        let lines: Vec<_> = t.metrics_csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4 + 4);
        assert_eq!(lines[4].split(',').skip(4).collect::<Vec<_>>(), lines[8].split(',').skip(4).collect::<Vec<_>>());
    }

    #[test]
    fn ties_round_to_even() {
        assert_eq!(fmt4(0.03125), "0.0312");
        assert_eq!(fmt4(0.09375), "0.0938");
        assert_eq!(fmt4(1.0), "1.0000");
    }

    #[test]
    fn rendering_uses_registry_metadata() {
        let preds = vec![pred(Label::Bug, Some(Label::Bug))];
        let r = repo_report(&preds, "facebook/react").unwrap();
        let o = overall_report(std::slice::from_ref(&r)).unwrap();
        let reg = ModelRegistry::competition_defaults();
        let t = render_tables(&[r], &o, Some(&reg));
        assert!(t.metrics_csv.contains("facebook/react,method1,3,bug,1.0000,1.0000,1.0000"));
        assert!(t.metrics_csv.contains("overall,NA,NA,average,"));
        assert!(t.confusion_csv.contains("facebook/react,bug,1,0,0,0"));
        assert!(t.metrics_text.starts_with("Repo"));
    }
}
