//! Labeled issue reports: CSV ingestion and per-repository segmentation.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Issue category. The set is closed: anything else fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bug,
    Feature,
    Question,
}

impl Label {
    /// All labels in canonical (lexicographic) order.
    pub const ALL: [Label; 3] = [Label::Bug, Label::Feature, Label::Question];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bug => "bug",
            Label::Feature => "feature",
            Label::Question => "question",
        }
    }

    /// Position in [`Label::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    /// Strict parse of the canonical lowercase spelling.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bug" => Ok(Label::Bug),
            "feature" => Ok(Label::Feature),
            "question" => Ok(Label::Question),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// One labeled issue report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IssueRecord {
    pub repository: String,
    pub label: Label,
    pub title: String,
    pub body: String,
}

/// Header names used to locate the four issue fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnNames {
    pub repository: String,
    pub label: String,
    pub title: String,
    pub body: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        Self { repository: "repository".into(), label: "label".into(), title: "title".into(), body: "body".into() }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("unknown label at row {row}: {value:?}")]
    UnknownLabel { row: usize, value: String },
    #[error("empty repository at row {row}")]
    EmptyRepository { row: usize },
}

impl CorpusError {
    /// True for errors caused by the content of the input rather than I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CorpusError::MissingColumn(_)
                | CorpusError::UnknownLabel { .. }
                | CorpusError::EmptyRepository { .. }
                | CorpusError::Csv(_)
        )
    }
}

/// Loads every data row of a CSV file as an [`IssueRecord`].
///
/// Title and body are kept byte-for-byte; missing cells become empty strings.
/// Rows are numbered from 1, not counting the header.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnNames) -> Result<Vec<IssueRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Open { path: path.to_path_buf(), source })?;
    read_csv(file, columns)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, columns: &ColumnNames) -> Result<Vec<IssueRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let repo_col = find(&columns.repository)?;
    let label_col = find(&columns.label)?;
    let title_col = find(&columns.title)?;
    let body_col = find(&columns.body)?;

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let cell = |idx: usize| row.get(idx).unwrap_or("");
        let repository = cell(repo_col).trim();
        if repository.is_empty() {
            return Err(CorpusError::EmptyRepository { row: row_no });
        }
        let raw_label = cell(label_col);
        let label = raw_label
            .trim()
            .parse::<Label>()
            .map_err(|_| CorpusError::UnknownLabel { row: row_no, value: raw_label.to_string() })?;
        out.push(IssueRecord {
            repository: repository.to_string(),
            label,
            title: cell(title_col).to_string(),
            body: cell(body_col).to_string(),
        });
    }
    Ok(out)
}

/// Which side of a split a batch of records populates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Train and test records of a single repository, in source order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RepoSplit {
    pub repository: String,
    pub train: Vec<IssueRecord>,
    pub test: Vec<IssueRecord>,
}

impl RepoSplit {
    pub fn new(repository: impl Into<String>) -> Self {
        Self { repository: repository.into(), ..Self::default() }
    }

    pub fn side(&self, role: Role) -> &[IssueRecord] {
        match role {
            Role::Train => &self.train,
            Role::Test => &self.test,
        }
    }
}

/// Partitions `records` by repository into `splits`, filling the `role` side.
///
/// Existing splits are extended; new repositories are appended in order of
/// first appearance. Record order within a repository is preserved.
pub fn segment_by_repo(splits: &mut Vec<RepoSplit>, records: Vec<IssueRecord>, role: Role) {
    for record in records {
        let idx = match splits.iter().position(|s| s.repository == record.repository) {
            Some(idx) => idx,
            None => {
                splits.push(RepoSplit::new(record.repository.clone()));
                splits.len() - 1
            }
        };
        let split = &mut splits[idx];
        match role {
            Role::Train => split.train.push(record),
            Role::Test => split.test.push(record),
        }
    }
}

/// File-name stem for a repository: `owner/name` becomes `owner_name`.
pub fn repo_file_stem(repository: &str) -> String {
    repository.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}
