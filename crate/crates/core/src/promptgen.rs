//! Chat-format training examples, inference prompts and JSON-lines files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::textclean::CleanedIssue;

/// Instruction that opens every user message, at training and inference time.
pub const CLASSIFICATION_PROMPT: &str =
    "Classify, IN ONLY 1 WORD, the following GitHub issue as 'feature', 'bug', or 'question' based on its title and body:";

const TITLE_PREFIX: &str = "Title: ";
const BODY_PREFIX: &str = "Body: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExample {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExampleError {
    #[error("example has no messages")]
    Empty,
    #[error("message {0} has empty content")]
    EmptyContent(usize),
    #[error("expected [system,] user, assistant; got {0}")]
    Shape(String),
    #[error("assistant reply {0:?} is not a label")]
    NotALabel(String),
}

impl ChatExample {
    /// Checks the training-example shape: an optional system message, one user
    /// message, then one assistant message holding a canonical label.
    pub fn validate(&self) -> Result<Label, ExampleError> {
        if self.messages.is_empty() {
            return Err(ExampleError::Empty);
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return Err(ExampleError::EmptyContent(i));
        }
        let roles: Vec<ChatRole> = self.messages.iter().map(|m| m.role).collect();
        let ok = matches!(
            roles.as_slice(),
            [ChatRole::User, ChatRole::Assistant] | [ChatRole::System, ChatRole::User, ChatRole::Assistant]
        );
        if !ok {
            let names: Vec<String> = roles
                .iter()
                .map(|r| serde_json::to_string(r).unwrap_or_default().trim_matches('"').to_string())
                .collect();
            return Err(ExampleError::Shape(names.join(", ")));
        }
        let reply = &self.messages[self.messages.len() - 1].content;
        reply.parse::<Label>().map_err(|_| ExampleError::NotALabel(reply.clone()))
    }

    /// The user message, if present.
    pub fn user(&self) -> Option<&ChatMessage> {
        self.messages.iter().find(|m| m.role == ChatRole::User)
    }
}

/// Knobs for example construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Injected as a leading system message when set.
    pub system_message: Option<String>,
}

/// Prompt, then `Title: ...` and `Body: ...` on their own lines.
pub fn user_content(title: &str, body: &str) -> String {
    format!("{CLASSIFICATION_PROMPT}\n{TITLE_PREFIX}{title}\n{BODY_PREFIX}{body}")
}

/// Inverse of [`user_content`]. Returns `None` if the layout does not match.
pub fn split_user_content(content: &str) -> Option<(&str, &str)> {
    let rest = content.strip_prefix(CLASSIFICATION_PROMPT)?.strip_prefix('\n')?;
    let rest = rest.strip_prefix(TITLE_PREFIX)?;
    // Cleaned titles never contain newlines, so the first one ends the title.
    let (title, body) = rest.split_once('\n')?;
    Some((title, body.strip_prefix(BODY_PREFIX)?))
}

pub fn build_user_message(issue: &CleanedIssue) -> ChatMessage {
    ChatMessage::new(ChatRole::User, user_content(&issue.title_clean, &issue.body_clean))
}

/// Messages sent at inference time: the training conversation minus the answer.
pub fn build_inference_messages(issue: &CleanedIssue, opts: &PromptOptions) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = opts.system_message.as_deref().filter(|s| !s.is_empty()) {
        messages.push(ChatMessage::new(ChatRole::System, system));
    }
    messages.push(build_user_message(issue));
    messages
}

pub fn build_training_example(issue: &CleanedIssue, opts: &PromptOptions) -> ChatExample {
    let mut messages = build_inference_messages(issue, opts);
    messages.push(ChatMessage::new(ChatRole::Assistant, issue.label.as_str()));
    ChatExample { messages }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("no examples to write")]
    NoExamples,
    #[error("example {index}: {source}")]
    Invalid {
        index: usize,
        #[source]
        source: ExampleError,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One example as a single JSON line, without the trailing newline.
pub fn to_json_line(example: &ChatExample) -> String {
    serde_json::to_string(example).expect("chat examples always serialize")
}

/// Parses and validates one JSON line.
pub fn parse_json_line(line: &str) -> Result<ChatExample, String> {
    let example: ChatExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
    example.validate().map_err(|e| e.to_string())?;
    Ok(example)
}

/// Serializes examples to a JSONL string, one newline-terminated object per line.
pub fn to_jsonl(examples: &[ChatExample]) -> Result<String, JsonlError> {
    if examples.is_empty() {
        return Err(JsonlError::NoExamples);
    }
    let mut out = String::new();
    for (index, ex) in examples.iter().enumerate() {
        ex.validate().map_err(|source| JsonlError::Invalid { index, source })?;
        out.push_str(&to_json_line(ex));
        out.push('\n');
    }
    Ok(out)
}

/// Writes examples as JSON lines and returns the number of lines written.
pub fn write_jsonl(examples: &[ChatExample], path: impl AsRef<Path>) -> Result<usize, JsonlError> {
    let text = to_jsonl(examples)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(examples.len())
}

/// Parses JSONL text, validating every line. Line numbers start at 1.
pub fn parse_jsonl(text: &str) -> Result<Vec<ChatExample>, JsonlError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_json_line(line).map_err(|message| JsonlError::Line { line: i + 1, message }))
        .collect()
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<ChatExample>, JsonlError> {
    parse_jsonl(&fs::read_to_string(path)?)
}
