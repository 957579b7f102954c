//! Noise removal for issue titles and bodies.
//!
//! Two deterministic pipelines are provided. [`CleaningMethod::Method1`]
//! deletes noise outright: quotes, blocklisted patterns, emoji, URLs, HTML
//! tags and punctuation, then lowercases, collapses whitespace and drops
//! overlong tokens. [`CleaningMethod::Method2`] runs the same steps but
//! replaces URLs, HTML tags, `@user` mentions and Markdown images with the
//! placeholder tokens `<URL>`, `<HTML_TAG>`, `<USER>` and `<IMAGE>`, and strips
//! Markdown syntax first.
//!
//! Placeholders are carried through the lowercase and punctuation steps as
//! private-use sentinel characters and spelled out only at the very end, so
//! both pipelines are idempotent.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{IssueRecord, Label};
use crate::exec::Execution;

pub const DEFAULT_MAX_TOKEN_LEN: usize = 20;

pub const URL_TOKEN: &str = "<URL>";
pub const HTML_TAG_TOKEN: &str = "<HTML_TAG>";
pub const USER_TOKEN: &str = "<USER>";
pub const IMAGE_TOKEN: &str = "<IMAGE>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleaningMethod {
    Method1,
    Method2,
}

impl CleaningMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CleaningMethod::Method1 => "method1",
            CleaningMethod::Method2 => "method2",
        }
    }
}

impl fmt::Display for CleaningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CleaningMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "method1" | "1" => Ok(CleaningMethod::Method1),
            "method2" | "2" => Ok(CleaningMethod::Method2),
            other => Err(format!("unknown cleaning method {other:?} (expected method1 or method2)")),
        }
    }
}

/// A blocklist entry: deleted wherever it matches.
#[derive(Debug, Clone)]
pub enum Pattern {
    Literal(String),
    Regex(Regex),
}

impl Pattern {
    fn remove_from(&self, text: &str) -> String {
        match self {
            Pattern::Literal(lit) if lit.is_empty() => text.to_string(),
            Pattern::Literal(lit) => text.replace(lit.as_str(), ""),
            Pattern::Regex(re) => re.replace_all(text, "").into_owned(),
        }
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Pattern::Literal(a), Pattern::Literal(b)) => a == b,
            (Pattern::Regex(a), Pattern::Regex(b)) => a.as_str() == b.as_str(),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BlocklistError {
    #[error("cannot read blocklist {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("blocklist line {line}: invalid regex: {source}")]
    Regex {
        line: usize,
        #[source]
        source: regex::Error,
    },
}

/// Parses a blocklist: one pattern per line, literal unless prefixed `re:`.
/// Blank lines are skipped. Order is preserved.
pub fn parse_blocklist(text: &str) -> Result<Vec<Pattern>, BlocklistError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.strip_prefix("re:") {
            Some(expr) => {
                let re = Regex::new(expr).map_err(|source| BlocklistError::Regex { line: i + 1, source })?;
                out.push(Pattern::Regex(re));
            }
            None => out.push(Pattern::Literal(line.to_string())),
        }
    }
    Ok(out)
}

pub fn load_blocklist(path: impl AsRef<Path>) -> Result<Vec<Pattern>, BlocklistError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| BlocklistError::Io { path: path.display().to_string(), source })?;
    parse_blocklist(&text)
}

/// A cleaning method together with its tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningConfig {
    pub method: CleaningMethod,
    pub blocklist: Vec<Pattern>,
    pub max_token_len: usize,
}

impl CleaningConfig {
    pub fn new(method: CleaningMethod) -> Self {
        Self { method, blocklist: Vec::new(), max_token_len: DEFAULT_MAX_TOKEN_LEN }
    }

    pub fn with_blocklist(mut self, blocklist: Vec<Pattern>) -> Self {
        self.blocklist = blocklist;
        self
    }

    /// Values below 1 are clamped to 1.
    pub fn with_max_token_len(mut self, len: usize) -> Self {
        self.max_token_len = len.max(1);
        self
    }

    pub fn clean(&self, text: &str) -> String {
        match self.method {
            CleaningMethod::Method1 => clean_method1(text, self),
            CleaningMethod::Method2 => clean_method2(text, self),
        }
    }
}

/// Emoji and pictograph code points removed by both methods.
///
/// Emoticons, Miscellaneous Symbols and Pictographs, Transport and Map,
/// Supplemental Symbols and Pictographs, Symbols and Pictographs Extended-A,
/// Miscellaneous Symbols, Dingbats, regional indicators and the other
/// enclosed/game symbol blocks, plus the joiners and modifiers emoji
/// sequences are built from (ZWJ, variation selectors, keycap, tags).
pub const EMOJI_RANGES: &[(u32, u32)] = &[
    (0x200D, 0x200D),   // zero width joiner
    (0x20E3, 0x20E3),   // combining enclosing keycap
    (0x2600, 0x26FF),   // miscellaneous symbols
    (0x2700, 0x27BF),   // dingbats
    (0x2B00, 0x2BFF),   // miscellaneous symbols and arrows
    (0xFE00, 0xFE0F),   // variation selectors
    (0x1F000, 0x1F0FF), // mahjong, domino, playing cards
    (0x1F100, 0x1F1FF), // enclosed alphanumeric supplement, regional indicators
    (0x1F200, 0x1F2FF), // enclosed ideographic supplement
    (0x1F300, 0x1F5FF), // miscellaneous symbols and pictographs
    (0x1F600, 0x1F64F), // emoticons
    (0x1F680, 0x1F6FF), // transport and map
    (0x1F780, 0x1F7FF), // geometric shapes extended
    (0x1F900, 0x1F9FF), // supplemental symbols and pictographs
    (0x1FA70, 0x1FAFF), // symbols and pictographs extended-a
    (0xE0020, 0xE007F), // tags
];

pub fn is_emoji(c: char) -> bool {
    let cp = c as u32;
    EMOJI_RANGES.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp))
}

// Private-use sentinels standing in for placeholders until the last step.
const URL_SENTINEL: char = '\u{E000}';
const HTML_SENTINEL: char = '\u{E001}';
const USER_SENTINEL: char = '\u{E002}';
const IMAGE_SENTINEL: char = '\u{E003}';

fn is_sentinel(c: char) -> bool {
    matches!(c, URL_SENTINEL | HTML_SENTINEL | USER_SENTINEL | IMAGE_SENTINEL)
}

fn padded(sentinel: char) -> String {
    format!(" {sentinel} ")
}

fn sentinel_for(token: &str) -> Option<char> {
    match token {
        URL_TOKEN => Some(URL_SENTINEL),
        HTML_TAG_TOKEN => Some(HTML_SENTINEL),
        USER_TOKEN => Some(USER_SENTINEL),
        IMAGE_TOKEN => Some(IMAGE_SENTINEL),
        _ => None,
    }
}

fn token_for(sentinel: char) -> &'static str {
    match sentinel {
        URL_SENTINEL => URL_TOKEN,
        HTML_SENTINEL => HTML_TAG_TOKEN,
        USER_SENTINEL => USER_TOKEN,
        _ => IMAGE_TOKEN,
    }
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)https?://\S+").unwrap());
static HTML_TAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?-->|</?[A-Za-z][^<>]*>").unwrap());
static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<URL>|<HTML_TAG>|<USER>|<IMAGE>").unwrap());
static MD_IMAGE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!\[[^\[\]]*\]\([^()]*\)").unwrap());
static MD_LINK_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\[\]]*)\]\([^()]*\)").unwrap());
static MD_FENCE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(```|~~~).*$").unwrap());
static MD_HEADING_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]{0,3}#{1,6}([ \t]+|$)").unwrap());
static MD_QUOTE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(>[ \t]?)+").unwrap());
static MD_BULLET_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*([-*+]|\d+[.)])[ \t]+").unwrap());
static MD_MARKER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[*_~`]+").unwrap());

/// Letters and digits survive; letters with no lowercase form are treated as
/// symbols so the output stays lowercase.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !c.is_uppercase()
}

fn apply_blocklist(text: &str, blocklist: &[Pattern]) -> String {
    blocklist.iter().fold(text.to_string(), |acc, p| p.remove_from(&acc))
}

fn remove_emoji(text: &str) -> String {
    text.chars().filter(|&c| !is_emoji(c)).collect()
}

fn keep_word_chars(text: &str, keep_sentinels: bool) -> String {
    text.chars().filter(|&c| is_word_char(c) || c.is_whitespace() || (keep_sentinels && is_sentinel(c))).collect()
}

/// Collapses whitespace and drops tokens longer than `max_len` characters.
/// Single-character sentinel tokens are never dropped.
fn collapse_and_limit(text: &str, max_len: usize) -> String {
    let mut out = String::with_capacity(text.len());
    for tok in text.split_whitespace() {
        let mut chars = tok.chars();
        let is_placeholder = matches!((chars.next(), chars.next()), (Some(c), None) if is_sentinel(c));
        if !is_placeholder && tok.chars().count() > max_len {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Replaces `@username` mentions with the user sentinel.
///
/// A mention is `@` not preceded by a word character, followed by 1 to 39
/// ASCII letters, digits or hyphens and not followed by another word
/// character.
fn replace_mentions(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let is_name = |c: char| c.is_ascii_alphanumeric() || c == '-';
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '@' && (i == 0 || !is_word(chars[i - 1])) {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && is_name(chars[end]) {
                end += 1;
            }
            let len = end - start;
            let bounded = end == chars.len() || !is_word(chars[end]);
            if (1..=39).contains(&len) && bounded {
                out.push_str(&padded(USER_SENTINEL));
                i = end;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Removes Markdown block and inline markers, keeping the text they wrap.
fn strip_markdown(text: &str) -> String {
    let s = MD_FENCE_RE.replace_all(text, "");
    let s = MD_HEADING_RE.replace_all(&s, "");
    let s = MD_QUOTE_RE.replace_all(&s, "");
    let s = MD_BULLET_RE.replace_all(&s, "");
    MD_MARKER_RE.replace_all(&s, "").into_owned()
}

/// Deletes noise in this order: double quotes, blocklist patterns, case,
/// emoji, URLs, HTML tags, punctuation and symbols; then collapses
/// whitespace and drops tokens longer than `cfg.max_token_len`.
pub fn clean_method1(text: &str, cfg: &CleaningConfig) -> String {
    let s = text.replace('"', "");
    let s = apply_blocklist(&s, &cfg.blocklist);
    let s = s.to_lowercase();
    let s = remove_emoji(&s);
    let s = URL_RE.replace_all(&s, "");
    let s = HTML_TAG_RE.replace_all(&s, "");
    let s = keep_word_chars(&s, false);
    collapse_and_limit(&s, cfg.max_token_len.max(1))
}

/// Method 1 with placeholder substitution and Markdown stripping.
///
/// Markdown images become `<IMAGE>` (before the URL rule sees them), links
/// `[text](url)` become `text <URL>`, bare URLs `<URL>`, HTML tags
/// `<HTML_TAG>` and mentions `<USER>`. Placeholders already present in the
/// input are kept as is.
pub fn clean_method2(text: &str, cfg: &CleaningConfig) -> String {
    let s: String = text.chars().filter(|&c| !is_sentinel(c)).collect();
    let s = PLACEHOLDER_RE.replace_all(&s, |caps: &regex::Captures<'_>| {
        padded(sentinel_for(&caps[0]).expect("placeholder regex only matches placeholders"))
    });
    let s = s.replace('"', "");
    let s = apply_blocklist(&s, &cfg.blocklist);
    let s = MD_IMAGE_RE.replace_all(&s, padded(IMAGE_SENTINEL).as_str());
    let s = MD_LINK_RE.replace_all(&s, |caps: &regex::Captures<'_>| format!("{}{}", &caps[1], padded(URL_SENTINEL)));
    let s = URL_RE.replace_all(&s, padded(URL_SENTINEL).as_str());
    let s = HTML_TAG_RE.replace_all(&s, padded(HTML_SENTINEL).as_str());
    let s = replace_mentions(&s);
    let s = strip_markdown(&s);
    let s = s.to_lowercase();
    let s = remove_emoji(&s);
    let s = keep_word_chars(&s, true);
    let s = collapse_and_limit(&s, cfg.max_token_len.max(1));
    let mut out = String::with_capacity(s.len() + 16);
    for c in s.chars() {
        if is_sentinel(c) {
            out.push_str(token_for(c));
        } else {
            out.push(c);
        }
    }
    out
}

/// An issue after noise removal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedIssue {
    pub repository: String,
    pub label: Label,
    pub title_clean: String,
    pub body_clean: String,
    pub method: CleaningMethod,
}

impl CleanedIssue {
    /// Whitespace tokens of the title followed by those of the body.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.title_clean.split_whitespace().chain(self.body_clean.split_whitespace())
    }
}

pub fn clean_issue(record: &IssueRecord, cfg: &CleaningConfig) -> CleanedIssue {
    CleanedIssue {
        repository: record.repository.clone(),
        label: record.label,
        title_clean: cfg.clean(&record.title),
        body_clean: cfg.clean(&record.body),
        method: cfg.method,
    }
}

/// Cleans a batch with one configuration, preserving order.
pub fn clean_all(records: &[IssueRecord], cfg: &CleaningConfig, exec: Execution) -> Vec<CleanedIssue> {
    exec.map(records, |r| clean_issue(r, cfg))
}
