//! Per-repository model registry.
//!
//! Each repository under evaluation gets exactly one entry holding its
//! fine-tuned model id (once known), its cleaning method and its epoch count.
//! The on-disk form is TOML with one table per repository:
//!
//! ```toml
//! ["facebook/react"]
//! model_id = "ft:gpt-3.5-turbo-0613:org:fb-issueclassifier:8LLGMnAI"
//! cleaning_method = "method1"
//! epochs = 3
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::textclean::CleaningMethod;

/// Fine-tune epoch count; `Auto` leaves the choice to the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Epochs {
    #[default]
    Auto,
    Fixed(u32),
}

impl Epochs {
    /// `None` for `Auto`.
    pub fn explicit(self) -> Option<u32> {
        match self {
            Epochs::Auto => None,
            Epochs::Fixed(n) => Some(n),
        }
    }
}

impl fmt::Display for Epochs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epochs::Auto => f.write_str("auto"),
            Epochs::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Epochs {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Epochs::Auto => s.serialize_str("auto"),
            Epochs::Fixed(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Epochs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct EpochsVisitor;

        impl Visitor<'_> for EpochsVisitor {
            type Value = Epochs;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"auto\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Epochs, E> {
                match u32::try_from(v) {
                    Ok(n) if n >= 1 => Ok(Epochs::Fixed(n)),
                    _ => Err(E::custom(format!("epochs must be between 1 and {}, got {v}", u32::MAX))),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Epochs, E> {
                if v < 1 {
                    return Err(E::custom(format!("epochs must be at least 1, got {v}")));
                }
                self.visit_u64(v as u64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Epochs, E> {
                if v == "auto" {
                    return Ok(Epochs::Auto);
                }
                v.parse::<u64>().map_err(|_| E::custom(format!("invalid epochs {v:?}"))).and_then(|n| self.visit_u64(n))
            }
        }

        d.deserialize_any(EpochsVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub cleaning_method: CleaningMethod,
    #[serde(default)]
    pub epochs: Epochs,
}

/// Repositories of the issue-classification competition dataset with the
/// cleaning method and epoch count used for each fine-tune.
pub const COMPETITION_REPOS: [(&str, CleaningMethod, u32); 5] = [
    ("facebook/react", CleaningMethod::Method1, 3),
    ("tensorflow/tensorflow", CleaningMethod::Method2, 10),
    ("microsoft/vscode", CleaningMethod::Method1, 6),
    ("bitcoin/bitcoin", CleaningMethod::Method1, 3),
    ("opencv/opencv", CleaningMethod::Method2, 6),
];

pub const DEFAULT_BASE_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot access registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid registry: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no registry entry for repository {0:?}")]
    MissingRepo(String),
    #[error("repository {0:?} has no fine-tuned model id")]
    MissingModel(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry for the five competition repositories, without model ids.
    pub fn competition_defaults() -> Self {
        let mut reg = Self::new();
        for (repo, method, epochs) in COMPETITION_REPOS {
            reg.insert(repo, RegistryEntry { model_id: None, cleaning_method: method, epochs: Epochs::Fixed(epochs) });
        }
        reg
    }

    pub fn insert(&mut self, repository: impl Into<String>, entry: RegistryEntry) {
        self.entries.insert(repository.into(), entry);
    }

    pub fn get(&self, repository: &str) -> Result<&RegistryEntry, RegistryError> {
        self.entries.get(repository).ok_or_else(|| RegistryError::MissingRepo(repository.to_string()))
    }

    pub fn get_mut(&mut self, repository: &str) -> Option<&mut RegistryEntry> {
        self.entries.get_mut(repository)
    }

    pub fn model_id(&self, repository: &str) -> Result<&str, RegistryError> {
        self.get(repository)?.model_id.as_deref().ok_or_else(|| RegistryError::MissingModel(repository.to_string()))
    }

    pub fn set_model_id(&mut self, repository: &str, model_id: impl Into<String>) -> Result<(), RegistryError> {
        let entry =
            self.entries.get_mut(repository).ok_or_else(|| RegistryError::MissingRepo(repository.to_string()))?;
        entry.model_id = Some(model_id.into());
        Ok(())
    }

    pub fn repositories(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RegistryEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, RegistryError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| RegistryError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml())
            .map_err(|source| RegistryError::Io { path: path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn competition_table() {
        let reg = ModelRegistry::competition_defaults();
        assert_eq!(reg.len(), 5);
        let e = |r: &str| reg.get(r).unwrap().clone();
        assert_eq!(e("facebook/react").cleaning_method, CleaningMethod::Method1);
        assert_eq!(e("tensorflow/tensorflow").cleaning_method, CleaningMethod::Method2);
        assert_eq!(e("opencv/opencv").cleaning_method, CleaningMethod::Method2);
        assert_eq!(e("microsoft/vscode").cleaning_method, CleaningMethod::Method1);
        assert_eq!(e("bitcoin/bitcoin").cleaning_method, CleaningMethod::Method1);
        let epochs: Vec<_> =
            ["facebook/react", "tensorflow/tensorflow", "microsoft/vscode", "bitcoin/bitcoin", "opencv/opencv"]
                .iter()
                .map(|r| e(r).epochs.explicit().unwrap())
                .collect();
        assert_eq!(epochs, [3, 10, 6, 3, 6]);
    }

    #[test]
    fn toml_round_trip() {
        let mut reg = ModelRegistry::competition_defaults();
        reg.set_model_id("facebook/react", "ft:gpt-3.5-turbo-0613:gcucst440:fb-issueclassifier:8LLGMnAI").unwrap();
        reg.insert(
            "x/y",
            RegistryEntry { model_id: None, cleaning_method: CleaningMethod::Method2, epochs: Epochs::Auto },
        );
        let text = reg.to_toml();
        assert!(text.contains("[\"facebook/react\"]"));
        assert!(text.contains("epochs = \"auto\""));
        assert_eq!(ModelRegistry::from_toml(&text).unwrap(), reg);
    }

    #[test]
    fn missing_entries() {
        let reg = ModelRegistry::competition_defaults();
        assert!(matches!(reg.get("nope/nope"), Err(RegistryError::MissingRepo(_))));
        assert!(matches!(reg.model_id("facebook/react"), Err(RegistryError::MissingModel(_))));
    }

    #[test]
    fn epochs_parse() {
        let parse = |s: &str| toml::from_str::<RegistryEntry>(&format!("cleaning_method = \"method1\"\n{s}"));
        assert_eq!(parse("epochs = 3").unwrap().epochs, Epochs::Fixed(3));
        assert_eq!(parse("epochs = \"auto\"").unwrap().epochs, Epochs::Auto);
        assert_eq!(parse("").unwrap().epochs, Epochs::Auto);
        assert!(parse("epochs = 0").is_err());
        assert!(parse("epochs = -2").is_err());
        assert!(parse("epochs = \"many\"").is_err());
    }
}
