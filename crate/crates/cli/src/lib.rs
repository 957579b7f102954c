//! Library side of the `issue-triage` command: configuration loading and the
//! pipeline stages, so they can be driven from tests as well as the binary.

pub mod commands;
pub mod config;

use triage_core::corpus::CorpusError;

use crate::config::ConfigError;

/// Input or configuration content that cannot be processed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;

/// 2 when the error comes from invalid input or configuration, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|c| {
        c.is::<ValidationError>()
            || c.is::<ConfigError>()
            || c.downcast_ref::<CorpusError>().is_some_and(CorpusError::is_validation)
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_FAILURE
    }
}
