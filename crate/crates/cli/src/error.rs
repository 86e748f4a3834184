//! Error channel for the command-line layer. Two categories map straight
//! to exit codes: configuration problems (bad flags, unreadable or invalid
//! inputs, contract violations) exit 2, numerical failures exit 3.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Wrong configuration, missing or malformed inputs, contract breaches.
    Config(String),
    /// The numerics gave up: divergence, non-convergence, degeneracy.
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Numeric(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fungraph::Error> for CliError {
    fn from(e: fungraph::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Wraps an error with the path it concerns.
pub fn at_path<E: fmt::Display>(path: &std::path::Path, e: E) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_by_category() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
    }

    #[test]
    fn library_errors_keep_their_category() {
        let config: CliError = fungraph::Error::Config("bad".into()).into();
        assert_eq!(config.exit_code(), 2);
        let contract: CliError = fungraph::Error::Contract("bad".into()).into();
        assert_eq!(contract.exit_code(), 2);
        let numeric: CliError = fungraph::Error::Divergence { epoch: 3 }.into();
        assert_eq!(numeric.exit_code(), 3);
    }
}
