// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bad ranges, unknown ids, malformed files).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (shape mismatch, misuse of a state machine).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared during sampling.
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    /// The detector could not separate safe from unsafe score distributions.
    #[error("calibration failure: equal error rate {eer:.3} exceeds 0.4")]
    Calibration { eer: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Wraps a lower-level error with run context (method, scenario, seed).
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: path.into().display().to_string(),
            source,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 calibration, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Calibration { .. } => 4,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_root_cause() {
        let e = Error::Numeric {
            step: 3,
            detail: "nan".into(),
        }
        .with_context("method spguard, scenario a1, seed 7");
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("seed 7"));
        assert_eq!(Error::config("x").exit_code(), 2);
        assert_eq!(Error::Calibration { eer: 0.5 }.exit_code(), 4);
        assert_eq!(Error::contract("x").exit_code(), 1);
    }
}
