use std::path::Path;

use serde::Serialize;
use thermocae::Error;

/// Process exit codes.
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;

/// A failed run, rendered as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

impl Failure {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            error: "config",
            key: Some(key.into()),
            path: None,
            message: message.into(),
            code: EXIT_CONFIG,
        }
    }

    pub fn missing(path: &Path, err: &std::io::Error) -> Self {
        Failure {
            error: "missing_input",
            key: None,
            path: Some(path.display().to_string()),
            message: err.to_string(),
            code: EXIT_MISSING,
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("plain fields serialize")
    }
}

/// Leading `section.key` of a validation message, if it has one.
fn leading_key(msg: &str) -> Option<String> {
    let token = msg.split([' ', ':']).next()?;
    let dotted = token.contains('.')
        && token
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    dotted.then(|| token.to_string())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure {
                error: "config",
                key: leading_key(&msg),
                path: None,
                message: msg,
                code: EXIT_CONFIG,
            },
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Failure::missing(&path, &source)
            }
            other => {
                let path = match &other {
                    Error::Io { path, .. } | Error::Format { path, .. } => Some(path.display().to_string()),
                    _ => None,
                };
                Failure {
                    error: "runtime",
                    key: None,
                    path,
                    message: other.to_string(),
                    code: EXIT_RUNTIME,
                }
            }
        }
    }
}
