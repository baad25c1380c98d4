use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config is malformed or asks for something the library refuses.
    /// `path` names the offending field, e.g. `process.p`.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 2,
            _ => 1,
        }
    }

    /// Attributes a library error to a config field. Parameter names the
    /// library reports are looked up in the section that owns them.
    pub fn from_core(section: &str, e: percolab_core::Error) -> Self {
        use percolab_core::Error as E;
        let path = match &e {
            E::BoundExceeded { name, .. } | E::InvalidParameter { name, .. } => {
                let owner = match *name {
                    "n" => "run",
                    "p" | "p_prime" | "eps" => "process",
                    "radius" | "side" => "graph",
                    _ => section,
                };
                format!("{owner}.{name}")
            }
            E::UnsupportedFamily(_) | E::WrongFamily { .. } => "graph.family".to_string(),
            _ => section.to_string(),
        };
        CliError::validation(path, e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
