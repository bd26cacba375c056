use std::path::{Path, PathBuf};

use serde::Serialize;

/// Machine-readable command failure.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config".into(),
            message: message.into(),
            path: None,
        }
    }

    pub fn missing_path(path: &Path, e: &std::io::Error) -> Self {
        Self {
            kind: "missing_path".into(),
            message: format!("cannot read {}: {e}", path.display()),
            path: Some(path.to_path_buf()),
        }
    }
}

impl From<hcs_core::Error> for CliError {
    fn from(e: hcs_core::Error) -> Self {
        use hcs_core::Error as E;
        let (kind, path) = match &e {
            E::Io { path, .. } => ("io", Some(path.clone())),
            E::Schema(_) | E::Arrow(_) | E::Csv(_) | E::Json(_) => ("format", None),
            E::Row { .. } | E::Parse { .. } => ("data", None),
            E::DimensionMismatch { .. } | E::InvalidInput(_) => ("invalid_input", None),
            E::Degenerate(_) => ("degenerate", None),
            E::Numerical(_) => ("numerical", None),
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
            path,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}
