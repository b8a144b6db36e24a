use ampkin::annotations::Violation;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ampkin::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: ampkin::Error,
    },

    #[error("{} record(s) failed validation", .0.len())]
    Validation(Vec<RecordViolations>),
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordViolations {
    pub record: usize,
    pub image: String,
    pub violations: Vec<Violation>,
}

impl CliError {
    pub fn in_file(path: &std::path::Path) -> impl FnOnce(ampkin::Error) -> CliError + '_ {
        move |source| CliError::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }

    fn core(&self) -> Option<&ampkin::Error> {
        match self {
            CliError::Core(e) | CliError::File { source: e, .. } => Some(e),
            CliError::Validation(_) => None,
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        use ampkin::Error as E;
        let kind = match self.core() {
            None => "validation",
            Some(E::Io(_)) => "io",
            Some(E::Image(_)) => "image",
            Some(E::Parse { .. }) => "parse",
            Some(E::Schema(_)) => "schema",
            Some(E::Config(_)) => "config",
            Some(E::DimensionMismatch(_)) => "dimension_mismatch",
            Some(E::Degenerate(_)) => "degenerate",
            Some(E::DegenerateGeometry(_)) => "degenerate_geometry",
            Some(E::InvalidInput(_)) => "invalid_input",
        };
        let mut out = json!({ "error": kind, "message": self.to_string() });
        if let CliError::File { path, .. } = self {
            out["path"] = json!(path);
        }
        if let Some(ampkin::Error::Parse { offset, .. }) = self.core() {
            out["offset"] = json!(offset);
        }
        if let CliError::Validation(v) = self {
            out["records"] = serde_json::to_value(v).expect("violations serialize");
        }
        out
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
