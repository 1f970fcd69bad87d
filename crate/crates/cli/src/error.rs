use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ldm3d_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    Magic,
    #[error("checkpoint format version {found} is not supported (this build reads version {supported}); re-save it with a matching build")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch in {what} at byte offset {offset}")]
    Checksum { what: String, offset: usize },
    #[error("truncated checkpoint: {what} needs bytes {offset}..{end} but the file has {len}")]
    Truncated {
        what: String,
        offset: usize,
        end: usize,
        len: usize,
    },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: String, found: String },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier for machine consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(_) => "core",
            CliError::Io { .. } => "io",
            CliError::Magic => "bad-magic",
            CliError::Version { .. } => "version-mismatch",
            CliError::Checksum { .. } => "checksum",
            CliError::Truncated { .. } => "truncated",
            CliError::KindMismatch { .. } => "kind-mismatch",
            CliError::Architecture(_) => "architecture-mismatch",
            CliError::Header(_) => "header",
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Dataset(_) => "dataset",
            CliError::Input(_) => "input",
        }
    }

    /// `{"error": kind, "message": text}` on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
