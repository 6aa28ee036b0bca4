use std::path::{Path, PathBuf};

/// Failure categories of the command-line tool, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum DslError {
    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing input {}: {hint}", path.display())]
    Dependency { path: PathBuf, hint: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] dsl_core::Error),
}

impl DslError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DslError::Config(_) => 2,
            DslError::Parse { .. } => 3,
            DslError::Io { .. } => 4,
            DslError::Dependency { .. } => 5,
            DslError::Compute(_) => 6,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            DslError::Config(_) => "config",
            DslError::Parse { .. } => "parse",
            DslError::Io { .. } => "io",
            DslError::Dependency { .. } => "dependency",
            DslError::Compute(_) => "compute",
        }
    }

    pub fn parse(path: &Path, offset: usize, message: impl Into<String>) -> Self {
        DslError::Parse { path: path.to_path_buf(), offset, message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DslError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, DslError>;

/// Format-level decode failure, located by byte offset.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("byte {offset}: {message}")]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

impl DecodeError {
    pub fn new(offset: usize, message: impl Into<String>) -> Self {
        Self { offset, message: message.into() }
    }

    pub fn at(self, path: &Path) -> DslError {
        DslError::parse(path, self.offset, self.message)
    }
}

/// Reads a file, mapping a missing file to a dependency error.
pub fn read_input(path: &Path, hint: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DslError::Dependency { path: path.to_path_buf(), hint: hint.to_string() }
        } else {
            DslError::io(path, e)
        }
    })
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DslError::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| DslError::io(path, e))
}

/// Byte offset of a serde_json error within `text`.
pub fn json_offset(text: &str, err: &serde_json::Error) -> usize {
    let (line, col) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + col.saturating_sub(1)).min(text.len())
}
