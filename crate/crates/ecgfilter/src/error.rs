use std::path::PathBuf;

use ecgfilter_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("{path}: expected {expected} bytes ({detail}), found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
        detail: String,
    },
    #[error("{path}: corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: unsupported format version {found} (this build reads {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },
    #[error("missing {artifact} at {path}; run `{stage}` first")]
    MissingStage { stage: String, artifact: String, path: PathBuf },
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    /// 1 usage, 2 data, 3 diverged training.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Core(CoreError::Diverged { .. }) => 3,
            AppError::Core(CoreError::Config(_)) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }

    /// Maps a serde_json error to a byte offset within `text`.
    pub fn json(path: impl Into<PathBuf>, text: &str, e: &serde_json::Error) -> AppError {
        AppError::Parse {
            path: path.into(),
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        }
    }
}

/// Byte offset of a 1-based line and column (column counts bytes).
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_follow_lines() {
        let t = "{\n  \"a\": 1,\n  x\n}";
        assert_eq!(byte_offset(t, 1, 1), 0);
        assert_eq!(byte_offset(t, 3, 3), 14);
        let e = serde_json::from_str::<serde_json::Value>(t).unwrap_err();
        assert_eq!(&t[byte_offset(t, e.line(), e.column())..][..1], "x");
    }
}
