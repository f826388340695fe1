//! Append-only JSON-lines ledgers and atomic file writes.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AppError, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(AppError::io(&tmp))?;
        f.write_all(bytes).map_err(AppError::io(&tmp))?;
        f.sync_all().map_err(AppError::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(AppError::io(path))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    serde_json::from_str(&text).map_err(|e| AppError::json(path, &text, &e))
}

/// Reads a stage artifact, turning "not found" into a dependency error.
pub fn require<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    if !path.exists() {
        return Err(missing(path, stage));
    }
    read_json(path)
}

pub fn missing(path: &Path, stage: &str) -> AppError {
    AppError::MissingStage {
        stage: stage.to_string(),
        artifact: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        path: path.to_path_buf(),
    }
}

/// Single-writer JSON-lines file. Every record is flushed and synced
/// before `append` returns.
pub struct Ledger {
    path: PathBuf,
    file: File,
}

impl Ledger {
    /// Starts a new ledger, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(AppError::io(dir))?;
        }
        let file = File::create(path).map_err(AppError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Opens for appending. A partial last line left by an interrupted
    /// writer is cut off first.
    pub fn append_to(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(AppError::io(path))?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let file = OpenOptions::new().write(true).open(path).map_err(AppError::io(path))?;
        file.set_len(keep as u64).map_err(AppError::io(path))?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0)).map_err(AppError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(AppError::io(&self.path))?;
        self.file.flush().map_err(AppError::io(&self.path))?;
        self.file.sync_data().map_err(AppError::io(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parsed lines of a ledger. An unterminated last line is an interrupted
/// write and is ignored; any other bad line is a parse error.
pub fn read_lines(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let complete = line.ends_with('\n');
        let body = line.trim_end();
        if !body.is_empty() {
            match serde_json::from_str(body) {
                Ok(v) => out.push(v),
                Err(_) if !complete => break,
                Err(e) => {
                    return Err(AppError::Parse {
                        path: path.to_path_buf(),
                        offset: offset + e.column().saturating_sub(1),
                        message: e.to_string(),
                    })
                }
            }
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|v| {
            serde_json::from_value(v).map_err(|e| AppError::Parse {
                path: path.to_path_buf(),
                offset: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn truncated_tail_is_ignored_and_cut_on_append() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("l.jsonl");
        let mut l = Ledger::create(&p).unwrap();
        l.append(&json!({"a": 1})).unwrap();
        l.append(&json!({"a": 2})).unwrap();
        drop(l);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"a\": 3, \"b").unwrap();
        drop(f);
        assert_eq!(read_lines(&p).unwrap().len(), 2);
        let mut l = Ledger::append_to(&p).unwrap();
        l.append(&json!({"a": 4})).unwrap();
        let v = read_lines(&p).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[2]["a"], 4);
    }

    #[test]
    fn bad_middle_line_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("l.jsonl");
        fs::write(&p, "{\"a\":1}\n{oops}\n{\"a\":2}\n").unwrap();
        match read_lines(&p).unwrap_err() {
            AppError::Parse { offset, .. } => assert_eq!(offset, 9),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_stage_names_artifact() {
        let e = require::<serde_json::Value>(Path::new("/nonexistent/evaluation.jsonl"), "evaluate").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let s = e.to_string();
        assert!(s.contains("evaluation.jsonl") && s.contains("evaluate"), "{s}");
    }
}
