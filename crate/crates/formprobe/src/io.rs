//! File formats: simulator specs, the JSONL run database, test plans.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use formprobe_core::pipeline::{RunRecord, TestPlan};
use formprobe_core::simulator::{FormSpec, SpecDocument, SpecError};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Spec { path: PathBuf, source: SpecError },
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })
}

fn create(path: &Path) -> Result<File, IoError> {
    let werr = |source| IoError::Write { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(werr)?;
    }
    File::create(path).map_err(werr)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    create(path)?.write_all(text.as_bytes()).map_err(|source| IoError::Write { path: path.into(), source })
}

pub fn load_spec(path: &Path) -> Result<FormSpec, IoError> {
    let text = read_text(path)?;
    let doc: SpecDocument = serde_json::from_str(&text)
        .map_err(|e| IoError::Spec { path: path.into(), source: SpecError::Schema(e.to_string()) })?;
    FormSpec::from_document(doc).map_err(|source| IoError::Spec { path: path.into(), source })
}

/// One JSON record per line.
pub fn write_run_db(path: &Path, records: &[RunRecord]) -> Result<(), IoError> {
    let werr = |source| IoError::Write { path: path.into(), source };
    let mut w = BufWriter::new(create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })?;
        writeln!(w, "{line}").map_err(werr)?;
    }
    w.flush().map_err(werr)
}

pub fn read_run_db(path: &Path) -> Result<Vec<RunRecord>, IoError> {
    let f = File::open(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| IoError::Read { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| IoError::Format { path: path.into(), message: format!("line {}: {e}", i + 1) })?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_plan(path: &Path) -> Result<TestPlan, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_db_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/runs.jsonl");
        write_run_db(&p, &[]).unwrap();
        assert!(read_run_db(&p).unwrap().is_empty());
    }

    #[test]
    fn bad_spec_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_text(&p, "{\"id\": 3}").unwrap();
        assert!(matches!(load_spec(&p), Err(IoError::Spec { source: SpecError::Schema(_), .. })));
    }
}
