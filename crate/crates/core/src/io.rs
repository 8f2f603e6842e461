//! File helpers: atomic writes and JSON-lines encoding.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

/// Encodes items one JSON object per line, each line newline-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    atomic_write(path, &to_jsonl(items)?)
}

/// A JSON-lines decode failure with its 1-based line number.
#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parses JSON-lines text. Blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> std::result::Result<Vec<T>, LineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LineError {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| LineError {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub(crate) fn open_buffered(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(BufReader::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Output directory that only becomes visible once [`StagedDir::commit`]
/// succeeds. Dropping it without committing removes the staging area and
/// leaves the target untouched.
pub struct StagedDir {
    target: PathBuf,
    staging: Option<tempfile::TempDir>,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io_err(&parent))?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(&parent)
            .map_err(io_err(&parent))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging: Some(staging),
        })
    }

    pub fn path(&self) -> &Path {
        self.staging.as_ref().expect("staging dir present until commit").path()
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path().join(name)
    }

    /// Moves the staged contents into place. An existing target directory is
    /// replaced as a whole.
    pub fn commit(mut self) -> Result<PathBuf> {
        let staging = self.staging.take().expect("commit called once");
        let staged = staging.keep();
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(io_err(&self.target))?;
        }
        fs::rename(&staged, &self.target).map_err(io_err(&self.target))?;
        Ok(self.target.clone())
    }
}
