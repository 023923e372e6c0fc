//! Line-oriented JSON manifests.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub(crate) trait Identified {
    fn id(&self) -> &str;

    /// Entry-level constraints beyond the JSON shape.
    fn check(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Parses one JSON object per non-blank line. Line numbers in errors are
/// 1-based; duplicate ids name both lines.
pub(crate) fn parse_lines<T: DeserializeOwned + Identified>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: T = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if entry.id().is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                message: "id must not be empty".into(),
            });
        }
        entry.check().map_err(|message| Error::Manifest {
            line: line_no,
            message,
        })?;
        if let Some(&first) = seen.get(entry.id()) {
            return Err(Error::DuplicateId {
                id: entry.id().to_string(),
                first_line: first,
                second_line: line_no,
            });
        }
        seen.insert(entry.id().to_string(), line_no);
        out.push(entry);
    }
    Ok(out)
}

pub(crate) fn read_lines<T: DeserializeOwned + Identified>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&text)
}

/// Resolves `p` against the directory holding the manifest.
pub(crate) fn resolve(manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest
            .parent()
            .map(|d| d.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
