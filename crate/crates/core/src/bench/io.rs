//! Line-oriented file formats: a `#<format>` version line, a `#config` line
//! holding the resolved configuration as JSON, then the body.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short stable tag for the one-line CLI error format.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Io { .. } => "io",
            BenchError::Parse(_) => "parse",
            BenchError::Config(_) => "config",
            BenchError::Training(_) => "training",
        }
    }
}

impl From<serde_json::Error> for BenchError {
    fn from(e: serde_json::Error) -> Self {
        BenchError::Parse(e.to_string())
    }
}

pub fn header(format: &str, meta: &impl Serialize) -> Result<String, BenchError> {
    Ok(format!("#{format}\n#config {}\n", serde_json::to_string(meta)?))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| BenchError::io(path, e))
}

pub fn write_versioned(path: &Path, format: &str, meta: &impl Serialize, lines: &[String]) -> Result<(), BenchError> {
    let mut out = header(format, meta)?;
    for l in lines {
        writeln!(out, "{l}").expect("writing to a String");
    }
    write_file(path, &out)
}

/// Returns the parsed `#config` value and the body lines.
pub fn read_versioned(path: &Path, format: &str) -> Result<(serde_json::Value, Vec<String>), BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let mut lines = text.lines();
    let version = lines.next().unwrap_or_default();
    if version != format!("#{format}") {
        return Err(BenchError::Parse(format!(
            "{}: expected header '#{format}', found '{version}'",
            path.display()
        )));
    }
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("#config "))
        .ok_or_else(|| BenchError::Parse(format!("{}: missing #config line", path.display())))?;
    let meta = serde_json::from_str(meta)?;
    Ok((meta, lines.filter(|l| !l.is_empty()).map(str::to_owned).collect()))
}

/// SplitMix64 finalizer applied to `seed ^ stream`, used to derive
/// independent sub-seeds from one master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = (seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versioned_round_trip_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_versioned(&p, "demo v1", &serde_json::json!({"a": 1}), &["one".into(), "two".into()]).unwrap();
        let (meta, lines) = read_versioned(&p, "demo v1").unwrap();
        assert_eq!(meta["a"], 1);
        assert_eq!(lines, vec!["one", "two"]);
        assert!(matches!(read_versioned(&p, "demo v2"), Err(BenchError::Parse(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
