//! File helpers that attach paths to errors.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { origin: path.display().to_string(), detail: e.to_string() })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Fails with a config error naming `what` when `path` is missing.
pub fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found at {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.json");
        write_json(&p, &vec![1.5, 2.0]).unwrap();
        let back: Vec<f64> = read_json(&p).unwrap();
        assert_eq!(back, vec![1.5, 2.0]);
        let missing = dir.path().join("nope");
        assert_eq!(read_text(&missing).unwrap_err().exit_code(), 1);
        assert!(require(&missing, "thing").is_err());
        write_text(&missing, "{").unwrap();
        assert_eq!(read_json::<Vec<f64>>(&missing).unwrap_err().exit_code(), 2);
    }
}
