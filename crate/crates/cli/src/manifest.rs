//! Run manifests: what a command was asked to do and what it produced.

use std::fs;
use std::path::{Path, PathBuf};

use btm::io::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    pub version: String,
    pub threads: usize,
    pub seed: u64,
    /// Effective options after defaults and overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    #[cfg(test)]
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

pub fn hash_file(path: &Path) -> Result<Artifact, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Artifact {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Hashes `path`, or every file below it in path order if it is a directory.
/// Earlier manifests inside the tree are skipped.
pub fn hash_tree(path: &Path) -> Result<Vec<Artifact>, CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![hash_file(path)?]);
    }
    let mut files = Vec::new();
    collect(path, &mut files)?;
    files.sort();
    files.iter().map(|f| hash_file(f)).collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, b"abc").unwrap();
        let a = hash_file(&p).unwrap();
        assert_eq!(
            a.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(a.bytes, 3);
    }

    #[test]
    fn tree_is_sorted_and_skips_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("b"), b"1").unwrap();
        fs::write(dir.path().join("sub").join("a"), b"2").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), b"{}").unwrap();
        let names: Vec<_> = hash_tree(dir.path())
            .unwrap()
            .into_iter()
            .map(|a| a.path.strip_prefix(dir.path()).unwrap().to_path_buf())
            .collect();
        assert_eq!(names, vec![PathBuf::from("b"), PathBuf::from("sub/a")]);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "synth".into(),
            args: vec!["synth".into(), "--seed".into(), "3".into()],
            version: "0.1.0".into(),
            threads: 2,
            seed: 3,
            config: serde_json::json!({"seed": 3}),
            inputs: vec![],
            outputs: vec![],
            wall_seconds: 0.5,
        };
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }
}
