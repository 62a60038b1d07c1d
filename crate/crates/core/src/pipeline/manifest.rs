//! Per-stage manifests recording the hashes of everything a stage read and
//! wrote, so a later run can reuse outputs whose inputs have not changed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_DIR: &str = "manifests";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Relative path (forward slashes) to hex sha256.
pub type HashMap = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config: String,
    pub inputs: HashMap,
    pub outputs: HashMap,
}

impl Manifest {
    pub fn path(out: &Path, stage: &str) -> PathBuf {
        out.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn load(out: &Path, stage: &str) -> Option<Manifest> {
        let text = fs::read_to_string(Self::path(out, stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = Self::path(out, &self.stage);
        create_parent(&path)?;
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn remove(out: &Path, stage: &str) -> Result<()> {
        let path = Self::path(out, stage);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
            _ => Ok(()),
        }
    }

    /// True when the config matches and every recorded file still has its
    /// recorded hash.
    pub fn is_current(&self, out: &Path, config: &str) -> bool {
        self.config == config
            && self
                .inputs
                .iter()
                .chain(&self.outputs)
                .all(|(rel, hash)| sha256_file(&out.join(rel)).is_ok_and(|h| &h == hash))
    }
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Hands out paths under the output directory and remembers which ones a
/// stage read and wrote.
#[derive(Debug)]
pub struct StageIo<'a> {
    out: &'a Path,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl<'a> StageIo<'a> {
    pub fn new(out: &'a Path) -> Self {
        StageIo {
            out,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Path of an upstream artifact; missing files are a data error.
    pub fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "missing input `{rel}`; run the stage that produces it first"
            )));
        }
        if !self.inputs.iter().any(|r| r == rel) {
            self.inputs.push(rel.to_string());
        }
        Ok(path)
    }

    /// Path for a new artifact, with its directory created.
    pub fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.out.join(rel);
        create_parent(&path)?;
        if !self.outputs.iter().any(|r| r == rel) {
            self.outputs.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn root(&self) -> &Path {
        self.out
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn into_manifest(self, stage: &str, config: &str) -> Result<Manifest> {
        let hash_all = |rels: &[String]| -> Result<HashMap> {
            rels.iter()
                .map(|r| Ok((r.clone(), sha256_file(&self.out.join(r))?)))
                .collect()
        };
        Ok(Manifest {
            stage: stage.to_string(),
            config: config.to_string(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_detects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        let mut io = StageIo::new(dir.path());
        io.input("a.txt").unwrap();
        let b = io.output("sub/b.txt").unwrap();
        fs::write(&b, "two").unwrap();
        let m = io.into_manifest("s", "cfg").unwrap();
        m.save(dir.path()).unwrap();

        let loaded = Manifest::load(dir.path(), "s").unwrap();
        assert_eq!(loaded, m);
        assert!(loaded.is_current(dir.path(), "cfg"));
        assert!(!loaded.is_current(dir.path(), "other"));
        fs::write(dir.path().join("a.txt"), "changed").unwrap();
        assert!(!loaded.is_current(dir.path(), "cfg"));
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = StageIo::new(dir.path()).input("nope.csv").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
