//! Per-stage provenance records under `out/manifests/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_json, relative, sha256_file, write_json};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(root: &Path, path: &Path) -> Result<Self> {
        Ok(Self {
            path: relative(root, path),
            sha256: sha256_file(path)?,
        })
    }
}

/// No timestamps, so an identical rerun rewrites identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl StageManifest {
    pub fn build(
        root: &Path,
        stage: &str,
        config_sha256: &str,
        seed: u64,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        let records = |paths: &[PathBuf]| -> Result<Vec<FileRecord>> {
            let mut v = paths
                .iter()
                .map(|p| FileRecord::of(root, p))
                .collect::<Result<Vec<_>>>()?;
            v.sort();
            v.dedup();
            Ok(v)
        };
        Ok(Self {
            stage: stage.into(),
            tool_version: TOOL_VERSION.into(),
            config_sha256: config_sha256.into(),
            seed,
            inputs: records(inputs)?,
            outputs: records(outputs)?,
        })
    }

    pub fn path(root: &Path, stage: &str) -> PathBuf {
        root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let p = Self::path(root, &self.stage);
        write_json(&p, self)?;
        Ok(p)
    }

    pub fn read(root: &Path, stage: &str) -> Result<Self> {
        read_json(&Self::path(root, stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_sorted_and_relative() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let a = root.join("z").join("a.txt");
        let b = root.join("b.txt");
        std::fs::create_dir_all(a.parent().unwrap()).unwrap();
        std::fs::write(&a, "a").unwrap();
        std::fs::write(&b, "").unwrap();
        let m = StageManifest::build(root, "demo", "cafe", 3, &[], &[a.clone(), b.clone(), a]).unwrap();
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(m.outputs[0].path, "b.txt");
        assert_eq!(m.outputs[1].path, "z/a.txt");
        assert_eq!(
            m.outputs[0].sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let p = m.write(root).unwrap();
        let first = std::fs::read(&p).unwrap();
        m.write(root).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        assert_eq!(StageManifest::read(root, "demo").unwrap(), m);
    }
}
