//! Run manifests: the resolved command, config and seed, plus SHA-256
//! digests of every input and artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use silcarve::io::write_json;
use silcarve::{Error, Result};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Command-line arguments after the subcommand, without `--config`
    /// and `--threads`.
    pub args: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Digests of every regular file under `path`, in sorted order.
pub fn digests(path: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    collect(path, &mut files)?;
    files.sort();
    files.into_iter().map(|p| Ok(FileDigest { sha256: sha256_file(&p)?, path: p })).collect()
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.file_name().is_some_and(|n| n == MANIFEST_NAME) {
                continue;
            }
            collect(&p, out)?;
        }
    } else {
        out.push(path.to_owned());
    }
    Ok(())
}

pub const MANIFEST_NAME: &str = "run.json";

/// `dir/run.json` for directory outputs, `name.run.json` beside file outputs.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join(MANIFEST_NAME)
    } else {
        out.with_extension(MANIFEST_NAME)
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
