//! Run manifests: what was run, with which resolved settings, on which
//! files. Manifests carry no timestamps, so identical runs write identical
//! manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// SHA-256 of `blob <len>\0<bytes>`, as git's SHA-256 object format hashes
/// file contents.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, Failure> {
    let bytes =
        std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(git_blob_hash(&bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<S: Serialize> {
    pub subcommand: &'static str,
    pub version: &'static str,
    pub settings: S,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Content hash of the checkpoint read or written, if any.
    pub checkpoint_hash: Option<String>,
}

impl<S: Serialize> RunManifest<S> {
    pub fn new(subcommand: &'static str, settings: S) -> Self {
        Self {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoint_hash: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Failure::Data(e.to_string()))?;
        std::fs::write(path, json + "\n")
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json`
/// beside single-file outputs.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
