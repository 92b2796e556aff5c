//! Run manifests: the resolved config, the seed and SHA-256 hashes of every
//! input and output artifact.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Lexically normalized absolute form of `p`.
pub fn normalize(p: &Path) -> PathBuf {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(p)
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// `target` relative to directory `from`, both normalized.
pub fn relative_to(target: &Path, from: &Path) -> PathBuf {
    let t = normalize(target);
    let f = normalize(from);
    let tc: Vec<Component> = t.components().collect();
    let fc: Vec<Component> = f.components().collect();
    let common = tc.iter().zip(&fc).take_while(|(a, b)| a == b).count();
    let mut out = PathBuf::new();
    for _ in common..fc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file; for a sample store's manifest the wall-clock timings are
/// dropped first so reruns hash identically.
fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    if path.file_name().is_some_and(|n| n == ltpdpm::sampler::store::MANIFEST) {
        if let Ok(mut v) = serde_json::from_slice::<serde_json::Value>(&bytes) {
            if let Some(obj) = v.as_object_mut() {
                if obj.remove("timings").is_some() {
                    return Ok(sha256_bytes(v.to_string().as_bytes()));
                }
            }
        }
    }
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Default)]
pub struct ArtifactHashes {
    base: PathBuf,
    entries: BTreeMap<String, String>,
}

impl ArtifactHashes {
    /// Keys are paths relative to `base`.
    pub fn new(base: &Path) -> Self {
        ArtifactHashes {
            base: base.to_path_buf(),
            entries: BTreeMap::new(),
        }
    }

    /// Hash a file, or every file below a directory.
    pub fn add(&mut self, path: &Path) -> Result<(), CliError> {
        if path.is_dir() {
            let mut names: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            names.sort();
            for n in names {
                self.add(&n)?;
            }
            return Ok(());
        }
        let key = relative_to(path, &self.base).to_string_lossy().replace('\\', "/");
        self.entries.insert(key, hash_file(path)?);
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Write `<command>.config.toml` (re-executable from the output directory)
/// and `<command>.manifest.json` into `out_dir`.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    echo: &RunConfig,
    inputs: &ArtifactHashes,
    outputs: &ArtifactHashes,
) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Module(ltpdpm::Error::Io {
        path: p.to_path_buf(),
        source: e,
    });
    let config_path = out_dir.join(format!("{command}.config.toml"));
    std::fs::write(&config_path, echo.to_toml()).map_err(|e| io(&config_path, e))?;
    let manifest = Manifest {
        command,
        version: crate::VERSION,
        seed: echo.seed,
        config: echo,
        inputs: &inputs.entries,
        outputs: &outputs.entries,
    };
    let path = out_dir.join(format!("{command}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Module(e.into()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))
}
