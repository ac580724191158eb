//! Experiment manifests: everything needed to reproduce a run — the
//! merged effective config, content hashes of every input file, derived
//! seeds, timings, per-epoch stats, and output paths.

use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use convqa::corpus::SynthConfig;
use convqa::trainer::EpochStats;
use serde::{Deserialize, Serialize};

use crate::config::RegimeConfig;

pub const MANIFEST_VERSION: u32 = 1;

/// A file plus the hash of its content at the time of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn new(path: &Path) -> Result<FileRef> {
        Ok(FileRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    /// Errors when the file's current content no longer matches the hash
    /// recorded at run time.
    pub fn verify(&self) -> Result<()> {
        let now = sha256_file(Path::new(&self.path))?;
        if now != self.sha256 {
            anyhow::bail!(
                "{} has changed since the manifest was written \
                 (recorded sha256 {}, found {})",
                self.path,
                self.sha256,
                now
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRefs {
    pub train: FileRef,
    pub dev: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<FileRef>,
}

/// The three derived training streams plus, for synthesized corpora, the
/// generator seed recorded in the corpus sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub init: u64,
    pub sampling: u64,
    pub shuffle: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_gen: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub checkpoint: String,
    pub stats_csv: String,
}

/// Record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub manifest_version: u32,
    /// Merged effective configuration (file plus flag overrides).
    pub regime: RegimeConfig,
    pub corpus: CorpusRefs,
    pub seeds: SeedRecord,
    pub started_at: String,
    pub finished_at: String,
    pub best_epoch: u32,
    pub best_dev_f1: f64,
    pub epochs: Vec<EpochStats>,
    pub outputs: OutputPaths,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<ExperimentManifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read manifest {}", path.display()))?;
        let m: ExperimentManifest = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse manifest {}", path.display()))?;
        if m.manifest_version != MANIFEST_VERSION {
            anyhow::bail!(
                "manifest {} has version {}, this build reads version {}",
                path.display(),
                m.manifest_version,
                MANIFEST_VERSION
            );
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        Ok(())
    }
}

/// Sidecar written next to every synthesized corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub manifest_version: u32,
    pub generator: SynthConfig,
    pub seed: u64,
    pub output: FileRef,
    pub created_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path)
        .with_context(|| format!("cannot open {} for hashing", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_matches_a_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn verify_rejects_drifted_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        std::fs::write(&path, b"v1").unwrap();
        let fref = FileRef::new(&path).unwrap();
        fref.verify().unwrap();
        std::fs::write(&path, b"v2").unwrap();
        assert!(fref.verify().is_err());
    }
}
