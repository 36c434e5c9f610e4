use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{iso8601, IngestManifest};
use crate::jsonl::file_sha256;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the output directory when inside it.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    /// A directory summarized by a digest of its (path, file_id) listing.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub duration_ms: u64,
    #[serde(default)]
    pub stats: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: String,
    #[serde(with = "iso8601")]
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub stages: Vec<StageEntry>,
}

impl RunManifest {
    pub fn new(mode: &str) -> Self {
        Self {
            mode: mode.to_string(),
            started_at: Utc::now().trunc_subsecs(0),
            finished_at: None,
            status: RunStatus::Running,
            stages: Vec::new(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join(RUN_MANIFEST_FILE);
        fs::create_dir_all(out_dir)?;
        fs::write(&path, serde_json::to_vec_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }

    pub fn read(out_dir: &Path) -> std::io::Result<Self> {
        let bytes = fs::read(out_dir.join(RUN_MANIFEST_FILE))?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

pub(crate) fn display_path(out_dir: &Path, path: &Path) -> String {
    match path.strip_prefix(out_dir) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => path.display().to_string(),
    }
}

/// Hash of a file if it exists.
pub(crate) fn file_ref(out_dir: &Path, path: &Path) -> ArtifactRef {
    ArtifactRef {
        path: display_path(out_dir, path),
        sha256: file_sha256(path).ok(),
        tree: false,
    }
}

pub(crate) fn tree_ref(out_dir: &Path, ingest: &IngestManifest) -> ArtifactRef {
    let mut h = Sha256::new();
    for f in &ingest.files {
        h.update(f.repo_relative_path.as_bytes());
        h.update(b"\t");
        h.update(f.file_id.as_bytes());
        h.update(b"\n");
    }
    ArtifactRef {
        path: display_path(out_dir, &ingest.repo_root),
        sha256: Some(hex::encode(h.finalize())),
        tree: true,
    }
}

/// Recomputes every recorded output hash; returns the paths that differ or
/// are missing.
pub fn verify_outputs(out_dir: &Path, manifest: &RunManifest) -> Vec<String> {
    let mut bad = Vec::new();
    for stage in &manifest.stages {
        for out in stage.outputs.iter().filter(|o| !o.tree) {
            let path = if Path::new(&out.path).is_absolute() {
                PathBuf::from(&out.path)
            } else {
                out_dir.join(&out.path)
            };
            if file_sha256(&path).ok() != out.sha256 {
                bad.push(out.path.clone());
            }
        }
    }
    bad
}
