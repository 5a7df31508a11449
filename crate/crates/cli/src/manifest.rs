//! Run manifests: which command ran, with what configuration and seed, over
//! which inputs (by content digest), producing which outputs, and how long
//! each stage took. Written atomically once the run succeeds, so a manifest
//! on disk always describes a completed run.

use crate::config::PipelineConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> RunManifest {
        RunManifest {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            seed: config.seed,
            config: *config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    /// Record an input file with its content digest.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Time one stage, recording its duration on success.
    pub fn stage<T>(&mut self, name: &str, run: impl FnOnce() -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let out = run().with_context(|| format!("stage {name} failed"))?;
        self.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self).context("encoding manifest")?;
        body.push('\n');
        write_atomic(path, body.as_bytes())
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: RunManifest = serde_json::from_str(&body)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.version != MANIFEST_VERSION {
            bail!(
                "manifest {} has version {}, this build reads {}",
                path.display(),
                manifest.version,
                MANIFEST_VERSION
            );
        }
        Ok(manifest)
    }

    /// Recompute every recorded input digest and fail on the first change.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = digest_file(Path::new(&input.path))
                .with_context(|| format!("re-reading recorded input {}", input.path))?;
            if now != input.sha256 {
                bail!(
                    "input {} changed since the recorded run: digest {} was {}",
                    input.path,
                    &now[..12],
                    &input.sha256[..12]
                );
            }
        }
        Ok(())
    }
}

/// Default manifest location for a command whose primary output is `out`.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn digest_file(path: &Path) -> Result<String> {
    let body =
        std::fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
    let digest = Sha256::digest(&body);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("moving {} into place", tmp.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_catch_edits_and_manifests_round_trip() {
        let dir = tempfile::tempdir().expect("tempdir");
        let input = dir.path().join("input.json");
        std::fs::write(&input, b"{}").expect("write input");

        let config = PipelineConfig::default();
        let mut manifest = RunManifest::new("score", &config);
        manifest.add_input(&input).expect("digest input");
        manifest.add_output(Path::new("report.json"));
        manifest
            .stage("score", || Ok(()))
            .expect("timed stage");

        let path = dir.path().join("manifest.json");
        manifest.save(&path).expect("save");
        let loaded = RunManifest::load(&path).expect("load");
        assert_eq!(loaded, manifest, "manifest round-trips");
        loaded.verify_inputs().expect("unchanged input verifies");

        std::fs::write(&input, b"{\"edited\":true}").expect("edit input");
        let err = loaded.verify_inputs().unwrap_err();
        assert!(
            format!("{err}").contains("input.json"),
            "changed input named in {err}"
        );
    }

    #[test]
    fn stage_failures_name_the_stage() {
        let mut manifest = RunManifest::new("end-to-end", &PipelineConfig::default());
        let err = manifest
            .stage::<()>("retrieve", || bail!("disk full"))
            .unwrap_err();
        assert!(
            format!("{err:#}").contains("stage retrieve failed"),
            "failing stage named in {err:#}"
        );
        assert!(manifest.stages.is_empty(), "failed stage not recorded");
    }

    #[test]
    fn manifest_paths_sit_beside_the_output() {
        assert_eq!(
            manifest_path_for(Path::new("runs/report.json")),
            PathBuf::from("runs/report.json.manifest.json")
        );
    }
}
