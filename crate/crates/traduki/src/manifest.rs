//! Run manifests: content-addressed provenance records for pipeline stages.
//!
//! Every subcommand that writes artifacts also writes a manifest naming the
//! files it read and produced, each with its SHA-256. Because artifacts are
//! addressed by content, the manifests of a run directory form a directed
//! acyclic graph: an artifact consumed by one stage and produced by another
//! links the two. [`provenance_of`] walks that graph backwards from any
//! artifact to the stages that ultimately produced it, which is how a final
//! evaluation report traces back to the world seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::file_sha256;

/// Version string recorded in every manifest.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const MANIFEST_SUFFIX: &str = ".manifest.json";

/// A file a stage read or wrote, addressed by content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactRef {
    /// Record a file as it exists right now.
    pub fn capture(path: impl AsRef<Path>) -> Result<ArtifactRef> {
        let path = path.as_ref();
        Ok(ArtifactRef {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }
}

/// What one pipeline stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    /// Snapshot of the configuration the stage ran with.
    pub config: serde_json::Value,
    /// Every seed the stage drew from, by name. No stage uses ambient
    /// entropy, so these determine the run.
    pub seeds: BTreeMap<String, u64>,
    pub duration_secs: f64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(stage: &str) -> RunManifest {
        RunManifest {
            stage: stage.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            duration_secs: 0.0,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    /// Hash a file the stage read.
    pub fn record_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(ArtifactRef::capture(path)?);
        Ok(())
    }

    /// Hash a file the stage wrote. Call after the file is final.
    pub fn record_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(ArtifactRef::capture(path)?);
        Ok(())
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = serde_json::to_value(config)
            .map_err(|e| Error::Format(format!("config snapshot: {e}")))?;
        Ok(())
    }

    /// The conventional manifest path for a stage in a run directory.
    pub fn path_for(dir: &Path, stage: &str) -> PathBuf {
        dir.join(format!("{stage}{MANIFEST_SUFFIX}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Check that every referenced artifact still exists with the recorded
    /// hash. Relative artifact paths resolve against `base`.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for artifact in self.inputs.iter().chain(&self.outputs) {
            let path = if artifact.path.is_absolute() {
                artifact.path.clone()
            } else {
                base.join(&artifact.path)
            };
            let actual = file_sha256(&path)?;
            if actual != artifact.sha256 {
                return Err(Error::Data(format!(
                    "{}: hash mismatch (manifest {}, file {actual})",
                    path.display(),
                    artifact.sha256
                )));
            }
        }
        Ok(())
    }
}

/// Load every manifest in a run directory, sorted by stage name.
pub fn load_all(dir: &Path) -> Result<Vec<RunManifest>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifests = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().ends_with(MANIFEST_SUFFIX) {
            manifests.push(RunManifest::load(&entry.path())?);
        }
    }
    manifests.sort_by(|a, b| a.stage.cmp(&b.stage));
    Ok(manifests)
}

/// Trace an artifact hash back through the manifests that produced it.
///
/// Returns the producing stages in dependency order: deepest ancestors
/// first, the direct producer last. Each stage appears once even when
/// reached along several paths. Fails when no manifest in the set produced
/// the hash; inputs that no stage produced (hand-written configs, the
/// world seed itself) terminate the walk as roots.
pub fn provenance_of<'a>(
    manifests: &'a [RunManifest],
    sha256: &str,
) -> Result<Vec<&'a RunManifest>> {
    let producer_of = |hash: &str| {
        manifests
            .iter()
            .position(|m| m.outputs.iter().any(|a| a.sha256 == hash))
    };
    let start = producer_of(sha256).ok_or_else(|| {
        Error::Data(format!("no manifest produced an artifact with hash {sha256}"))
    })?;
    let mut ordered = Vec::new();
    let mut visited = vec![false; manifests.len()];
    // Depth-first postorder: ancestors land before their dependents.
    let mut stack = vec![(start, 0usize)];
    while let Some(&(index, cursor)) = stack.last() {
        if cursor == 0 {
            visited[index] = true;
        }
        let manifest = &manifests[index];
        if cursor < manifest.inputs.len() {
            stack.last_mut().expect("stack is non-empty").1 += 1;
            if let Some(parent) = producer_of(&manifest.inputs[cursor].sha256) {
                if !visited[parent] {
                    stack.push((parent, 0));
                }
            }
        } else {
            ordered.push(manifest);
            stack.pop();
        }
    }
    Ok(ordered)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    fn stage_manifest(dir: &Path, stage: &str, inputs: &[&Path], outputs: &[&Path]) -> RunManifest {
        let mut manifest = RunManifest::new(stage);
        for input in inputs {
            manifest.record_input(input).unwrap();
        }
        for output in outputs {
            manifest.record_output(output).unwrap();
        }
        manifest
            .save(&RunManifest::path_for(dir, stage))
            .unwrap();
        manifest
    }

    #[test]
    fn saved_manifests_round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let world = write(dir.path(), "world.json", "{\"seed\": 7}");
        let mut manifest = RunManifest::new("gen-world");
        manifest.record_output(&world).unwrap();
        manifest.record_seed("world", 7);
        manifest.set_config(&serde_json::json!({"k": 40})).unwrap();
        manifest.duration_secs = 0.25;
        let path = RunManifest::path_for(dir.path(), "gen-world");
        manifest.save(&path).unwrap();

        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(loaded.tool_version, TOOL_VERSION);
        loaded.verify(dir.path()).unwrap();
    }

    #[test]
    fn verification_catches_tampering_and_loss() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = write(dir.path(), "data.jsonl", "{}\n");
        let mut manifest = RunManifest::new("stage");
        manifest.record_output(&artifact).unwrap();
        manifest.verify(dir.path()).unwrap();

        std::fs::write(&artifact, "{\"edited\": true}\n").unwrap();
        assert!(matches!(manifest.verify(dir.path()), Err(Error::Data(_))));

        std::fs::remove_file(&artifact).unwrap();
        assert!(manifest.verify(dir.path()).is_err());
    }

    #[test]
    fn provenance_walks_back_to_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let world = write(dir.path(), "world.json", "world");
        let corpus = write(dir.path(), "corpus.jsonl", "corpus");
        let checkpoint = write(dir.path(), "model.ckpt", "weights");
        stage_manifest(dir.path(), "gen-world", &[], &[&world]);
        stage_manifest(dir.path(), "gen-corpus", &[&world], &[&corpus]);
        stage_manifest(dir.path(), "sft", &[&world, &corpus], &[&checkpoint]);

        let manifests = load_all(dir.path()).unwrap();
        assert_eq!(manifests.len(), 3);
        let target = file_sha256(&checkpoint).unwrap();
        let chain = provenance_of(&manifests, &target).unwrap();
        let stages: Vec<&str> = chain.iter().map(|m| m.stage.as_str()).collect();
        assert_eq!(stages, ["gen-world", "gen-corpus", "sft"]);
    }

    #[test]
    fn diamond_ancestry_lists_each_stage_once() {
        let dir = tempfile::tempdir().unwrap();
        let world = write(dir.path(), "world.json", "world");
        let left = write(dir.path(), "left.jsonl", "left");
        let right = write(dir.path(), "right.jsonl", "right");
        let merged = write(dir.path(), "merged.jsonl", "merged");
        stage_manifest(dir.path(), "root", &[], &[&world]);
        stage_manifest(dir.path(), "a-left", &[&world], &[&left]);
        stage_manifest(dir.path(), "b-right", &[&world], &[&right]);
        stage_manifest(dir.path(), "merge", &[&left, &right], &[&merged]);

        let manifests = load_all(dir.path()).unwrap();
        let target = file_sha256(&merged).unwrap();
        let chain = provenance_of(&manifests, &target).unwrap();
        let stages: Vec<&str> = chain.iter().map(|m| m.stage.as_str()).collect();
        assert_eq!(stages, ["root", "a-left", "b-right", "merge"]);
    }

    #[test]
    fn unknown_hashes_have_no_provenance() {
        let manifests = vec![RunManifest::new("lonely")];
        assert!(provenance_of(&manifests, "feedbeef").is_err());
    }
}
