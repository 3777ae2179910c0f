//! Record of the stages run in an output directory.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, sha256_file, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Stage name plus its variant, e.g. `dpo:proposed-rich`.
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<ArtifactEntry>,
    pub outputs: Vec<ArtifactEntry>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hash of the config used by the most recent stage.
    pub config_hash: String,
    pub stages: Vec<StageEntry>,
}

fn entries(dir: &Path, files: &[&str]) -> Result<Vec<ArtifactEntry>> {
    files
        .iter()
        .map(|f| {
            Ok(ArtifactEntry {
                path: f.to_string(),
                sha256: sha256_file(&dir.join(f))?,
            })
        })
        .collect()
}

impl RunManifest {
    /// The manifest in `dir`, or an empty one.
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Adds a stage, replacing an earlier entry with the same name.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        config_hash: &str,
        inputs: &[&str],
        outputs: &[&str],
        elapsed: Duration,
    ) -> Result<()> {
        let entry = StageEntry {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            inputs: entries(dir, inputs)?,
            outputs: entries(dir, outputs)?,
            wall_clock_secs: elapsed.as_secs_f64(),
        };
        self.config_hash = config_hash.to_string();
        match self.stages.iter_mut().find(|s| s.stage == stage) {
            Some(s) => *s = entry,
            None => self.stages.push(entry),
        }
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Checks that every output still exists with its recorded checksum.
    /// Inputs may legitimately be rewritten by a later stage rerun, so only
    /// outputs are checked.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for s in &self.stages {
            for a in &s.outputs {
                let actual = sha256_file(&dir.join(&a.path))?;
                if actual != a.sha256 {
                    return Err(Error::Input(format!(
                        "artifact {} of stage {} changed: recorded {}, found {}",
                        dir.join(&a.path).display(),
                        s.stage,
                        a.sha256,
                        actual
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_text;

    #[test]
    fn record_replace_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write_text(&d.join("a.txt"), "one").unwrap();
        let mut m = RunManifest::default();
        m.record(d, "synth", "h", &[], &["a.txt"], Duration::from_millis(5)).unwrap();
        m.record(d, "synth", "h", &[], &["a.txt"], Duration::from_millis(7)).unwrap();
        assert_eq!(m.stages.len(), 1);
        m.verify(d).unwrap();
        m.save(d).unwrap();
        assert_eq!(RunManifest::load_or_default(d).unwrap(), m);
        write_text(&d.join("a.txt"), "two").unwrap();
        assert!(m.verify(d).is_err());
        std::fs::remove_file(d.join("a.txt")).unwrap();
        assert!(matches!(m.verify(d), Err(Error::MissingArtifact(_))));
    }
}
