//! Run manifests: everything needed to replay a run and to check that the
//! replay reproduced it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skewlab::rng::SeedLog;

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    /// Command line words after the program name, e.g. `["estimate", "sigma"]`.
    pub command: Vec<String>,
    pub config_hash: String,
    pub root_seed: u64,
    /// The full configuration, serialized.
    pub config: String,
    #[serde(default)]
    pub seeds: Vec<SeedRecord>,
    #[serde(default)]
    pub timings: Vec<Timing>,
    #[serde(default)]
    pub outputs: Vec<OutputFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub tag: String,
    pub index: u64,
    /// Hex, since TOML integers are signed.
    pub seed: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn record_seeds(&mut self, log: &SeedLog) {
        self.seeds.extend(log.entries.iter().map(|e| SeedRecord {
            tag: e.tag.clone(),
            index: e.index,
            seed: format!("{:016x}", e.seed),
        }));
    }

    /// Adds `dir/name` to the output inventory.
    pub fn record_output(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        let bytes = fs::metadata(&path)?.len();
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_file(&path)?,
            bytes,
        });
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Writes `dir/manifest.toml` through a temporary file and a rename, so
    /// readers never see a partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let target = dir.join(MANIFEST_NAME);
        let tmp = dir.join(format!(".{MANIFEST_NAME}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_toml()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        Ok(target)
    }

    /// Output files whose hash in `dir` differs from the inventory (or that
    /// are missing).
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| sha256_file(&dir.join(&o.path)).map(|h| h != o.sha256).unwrap_or(true))
            .map(|o| o.path.clone())
            .collect()
    }
}
