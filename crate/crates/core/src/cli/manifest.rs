use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const TOOL_NAME: &str = "nndwl";

/// Path and SHA-256 of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(InputDigest {
            path: path.to_owned(),
            sha256: file_sha256(path)?,
        })
    }
}

/// Everything needed to re-run a command: its name, its fully resolved
/// arguments, the digests of the files it read, the seed and the tool
/// version. Contains no timestamps, so identical runs write identical
/// manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Keyed by input role (`train_src`, `model`, ...).
    pub inputs: BTreeMap<String, InputDigest>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(RunManifest {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config).map_err(|e| CliError::Output(e.to_string()))?,
            inputs: BTreeMap::new(),
            seed,
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(role.to_owned(), InputDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        log::info!("wrote manifest {}", path.display());
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: invalid manifest: {e}", path.display())))
    }

    /// Errors if any recorded input no longer has its recorded digest.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (role, input) in &self.inputs {
            let now = file_sha256(&input.path)?;
            if now != input.sha256 {
                return Err(CliError::Input(format!(
                    "input {role} ({}) changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// `<artifact>.manifest.json`
pub fn default_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
