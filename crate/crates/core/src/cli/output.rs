use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::Result;

pub const TOOL_NAME: &str = "losslens";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Settings that may change timings but never results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub workers: usize,
    pub seconds: f64,
}

/// Wrapper written around every JSON result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: ToolInfo,
    pub config: RunConfig,
    /// SHA-256 of every file read, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub execution: Execution,
    pub result: T,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Default)]
pub(crate) struct Hashes(pub BTreeMap<String, String>);

impl Hashes {
    pub fn add(&mut self, path: &Path) -> Result<()> {
        self.0.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Adds `path` only if it exists.
    pub fn add_if_exists(&mut self, path: &Path) -> Result<()> {
        if path.exists() {
            self.add(path)?;
        }
        Ok(())
    }
}

/// Writes pretty JSON and reads it back as `T` to validate the artifact.
pub(crate) fn write_json<T: Serialize + DeserializeOwned>(path: &Path, value: &T) -> Result<T> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
