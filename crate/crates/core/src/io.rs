//! File helpers shared by the dataset, result and report writers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "sensorcal";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where an output document came from: enough to rerun it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Input name → SHA-256 of its bytes.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub options: serde_json::Value,
}

impl Provenance {
    pub fn new<T: Serialize>(options: &T, seed: Option<u64>) -> Self {
        Provenance {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            inputs: BTreeMap::new(),
            seed,
            options: serde_json::to_value(options).expect("options serialize"),
        }
    }

    pub fn with_input(mut self, name: &str, bytes: &[u8]) -> Self {
        self.inputs.insert(name.into(), sha256_hex(bytes));
        self
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a half-written document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
