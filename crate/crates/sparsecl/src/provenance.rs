use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "sparsecl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Hash of the manifest bytes; absent for standalone commands.
    pub manifest_sha256: Option<String>,
    /// Hashes of the input files of a standalone command.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs_sha256: Vec<String>,
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
}

impl Provenance {
    pub fn for_manifest(manifest_sha256: &str) -> Self {
        Self { tool: TOOL.into(), version: VERSION.into(), manifest_sha256: Some(manifest_sha256.into()), inputs_sha256: Vec::new(), seed: None, ratio: None }
    }

    pub fn for_run(manifest_sha256: &str, seed: u64, ratio: Option<f64>) -> Self {
        Self { seed: Some(seed), ratio, ..Self::for_manifest(manifest_sha256) }
    }

    pub fn standalone(inputs: &[&[u8]]) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            manifest_sha256: None,
            inputs_sha256: inputs.iter().map(|b| sha256_hex(b)).collect(),
            seed: None,
            ratio: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
