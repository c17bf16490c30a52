//! Run manifests: what was executed, over which inputs, producing what.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mmloc_core::Result;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Stable fingerprint of the command and its inputs.
    pub run_id: String,
    pub command: String,
    pub scene_hash: Option<String>,
    pub feature_mode: Option<String>,
    pub hyperparameters: Option<serde_json::Value>,
    pub seed: Option<u64>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub created_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Short run id derived from the command fingerprint.
pub fn run_id(fingerprint: &str) -> String {
    sha256_hex(fingerprint.as_bytes())[..16].to_string()
}

/// RFC 3339 timestamp; honors `SOURCE_DATE_EPOCH` so reruns can be made
/// byte-identical.
pub fn created_at() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn write_manifest(dir: &std::path::Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}
