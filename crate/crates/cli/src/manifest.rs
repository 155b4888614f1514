//! Run provenance. The serialized manifest carries only semantic inputs
//! (resolved config hash, seed, scheme, ladder shape) so that two runs with
//! the same hash produce byte-identical outputs; paths and the wall clock go
//! to the stderr log instead.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use evolab_core::{ModelConfig, Scheme};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Bumped on any change to the summary layout; compare refuses mixed versions.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub ladder: Option<usize>,
    #[serde(skip)]
    pub config_path: String,
    #[serde(skip)]
    pub out_dir: String,
    #[serde(skip)]
    pub timestamp: u64,
}

/// Everything the hash covers: the resolved config (after CLI overrides) and
/// the ladder shape. Output locations and verdict gating are excluded; they
/// cannot change a single computed number.
#[derive(Serialize)]
struct HashInput<'a> {
    config: &'a ModelConfig,
    ladder: Option<usize>,
}

pub fn config_hash(config: &ModelConfig, ladder: Option<usize>) -> String {
    let canonical = serde_json::to_string(&HashInput { config, ladder })
        .expect("config serialization is infallible");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(
        config_path: &Path,
        config: &ModelConfig,
        ladder: Option<usize>,
        out_dir: &Path,
    ) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            config_hash: config_hash(config, ladder),
            seed: config.seed,
            scheme: config.scheme,
            ladder,
            config_path: config_path.display().to_string(),
            out_dir: out_dir.display().to_string(),
            timestamp,
        }
    }

    /// One stderr line tying the hash to the volatile context left out of the
    /// serialized outputs.
    pub fn log_line(&self) -> String {
        format!(
            "run {} config={} out={} unix={}",
            self.config_hash, self.config_path, self.out_dir, self.timestamp
        )
    }
}
