//! Content hashes and provenance records for reproducible artifacts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON serialization of a configuration. Struct fields
/// serialize in declaration order and maps are `BTreeMap`s, so the encoding
/// is canonical for every config type in this crate.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("configs serialize"))
}

/// Written next to every set of artifacts. Contains no timestamps, so a rerun
/// with the same configuration produces an identical record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// Artifact file name to sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, config: &T) -> Self {
        Self {
            tool: "seqtte".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: config_hash(config),
            config: serde_json::to_value(config).expect("configs serialize"),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&BTreeMap::from([("k", 1)]));
        assert_eq!(a, config_hash(&BTreeMap::from([("k", 1)])));
        assert_ne!(a, config_hash(&BTreeMap::from([("k", 2)])));
    }
}
