//! Run manifests: everything needed to reproduce the numbers in an output directory.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, Parameter};

pub const SEED_RULE: &str = "sample j: ChaCha8 keyed by splitmix64(seed + golden + j * 0xD1B54A32D192ED69), stream 0, \
    block = zigzag-packed lattice coordinate of the coupling; nested inner draws: stream 1 + tag(outer, replica, term, inner)";

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub os: &'static str,
    pub arch: &'static str,
    pub family: &'static str,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            family: std::env::consts::FAMILY,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// SHA-256 of the full resolved configuration.
    pub config_hash: String,
    /// Key of the result shards; excludes sample counts and report settings.
    pub shard_hash: String,
    pub master_seed: u64,
    pub seed_rule: &'static str,
    pub parameters: BTreeMap<String, Parameter>,
    pub environment: Environment,
    /// Subcommand-specific records such as decomposition radii.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

pub fn config_hash(loaded: &LoadedConfig) -> String {
    let text = serde_json::to_string(&loaded.config).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, loaded: &LoadedConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_hash: config_hash(loaded),
            shard_hash: loaded.config.physics_hash(),
            master_seed: loaded.config.seed,
            seed_rule: SEED_RULE,
            parameters: loaded.parameters.clone(),
            environment: Environment::current(),
            extra: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Provenance;

    #[test]
    fn manifest_is_deterministic_and_tags_provenance() {
        let mut loaded = LoadedConfig::defaults();
        loaded.override_seed(7);
        let a = serde_json::to_string(&RunManifest::new("clt", &loaded)).unwrap();
        let b = serde_json::to_string(&RunManifest::new("clt", &loaded)).unwrap();
        assert_eq!(a, b);
        let m = RunManifest::new("clt", &loaded);
        assert_eq!(m.parameters["seed"].provenance, Provenance::User);
        assert_eq!(m.parameters["bootstrap"].provenance, Provenance::Default);
        assert_eq!(m.config_hash.len(), 64);
    }
}
