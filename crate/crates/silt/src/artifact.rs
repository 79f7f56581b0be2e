//! Provenance headers shared by every output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "silt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// First 16 hex digits of the SHA-256 of the command's canonical config.
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: config_hash(config),
            seed,
        }
    }

    /// The `# key=value ...` comment line that opens CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!(
            "# tool={} version={} command={} config_hash={} seed={}",
            self.tool, self.version, self.command, self.config_hash, self.seed
        )
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        a: u32,
        b: &'static str,
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let h = config_hash(&Cfg { a: 1, b: "x" });
        assert_eq!(h.len(), 16);
        assert_eq!(h, config_hash(&Cfg { a: 1, b: "x" }));
        assert_ne!(h, config_hash(&Cfg { a: 2, b: "x" }));
    }

    #[test]
    fn csv_comment_carries_provenance() {
        let h = Header::new("train", &Cfg { a: 1, b: "x" }, 7);
        let line = h.csv_comment();
        assert!(line.starts_with("# tool=silt version="));
        assert!(line.ends_with("seed=7"));
        assert!(line.contains(&h.config_hash));
    }
}
