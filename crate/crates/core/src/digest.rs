//! Content digests for configs and stage artifacts.
//!
//! Every artifact on disk embeds the digest of the configuration that made
//! it, so downstream stages can refuse mismatched inputs and reruns can be
//! detected cheaply.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a value's canonical JSON serialization.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialization cannot fail");
    hex(&Sha256::digest(&json))
}

/// Hex SHA-256 of raw bytes.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Cfg {
        a: u32,
        b: String,
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let c1 = Cfg { a: 1, b: "x".into() };
        let c2 = Cfg { a: 1, b: "x".into() };
        let c3 = Cfg { a: 2, b: "x".into() };
        assert_eq!(config_digest(&c1), config_digest(&c2));
        assert_ne!(config_digest(&c1), config_digest(&c3));
        assert_eq!(config_digest(&c1).len(), 64);
    }
}
