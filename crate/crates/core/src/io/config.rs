//! Configuration files and provenance hashes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parse a JSON or TOML configuration, chosen by file extension (anything
/// other than `.toml` is read as JSON).
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |reason: String| Error::Parse { file: path.display().to_string(), reason };
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| parse(e.to_string())),
        _ => serde_json::from_str(&text).map_err(|e| parse(e.to_string())),
    }
}

pub fn save_config<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::to_string_pretty(value)
            .map_err(|e| Error::InvalidInput(format!("cannot encode configuration as TOML: {e}")))?,
        _ => serde_json::to_string_pretty(value)? + "\n",
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// SHA-256 of the compact JSON encoding, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimConfig;

    #[test]
    fn json_and_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = OptimConfig::default();
        cfg.window_k = 25;
        cfg.loss.weights.m2p = 42.0;
        for name in ["c.json", "c.toml"] {
            let p = dir.path().join(name);
            save_config(&p, &cfg).unwrap();
            let back: OptimConfig = load_config(&p).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_files_fill_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "window_k = 12\n[loss.weights]\nsc = 3.0\n").unwrap();
        let cfg: OptimConfig = load_config(&p).unwrap();
        assert_eq!(cfg.window_k, 12);
        assert_eq!(cfg.loss.weights.sc, 3.0);
        assert_eq!(cfg.loss.weights.m2p, 100.0);
        std::fs::write(&p, "window_size = 12\n").unwrap();
        assert!(load_config::<OptimConfig>(&p).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = OptimConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.max_iters += 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
