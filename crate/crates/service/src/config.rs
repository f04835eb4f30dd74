//! Settings file named by `SNAPFORGE_CONFIG`. Command-line flags take
//! precedence over anything set here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const CONFIG_ENV: &str = "SNAPFORGE_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: Option<String>,
    pub port: Option<u16>,
    pub model: Option<PathBuf>,
    /// Embedder name, `dcgan` or `pixels`.
    pub embedder: Option<String>,
    /// Region detector name, `whole-image` or `replay`.
    pub detector: Option<String>,
    /// Detections file for the `replay` detector.
    pub detections: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub collection: Option<PathBuf>,
    /// Fixture corpus served by the offline transport.
    pub corpus: Option<PathBuf>,
    /// Fetch over the network instead of from `corpus`.
    pub live: Option<bool>,
    pub workers: Option<usize>,
    /// Seconds before an unacknowledged tuple tree fails.
    pub tuple_timeout: Option<u64>,
    pub seed: Option<u64>,
    pub log_dir: Option<PathBuf>,
    /// Delay between image downloads from one host.
    pub image_delay_ms: Option<u64>,
}

impl Config {
    /// Reads JSON when the extension is `.json`, TOML otherwise.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Config, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| ServiceError::Config(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    /// The file named by `SNAPFORGE_CONFIG`, or defaults when it is unset.
    pub fn from_env() -> Result<Config, ServiceError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::from_path(p),
            _ => Ok(Config::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "port = 9000\nworkers = 3\nindex_dir = \"/var/sf\"\nlive = false\n").unwrap();
        std::fs::write(&j, r#"{"port": 9000, "workers": 3, "index_dir": "/var/sf", "live": false}"#).unwrap();
        let a = Config::from_path(&t).unwrap();
        assert_eq!(a, Config::from_path(&j).unwrap());
        assert_eq!(a.port, Some(9000));
        assert_eq!(a.model, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "prot = 9000\n").unwrap();
        assert!(matches!(Config::from_path(&t), Err(ServiceError::Config(_))));
    }
}
