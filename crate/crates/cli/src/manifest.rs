//! Per-run manifest: what went into a run, written next to its outputs.

use std::path::Path;

use hali::config::hex;
use hali::Config;

use crate::error::{CliError, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
const HEADER: &str = "# hali run manifest v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    /// Hex sha256 of the canonical config text.
    pub config_digest: String,
    pub seed: u64,
    pub code_version: String,
    pub dataset_checksum: String,
    /// Seconds since the Unix epoch.
    pub start_time: u64,
}

impl RunManifest {
    pub fn new(config: &Config, dataset_checksum: String) -> Self {
        let start_time = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        RunManifest {
            config_digest: hex(&config.digest()),
            seed: config.train.seed,
            code_version: CODE_VERSION.to_string(),
            dataset_checksum,
            start_time,
        }
    }

    /// True when `config` hashes to the recorded digest.
    pub fn matches(&self, config: &Config) -> bool {
        self.config_digest == hex(&config.digest())
    }

    pub fn to_text(&self) -> String {
        format!(
            "{HEADER}\nconfig_digest = {}\nseed = {}\ncode_version = {}\ndataset_checksum = {}\nstart_time = {}\n",
            self.config_digest, self.seed, self.code_version, self.dataset_checksum, self.start_time
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| CliError::Format(format!("manifest: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut get = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            match line.split_once(" = ") {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(format!("expected {key}, got `{line}`"))),
            }
        };
        let config_digest = get("config_digest")?;
        let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let code_version = get("code_version")?;
        let dataset_checksum = get("dataset_checksum")?;
        let start_time = get("start_time")?.parse().map_err(|_| bad("bad start_time".into()))?;
        Ok(RunManifest { config_digest, seed, code_version, dataset_checksum, start_time })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }
}
