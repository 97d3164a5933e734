//! Provenance record written next to, and embedded in, every report.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// RFC 3339, UTC. Taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
    /// Fully resolved: file values, defaults and command-line overrides.
    pub config: FileConfig,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: &FileConfig, inputs: Vec<InputDigest>) -> Result<Self, CliError> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            timestamp: timestamp()?,
            config: config.clone(),
            inputs,
        })
    }

    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self, CliError> {
        serde_json::from_slice(bytes)
            .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))
    }
}

fn timestamp() -> Result<String, CliError> {
    let now = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("SOURCE_DATE_EPOCH `{v}` is not an integer")))?;
            OffsetDateTime::from_unix_timestamp(secs)
                .map_err(|e| CliError::Usage(format!("SOURCE_DATE_EPOCH: {e}")))?
        }
        Err(_) => OffsetDateTime::now_utc(),
    };
    Ok(now.format(&Rfc3339).expect("UTC timestamps always format"))
}
