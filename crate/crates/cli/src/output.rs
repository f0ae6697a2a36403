//! CSV/JSON emission. Every file carries the version, config hash, seed and N.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
}

impl Meta {
    pub fn new(config: &RunConfig) -> Self {
        let digest = Sha256::digest(config.canonical().as_bytes());
        let config_hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self { version: env!("CARGO_PKG_VERSION").to_string(), config_hash, seed: config.seed, n: config.n }
    }

    pub fn header(&self) -> String {
        format!("# pagkit {} config_hash={} seed={} n={}\n", self.version, self.config_hash, self.seed, self.n)
    }
}

/// 17 significant digits, round-trip safe.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Serializes `value` with the metadata block first.
pub fn json_with_meta<T: Serialize>(meta: &Meta, value: &T) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        _meta: &'a Meta,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Wrapped { _meta: meta, body: value })
        .map_err(|e| CliError::Config(format!("serializing output: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}
