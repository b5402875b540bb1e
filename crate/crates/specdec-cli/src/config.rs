//! Defaults resolution: flag > config file > environment > built-in.

use std::collections::BTreeMap;
use std::path::Path;

use specdec::{Error, Result};

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "SPECDEC_SEED";

pub struct Defaults {
    values: BTreeMap<String, String>,
    seed: u64,
}

impl Defaults {
    pub fn load(config: Option<&Path>, seed_flag: Option<u64>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines().map(str::trim) {
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad config line: {line}")))?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        let seed = match seed_flag {
            Some(s) => s,
            None => match values.get("seed") {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad seed in config: {raw}")))?,
                None => match std::env::var(SEED_ENV) {
                    Ok(raw) => raw
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad {SEED_ENV}: {raw}")))?,
                    Err(_) => 0,
                },
            },
        };
        Ok(Defaults { values, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Resolve one parameter: explicit flag, then config file, then the
    /// built-in default. The config key equals the long flag name.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: std::str::FromStr,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Parse(format!("bad config value for {key}: {raw}"))),
            None => Ok(default),
        }
    }
}
