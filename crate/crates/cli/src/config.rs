//! Flat `key=value` run configuration. Command-line flags override config
//! values, which override the built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::Result;

/// A bad flag or configuration value. Reported with the usage exit code,
/// unlike data errors discovered while reading artifacts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Keys a config file may set; anything else is rejected as a typo.
const KNOWN_KEYS: &[&str] = &[
    "variant",
    "seed",
    "np",
    "nit",
    "nb",
    "shrink",
    "noise-sigma-disp",
    "noise-view-sigma",
    "noise-type-eps",
    "noise-surface-points",
    "noise-box-pad",
];

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Loads the file when a path is given; otherwise an empty config.
    /// Blank lines and `#` comments are skipped, later keys win.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                ))
                .into());
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!("config line {}: unknown key {key:?}", lineno + 1)).into());
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(RunConfig { values })
    }

    /// Flag value if given, else the config value, else the default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| UsageError(format!("config key {key}: {e}")).into()),
        }
    }
}
