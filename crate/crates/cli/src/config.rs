//! Service configuration: a `key = value` file with environment overrides.
//!
//! ```text
//! # formulink.conf
//! listen      = 127.0.0.1:8080
//! data_dir    = ./formulink-data
//! profile     = scripted
//! backend     = scripted
//! corpus_seed = 7
//! k           = 1
//! chunk_size  = 2000
//! ```
//!
//! `FORMULINK_DATA_DIR`, `FORMULINK_API_BASE` and `FORMULINK_API_KEY`
//! override `data_dir`, `api_base` and `api_key`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use formulink_core::gateway::{ModelProfile, API_BASE_ENV, API_KEY_ENV, SCRIPTED_BACKEND};
use formulink_core::kb::MIN_CHUNK_SIZE;
use formulink_core::sim::SHIPPED_SEED;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "FORMULINK_DATA_DIR";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Scripted,
    RemoteHttp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// `scripted`, or a remote model name.
    pub profile: String,
    pub backend: BackendChoice,
    /// Directory with a corpus manifest. Without one the synthetic corpus
    /// generated from `corpus_seed` is served.
    pub corpus_dir: Option<PathBuf>,
    pub corpus_seed: u64,
    pub k: usize,
    pub chunk_size: usize,
    pub api_base: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("formulink-data"),
            profile: "scripted".into(),
            backend: BackendChoice::Scripted,
            corpus_dir: None,
            corpus_seed: SHIPPED_SEED,
            k: 1,
            chunk_size: 2000,
            api_base: None,
            api_key: None,
        }
    }
}

const KEYS: [&str; 10] = [
    "listen",
    "data_dir",
    "profile",
    "backend",
    "corpus_dir",
    "corpus_seed",
    "k",
    "chunk_size",
    "api_base",
    "api_key",
];

fn parse_value<T: FromStr>(key: &'static str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key,
        message: format!("`{v}`: {e}"),
    })
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped;
/// values may be wrapped in double quotes.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.into(),
            });
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.into(),
            });
        }
    }
    Ok(out)
}

impl ServiceConfig {
    /// Builds a config from file text and an environment lookup, then
    /// validates it.
    pub fn from_sources(
        text: &str,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let mut c = ServiceConfig::default();
        for (key, v) in &pairs {
            match key.as_str() {
                "listen" => c.listen = parse_value("listen", v)?,
                "data_dir" => c.data_dir = PathBuf::from(v),
                "profile" => c.profile = v.clone(),
                "backend" => {
                    c.backend = match v.as_str() {
                        "scripted" => BackendChoice::Scripted,
                        "remote_http" => BackendChoice::RemoteHttp,
                        other => {
                            return Err(ConfigError::Invalid {
                                key: "backend",
                                message: format!("`{other}` is not scripted or remote_http"),
                            })
                        }
                    }
                }
                "corpus_dir" => c.corpus_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "corpus_seed" => c.corpus_seed = parse_value("corpus_seed", v)?,
                "k" => c.k = parse_value("k", v)?,
                "chunk_size" => c.chunk_size = parse_value("chunk_size", v)?,
                "api_base" => c.api_base = (!v.is_empty()).then(|| v.clone()),
                "api_key" => c.api_key = (!v.is_empty()).then(|| v.clone()),
                _ => unreachable!("keys are checked while parsing"),
            }
        }
        if let Some(d) = env(DATA_DIR_ENV) {
            c.data_dir = PathBuf::from(d);
        }
        if let Some(b) = env(API_BASE_ENV) {
            c.api_base = Some(b);
        }
        if let Some(k) = env(API_KEY_ENV) {
            c.api_key = Some(k);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_sources(&text, |k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid {
                key: "k",
                message: "must be at least 1".into(),
            });
        }
        if self.chunk_size < MIN_CHUNK_SIZE {
            return Err(ConfigError::Invalid {
                key: "chunk_size",
                message: format!("must be at least {MIN_CHUNK_SIZE}"),
            });
        }
        if self.data_dir.as_os_str().is_empty() {
            return Err(ConfigError::Invalid {
                key: "data_dir",
                message: "must not be empty".into(),
            });
        }
        if self.profile.is_empty() {
            return Err(ConfigError::Invalid {
                key: "profile",
                message: "must not be empty".into(),
            });
        }
        match self.backend {
            BackendChoice::Scripted => {
                if self.profile != "scripted" {
                    return Err(ConfigError::Invalid {
                        key: "profile",
                        message: "the scripted backend only serves the `scripted` profile".into(),
                    });
                }
                if self.corpus_dir.is_some() {
                    return Err(ConfigError::Invalid {
                        key: "corpus_dir",
                        message: "the scripted backend answers only for the synthetic corpus"
                            .into(),
                    });
                }
            }
            BackendChoice::RemoteHttp => {
                if self.api_base.is_none() {
                    return Err(ConfigError::Invalid {
                        key: "api_base",
                        message: format!("required by remote_http (or set {API_BASE_ENV})"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Model profile for a profile name.
    pub fn profile_for(name: &str) -> ModelProfile {
        if name == "scripted" {
            ModelProfile::scripted()
        } else {
            ModelProfile::remote(name)
        }
    }

    pub fn default_profile(&self) -> ModelProfile {
        Self::profile_for(&self.profile)
    }

    /// Whether sessions may use `profile`.
    pub fn serves_profile(&self, profile: &ModelProfile) -> bool {
        if profile.backend == SCRIPTED_BACKEND {
            self.corpus_dir.is_none()
        } else {
            self.api_base.is_some()
        }
    }
}
