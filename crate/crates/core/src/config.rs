//! `catchrelease.conf`: one TOML file plus `CATCHRELEASE_` environment
//! overrides.
//!
//! Lookup order: an explicit path, then `$CATCHRELEASE_CONFIG`, then
//! `./catchrelease.conf`; with none of them present the defaults apply.
//! Any key can be overridden from the environment by upper-casing its dotted
//! path, joining sections with a double underscore and adding the prefix:
//! `qc.min_sharpness` is `CATCHRELEASE_QC__MIN_SHARPNESS`. Override values are
//! read as TOML scalars or arrays when they parse as such, else as strings.
//!
//! Relative paths in the file resolve against the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::align::AlignOptions;
use crate::dataset::SplitPolicy;
use crate::media::SeasonCalendar;
use crate::qc::QcThresholds;

pub const ENV_PREFIX: &str = "CATCHRELEASE_";
pub const ENV_CONFIG: &str = "CATCHRELEASE_CONFIG";
pub const DEFAULT_FILE: &str = "catchrelease.conf";
/// `decoder_cmd` value selecting the in-process decoder for synthetic clips.
pub const SYNTHETIC_DECODER: &str = "synthetic";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{key} points at {path}, which does not exist")]
    MissingPath { key: String, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Harvester,
    Expert,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriberConfig {
    /// Script file or directory of scripts for the mock transcriber.
    pub mock: Option<PathBuf>,
    /// Base URL of a remote speech-to-text service.
    pub remote: Option<String>,
    /// Environment variable holding the remote bearer token.
    pub credential_env: Option<String>,
    pub timeout_s: f64,
    pub language_hint: String,
    pub min_ratio: f64,
}

impl Default for TranscriberConfig {
    fn default() -> Self {
        Self {
            mock: None,
            remote: None,
            credential_env: None,
            timeout_s: 120.0,
            language_hint: "id".into(),
            min_ratio: crate::taxon::DEFAULT_MIN_RATIO,
        }
    }
}

impl TranscriberConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Where the CLI finds the service.
    pub endpoint: String,
    pub token: Option<String>,
    pub token_env: Option<String>,
    /// Address the server binds.
    pub bind: String,
    /// Server side: bearer token -> role.
    pub tokens: BTreeMap<String, Role>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            token: None,
            token_env: None,
            bind: "127.0.0.1:8080".into(),
            tokens: BTreeMap::new(),
        }
    }
}

impl ServiceConfig {
    /// The client token: literal first, then the named environment variable.
    pub fn client_token(&self) -> Option<String> {
        self.token
            .clone()
            .or_else(|| self.token_env.as_ref().and_then(|v| std::env::var(v).ok()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_root: PathBuf,
    pub decoder_cmd: String,
    pub audio_cmd: Option<String>,
    /// Taxon registry file; the built-in bali-26 seed when absent.
    pub registry: Option<PathBuf>,
    pub season_calendar: Option<SeasonCalendar>,
    pub transcriber: TranscriberConfig,
    pub align: AlignOptions,
    pub qc: QcThresholds,
    pub split: SplitPolicy,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_root: PathBuf::from("catchrelease-store"),
            decoder_cmd: SYNTHETIC_DECODER.into(),
            audio_cmd: None,
            registry: None,
            season_calendar: None,
            transcriber: TranscriberConfig::default(),
            align: AlignOptions::default(),
            qc: QcThresholds::default(),
            split: SplitPolicy::default(),
            service: ServiceConfig::default(),
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `CATCHRELEASE_A__B=v` pairs onto the table as `a.b = v`.
pub fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) {
    for (name, value) in vars {
        let Some(path) = name.strip_prefix(ENV_PREFIX) else { continue };
        if name == ENV_CONFIG || path.is_empty() {
            continue;
        }
        let keys: Vec<String> = path.split("__").map(|k| k.to_ascii_lowercase()).collect();
        let mut cur = &mut *table;
        for k in &keys[..keys.len() - 1] {
            let slot = cur
                .entry(k.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !slot.is_table() {
                *slot = toml::Value::Table(toml::Table::new());
            }
            cur = slot.as_table_mut().expect("just made a table");
        }
        cur.insert(keys[keys.len() - 1].clone(), parse_env_value(&value));
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Parses file text plus overrides; paths resolve against `base`.
    pub fn from_parts(
        text: &str,
        base: &Path,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_env(&mut table, vars);
        let mut cfg: Config = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        resolve(base, &mut cfg.store_root);
        if let Some(r) = cfg.registry.as_mut() {
            resolve(base, r);
        }
        if let Some(m) = cfg.transcriber.mock.as_mut() {
            resolve(base, m);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Follows the lookup order and applies the process environment.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let path = match (explicit, from_env) {
            (Some(p), _) => Some(p.to_path_buf()),
            (None, Some(p)) => Some(p),
            (None, None) => Some(PathBuf::from(DEFAULT_FILE)).filter(|p| p.is_file()),
        };
        let (text, base) = match &path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.clone(),
                    source,
                })?;
                let base = p
                    .parent()
                    .map(Path::to_path_buf)
                    .filter(|b| !b.as_os_str().is_empty())
                    .unwrap_or_else(|| PathBuf::from("."));
                (text, base)
            }
            None => (String::new(), PathBuf::from(".")),
        };
        Self::from_parts(&text, &base, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.split
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("split: {e}")))?;
        let t = &self.transcriber;
        if t.mock.is_some() && t.remote.is_some() {
            return Err(ConfigError::Invalid("transcriber: set either mock or remote, not both".into()));
        }
        if !(0.0..=1.0).contains(&t.min_ratio) {
            return Err(ConfigError::Invalid(format!("transcriber.min_ratio {} not in [0, 1]", t.min_ratio)));
        }
        if !(t.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("transcriber.timeout_s must be positive".into()));
        }
        if !(self.align.lead_pad_s >= 0.0) || !(0.0..=1.0).contains(&self.align.min_confidence) {
            return Err(ConfigError::Invalid(format!("align: {:?}", self.align)));
        }
        if self.decoder_cmd.trim().is_empty() {
            return Err(ConfigError::Invalid("decoder_cmd is empty".into()));
        }
        for (key, p) in [("registry", &self.registry), ("transcriber.mock", &t.mock)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        key: key.into(),
                        path: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}
