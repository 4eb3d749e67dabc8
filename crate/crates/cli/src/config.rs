//! Settings merged from defaults, `vismc.toml`, `VISMC_*` variables and
//! flags, in increasing priority. Clap resolves flags over the environment;
//! this module slots the config file in underneath.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use vismc::backend::RemoteConfig;
use vismc::ranking::IndeterminatePolicy;
use vismc::vm::VmConfig;

use crate::CliError;

pub const DEFAULT_CONFIG: &str = "vismc.toml";

/// Flat keys accepted in the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub detect_threshold: Option<f64>,
    pub near_frac: Option<f64>,
    pub min_overlap: Option<f64>,
    pub inside_frac: Option<f64>,
    pub contact_tol: Option<f64>,
    pub policy: Option<String>,
    pub light: Option<usize>,
    pub heavy: Option<usize>,
    pub max_retries: Option<u32>,
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub fallback_composite: Option<bool>,
    pub strict_counting: Option<bool>,
    pub lexicon: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub cache_mode: Option<String>,
}

impl FileConfig {
    /// Reads `explicit` if given (it must exist), else `vismc.toml` in the
    /// working directory if present.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG).exists() => PathBuf::from(DEFAULT_CONFIG),
            None => return Ok(FileConfig::default()),
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Input(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config file {}: {e}", path.display())))
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(BackendKind::Oracle),
            "remote" => Ok(BackendKind::Remote),
            other => Err(CliError::Input(format!("backend must be oracle or remote, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CacheModeArg {
    ReadWrite,
    Replay,
}

impl std::str::FromStr for CacheModeArg {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read-write" | "read_write" => Ok(CacheModeArg::ReadWrite),
            "replay" => Ok(CacheModeArg::Replay),
            other => Err(CliError::Input(format!("cache_mode must be read-write or replay, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct VmArgs {
    /// Minimum detection score kept by the VM.
    #[arg(long, env = "VISMC_DETECT_THRESHOLD")]
    pub detect_threshold: Option<f64>,
    /// `near` distance as a fraction of the image diagonal.
    #[arg(long, env = "VISMC_NEAR_FRAC")]
    pub near_frac: Option<f64>,
    /// Horizontal overlap required by `on`.
    #[arg(long, env = "VISMC_MIN_OVERLAP")]
    pub min_overlap: Option<f64>,
    /// Covered fraction required by `inside`.
    #[arg(long, env = "VISMC_INSIDE_FRAC")]
    pub inside_frac: Option<f64>,
    /// Contact slack for `on`.
    #[arg(long, env = "VISMC_CONTACT_TOL")]
    pub contact_tol: Option<f64>,
}

impl VmArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<VmConfig, CliError> {
        let d = VmConfig::default();
        let cfg = VmConfig {
            detect_threshold: pick(self.detect_threshold, file.detect_threshold, d.detect_threshold),
            near_frac: pick(self.near_frac, file.near_frac, d.near_frac),
            min_overlap: pick(self.min_overlap, file.min_overlap, d.min_overlap),
            inside_frac: pick(self.inside_frac, file.inside_frac, d.inside_frac),
            contact_tol: pick(self.contact_tol, file.contact_tol, d.contact_tol),
        };
        cfg.validate().map_err(CliError::Input)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// Perception backend.
    #[arg(long, env = "VISMC_BACKEND", value_enum)]
    pub backend: Option<BackendKind>,
    /// Detector server base URL for the remote backend.
    #[arg(long, env = "VISMC_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Deadline per remote request, retries included.
    #[arg(long, env = "VISMC_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    /// Extra attempts after a transport failure.
    #[arg(long, env = "VISMC_RETRIES")]
    pub retries: Option<u32>,
    /// Perception cache file wrapped around the backend.
    #[arg(long, env = "VISMC_CACHE")]
    pub cache: Option<PathBuf>,
    /// How the cache treats misses.
    #[arg(long, env = "VISMC_CACHE_MODE", value_enum)]
    pub cache_mode: Option<CacheModeArg>,
}

/// Backend settings after merging.
#[derive(Debug, Clone, Serialize)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub remote: RemoteConfig,
    pub cache: Option<PathBuf>,
    pub cache_mode: CacheModeArg,
}

impl BackendArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<BackendSettings, CliError> {
        let kind = match (self.backend, &file.backend) {
            (Some(k), _) => k,
            (None, Some(s)) => s.parse()?,
            (None, None) => BackendKind::Oracle,
        };
        let cache_mode = match (self.cache_mode, &file.cache_mode) {
            (Some(m), _) => m,
            (None, Some(s)) => s.parse()?,
            (None, None) => CacheModeArg::ReadWrite,
        };
        let d = RemoteConfig::default();
        let remote = RemoteConfig {
            endpoint: pick(self.endpoint.clone(), file.endpoint.clone(), d.endpoint.clone()),
            timeout_ms: pick(self.timeout_ms, file.timeout_ms, d.timeout_ms),
            retries: pick(self.retries, file.retries, d.retries),
            ..d
        };
        Ok(BackendSettings {
            kind,
            remote,
            cache: self.cache.clone().or_else(|| file.cache.clone()),
            cache_mode,
        })
    }
}

pub fn resolve_policy(flag: Option<IndeterminatePolicy>, file: &FileConfig) -> Result<IndeterminatePolicy, CliError> {
    match (flag, &file.policy) {
        (Some(p), _) => Ok(p),
        (None, Some(s)) => s.parse().map_err(CliError::Input),
        (None, None) => Ok(IndeterminatePolicy::default()),
    }
}
