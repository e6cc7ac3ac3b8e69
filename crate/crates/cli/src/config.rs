//! Effective-configuration plumbing shared by every verb.
//!
//! Precedence: command-line flag, then `RFD_*` environment variable, then
//! the `--config` TOML file, then built-in defaults. The resolved
//! configuration is written next to the primary output so the run can be
//! repeated with `--config <sidecar>`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(rfd_reid::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(e) => e.kind(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<rfd_reid::Error> for CliError {
    fn from(e: rfd_reid::Error) -> Self {
        CliError::Data(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Data(rfd_reid::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Defaults overlaid with the TOML file at `path`, if any.
pub fn load<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {}", p.display(), e.message())))
        }
    }
}

/// Path of the echoed configuration for an output file.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn echo<C: Serialize>(config: &C, path: &Path) -> CliResult<()> {
    let text = toml::to_string(config).map_err(|e| CliError::Usage(format!("cannot serialise effective config: {e}")))?;
    write_bytes(path, text.as_bytes())
}

pub fn require<T: Clone>(value: &Option<T>, name: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::Usage(format!("missing required setting `{name}` (flag --{} or config key)", name.replace('_', "-"))))
}

/// Parse a flag value through the type's serde name.
pub fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    toml::Value::String(s.to_owned()).try_into().map_err(|_| format!("unrecognised value `{s}`"))
}

/// Overwrite `$target` with `$value` when the flag was given.
macro_rules! overlay {
    ($cfg:ident, $args:ident: $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $cfg.$field = v.into();
        })+
    };
}
pub(crate) use overlay;
