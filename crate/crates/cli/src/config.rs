//! Where the server is, who we are, and how to print.
//!
//! Each setting comes from the first of: command-line flag, environment
//! variable (`SATURN_URL`, `SATURN_TOKEN`), config file. The config file
//! lives at `<config dir>/saturn/config.toml` unless `--config` names
//! another.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
}

/// A bearer token. Never printed, not even by `Debug`.
#[derive(Clone)]
pub struct Token(String);

impl Token {
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Token(<redacted>)")
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    url: Option<String>,
    token: Option<String>,
    output: Option<OutputFormat>,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub server_url: String,
    pub token: Option<Token>,
    pub output: OutputFormat,
}

pub fn default_path() -> Option<PathBuf> {
    dirs::config_dir().map(|d| d.join("saturn").join("config.toml"))
}

impl CliConfig {
    /// `url` and `token` already merge flags over environment (clap does
    /// that); the file fills whatever is still unset.
    pub fn resolve(
        url: Option<String>,
        token: Option<String>,
        output: Option<OutputFormat>,
        file: Option<&Path>,
    ) -> Result<Self, CliError> {
        let explicit = file.is_some();
        let path = file.map(Path::to_path_buf).or_else(default_path);
        let from_file = match path {
            Some(p) if p.exists() => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Usage(format!("reading {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            Some(p) if explicit => return Err(CliError::Usage(format!("config file {} does not exist", p.display()))),
            _ => FileConfig::default(),
        };
        let server_url = url
            .or(from_file.url)
            .unwrap_or_else(|| DEFAULT_URL.to_string())
            .trim_end_matches('/')
            .to_string();
        if !(server_url.starts_with("http://") || server_url.starts_with("https://")) {
            return Err(CliError::Usage(format!("server URL {server_url:?} must start with http:// or https://")));
        }
        Ok(Self {
            server_url,
            token: token.or(from_file.token).filter(|t| !t.is_empty()).map(Token),
            output: output.or(from_file.output).unwrap_or_default(),
        })
    }
}
