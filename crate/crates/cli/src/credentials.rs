//! The token written by `login` and read by every other networked command.

use std::path::{Path, PathBuf};

use conduit_client::HttpApi;
use conduit_core::Timestamp;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Credentials {
    pub url: String,
    pub access_token: String,
    pub expires_at: Timestamp,
}

/// `$CONDUIT_HOME/credentials.json`, defaulting to `~/.conduit`.
pub fn default_path() -> PathBuf {
    let home = std::env::var_os("CONDUIT_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".conduit")))
        .unwrap_or_else(|| PathBuf::from(".conduit"));
    home.join("credentials.json")
}

pub fn save(path: &Path, creds: &Credentials) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(creds)?)?;
    Ok(())
}

pub fn load(path: &Path) -> CliResult<Credentials> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Connection(format!("not logged in ({}: {e}); run `conduit login`", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// An authenticated transport. `url` overrides the one saved at login.
pub fn connect(path: &Path, url: Option<&str>) -> CliResult<HttpApi> {
    let creds = load(path)?;
    Ok(HttpApi::new(url.unwrap_or(&creds.url), &creds.access_token)?)
}
