use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_LONG_POLL_MS: u64 = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Moderator,
    Participant,
    Viewer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Moderator => "moderator",
            Role::Participant => "participant",
            Role::Viewer => "viewer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moderator" => Ok(Role::Moderator),
            "participant" => Ok(Role::Participant),
            "viewer" => Ok(Role::Viewer),
            other => Err(format!("unknown role `{other}` (expected moderator, participant or viewer)")),
        }
    }
}

/// A static bearer token and the identity it grants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrant {
    pub token: String,
    pub role: Role,
    /// Participant or moderator handle as used in session rosters.
    pub handle: String,
}

impl FromStr for TokenGrant {
    type Err = String;

    /// Parses `token:role:handle`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(token), Some(role), Some(handle)) if !token.is_empty() && !handle.is_empty() => {
                Ok(TokenGrant { token: token.to_string(), role: role.parse()?, handle: handle.to_string() })
            }
            _ => Err(format!("token grant `{s}` must look like token:role:handle")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub store: PathBuf,
    #[serde(default)]
    pub tokens: Vec<TokenGrant>,
    /// Upper bound on how long a status request may wait.
    #[serde(default = "default_long_poll")]
    pub long_poll_ms: u64,
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().expect("valid default address")
}

fn default_long_poll() -> u64 {
    DEFAULT_LONG_POLL_MS
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        Self { bind: default_bind(), store: store.into(), tokens: Vec::new(), long_poll_ms: DEFAULT_LONG_POLL_MS }
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let config: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| ServiceError::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let mut seen = std::collections::BTreeSet::new();
        for grant in &self.tokens {
            if !seen.insert(grant.token.as_str()) {
                return Err(ServiceError::Config(format!("token for `{}` is listed twice", grant.handle)));
            }
        }
        Ok(())
    }

    pub fn long_poll(&self) -> Duration {
        Duration::from_millis(self.long_poll_ms)
    }
}
