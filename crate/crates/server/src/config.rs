use std::path::{Path, PathBuf};

use diary_core::gateway::ProviderSpec;
use diary_core::StudyConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifierSettings {
    pub webhook_url: String,
    #[serde(default = "default_webhook_timeout")]
    pub timeout_secs: f64,
}

fn default_webhook_timeout() -> f64 {
    5.0
}

/// Server config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub study: StudyConfig,
    pub providers: Vec<ProviderSpec>,
    /// Reminders go to stdout as JSON lines when unset.
    pub notifier: Option<NotifierSettings>,
    /// Where the event log lives; in memory when unset.
    pub data_dir: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    /// Name of the env var holding the researcher bearer token.
    pub researcher_token_env: String,
    pub token_ttl_minutes: u32,
    pub tick_interval_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            study: StudyConfig::default(),
            providers: Vec::new(),
            notifier: None,
            data_dir: None,
            codebook: None,
            researcher_token_env: "DIARY_RESEARCHER_TOKEN".into(),
            token_ttl_minutes: 12 * 60,
            tick_interval_secs: 60,
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
