//! HTTP + WebSocket front end for [`diary_core::StudyService`].
//!
//! Participants hold short-lived bearer tokens issued by the researcher; the
//! researcher token comes from the environment. Every service call runs on the
//! blocking pool, since the service serializes on its store lock.

pub mod auth;
pub mod config;
mod error;
mod routes;
mod ws;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::http::HeaderMap;
use chrono::NaiveDateTime;
use diary_core::compliance::{ConsoleNotifier, WebhookNotifier};
use diary_core::gateway::ProviderKind;
use diary_core::{Codebook, Gateway, LogOptions, Notifier, ServiceError, StudyDb, StudyService};
use serde::{Deserialize, Serialize};

pub use auth::{ApiSessionToken, AuthError, Principal, TokenStore};
pub use config::{NotifierSettings, ServerConfig};
pub use error::{ApiError, ErrorBody, ErrorEnvelope};
pub use routes::{router, StepResponse};
pub use ws::{ClientMessage, ServerMessage};

pub type Clock = Arc<dyn Fn() -> NaiveDateTime + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| chrono::Local::now().naive_local())
}

pub struct AppOptions {
    pub researcher_token: Option<String>,
    pub token_ttl: chrono::Duration,
    pub clock: Clock,
    /// Process start, for the startup-latency report.
    pub started: Instant,
}

impl Default for AppOptions {
    fn default() -> Self {
        AppOptions {
            researcher_token: None,
            token_ttl: chrono::Duration::hours(12),
            clock: system_clock(),
            started: Instant::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderLatency {
    pub kind: String,
    pub calls: usize,
    pub failures: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartupReport {
    pub uptime_ms: f64,
    /// Process start to the first Ready cue shown to a participant.
    pub first_ready_ms: Option<f64>,
    pub providers: Vec<ProviderLatency>,
}

struct Inner {
    service: Arc<StudyService>,
    gateway: Arc<Gateway>,
    tokens: TokenStore,
    clock: Clock,
    token_ttl: chrono::Duration,
    started: Instant,
    first_ready: OnceLock<f64>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// `gateway` should be the one the service was built with, for latency reporting.
    pub fn new(service: StudyService, gateway: Arc<Gateway>, options: AppOptions) -> Self {
        AppState {
            inner: Arc::new(Inner {
                service: Arc::new(service),
                gateway,
                tokens: TokenStore::new(options.researcher_token),
                clock: options.clock,
                token_ttl: options.token_ttl,
                started: options.started,
                first_ready: OnceLock::new(),
            }),
        }
    }

    /// Build the whole stack from a config file's contents.
    pub fn from_config(cfg: &ServerConfig, started: Instant) -> Result<Self, String> {
        let gateway = Arc::new(Gateway::from_specs(&cfg.providers).map_err(|e| e.to_string())?);
        let notifier: Arc<dyn Notifier> = match &cfg.notifier {
            Some(n) => Arc::new(WebhookNotifier::new(
                n.webhook_url.clone(),
                std::time::Duration::from_secs_f64(n.timeout_secs),
            )),
            None => Arc::new(ConsoleNotifier::stdout()),
        };
        cfg.study.validate().map_err(|e| e.to_string())?;
        let db = match &cfg.data_dir {
            Some(dir) => StudyDb::open(dir, cfg.study.clone(), LogOptions::default())
                .map_err(|e| e.to_string())?,
            None => StudyDb::in_memory(cfg.study.clone()),
        };
        let codebook = match &cfg.codebook {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                Codebook::from_json(&text).map_err(|e| e.to_string())?
            }
            None => Codebook::bundled(),
        };
        let service = StudyService::new(db, gateway.clone(), notifier).with_codebook(codebook);
        let researcher_token = std::env::var(&cfg.researcher_token_env).ok();
        if researcher_token.is_none() {
            tracing::warn!(
                env = %cfg.researcher_token_env,
                "no researcher token set; researcher endpoints are disabled"
            );
        }
        Ok(AppState::new(
            service,
            gateway,
            AppOptions {
                researcher_token,
                token_ttl: chrono::Duration::minutes(cfg.token_ttl_minutes as i64),
                clock: system_clock(),
                started,
            },
        ))
    }

    pub fn service(&self) -> &Arc<StudyService> {
        &self.inner.service
    }

    pub fn tokens(&self) -> &TokenStore {
        &self.inner.tokens
    }

    pub fn now(&self) -> NaiveDateTime {
        (self.inner.clock)()
    }

    /// Run a service call on the blocking pool.
    pub async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&StudyService) -> Result<T, ServiceError> + Send + 'static,
    {
        let service = self.inner.service.clone();
        tokio::task::spawn_blocking(move || f(&service))
            .await
            .map_err(|e| {
                ApiError::new(
                    axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    e.to_string(),
                )
            })?
            .map_err(ApiError::from)
    }

    fn principal(
        &self,
        headers: &HeaderMap,
        query_token: Option<&str>,
    ) -> Result<Principal, ApiError> {
        let header = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        let token = auth::bearer(header).or(query_token);
        Ok(self.inner.tokens.resolve(token, self.now())?)
    }

    fn require_researcher(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match self.principal(headers, None)? {
            Principal::Researcher => Ok(()),
            Principal::Participant(_) => {
                Err(AuthError::Forbidden("researcher token required".into()).into())
            }
        }
    }

    fn note_ready(&self) {
        self.inner
            .first_ready
            .get_or_init(|| self.inner.started.elapsed().as_secs_f64() * 1000.0);
    }

    pub fn startup_report(&self) -> StartupReport {
        let records = self.inner.gateway.call_log().records();
        let providers = [
            ProviderKind::Transcription,
            ProviderKind::Chat,
            ProviderKind::Synthesis,
        ]
        .into_iter()
        .filter_map(|kind| {
            let calls: Vec<_> = records.iter().filter(|r| r.kind == kind).collect();
            if calls.is_empty() {
                return None;
            }
            let total: f64 = calls.iter().map(|r| r.duration_ms).sum();
            Some(ProviderLatency {
                kind: kind.as_str().to_string(),
                calls: calls.len(),
                failures: calls.iter().filter(|r| r.outcome != "ok").count(),
                mean_ms: total / calls.len() as f64,
                max_ms: calls.iter().map(|r| r.duration_ms).fold(0.0, f64::max),
            })
        })
        .collect();
        StartupReport {
            uptime_ms: self.inner.started.elapsed().as_secs_f64() * 1000.0,
            first_ready_ms: self.inner.first_ready.get().copied(),
            providers,
        }
    }

    /// One scheduler pass: reminders, session expiry, token cleanup.
    pub async fn tick(&self) -> Result<(), ApiError> {
        let now = self.now();
        self.inner.tokens.purge(now);
        self.call(move |s| {
            let report = s.tick(now)?;
            for (d, err) in &report.failed {
                tracing::warn!(participant = %d.participant_id, night = d.night, %err, "reminder failed");
            }
            s.expire_sessions(now)?;
            Ok(())
        })
        .await
    }
}

/// Serve until Ctrl-C, ticking the reminder scheduler in the background.
pub async fn serve(cfg: ServerConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::from_config(&cfg, Instant::now())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let ticker = state.clone();
    let every = std::time::Duration::from_secs(cfg.tick_interval_secs.max(1));
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(every);
        loop {
            interval.tick().await;
            if let Err(e) = ticker.tick().await {
                tracing::error!(code = %e.code, "scheduler tick failed: {}", e.message);
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Load a config file, or defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<ServerConfig, String> {
    path.map(ServerConfig::load)
        .unwrap_or_else(|| Ok(ServerConfig::default()))
}
