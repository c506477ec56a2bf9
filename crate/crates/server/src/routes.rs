use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use diary_core::compliance::ManualReminder;
use diary_core::conversation::InteractionCue;
use diary_core::service::SubmittedResponse;
use diary_core::store::{EntryFilter, Scope};
use diary_core::{
    Action, AnalysisSummary, Channel, ComplianceReport, Condition, DiaryEntry, EntrySubmission,
    Session, SessionEvent, SessionMode, StatsReport, StudyConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{ApiSessionToken, AuthError, Principal};
use crate::error::ApiError;
use crate::{ws, AppState, StartupReport};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/metrics/startup", get(startup))
        .route("/tokens", post(issue_token))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/end-response", post(end_response))
        .route("/sessions/{id}/deactivate", post(deactivate))
        .route("/sessions/{id}/channel", get(ws::channel))
        .route("/entries", post(submit_entry))
        .route("/participants/{id}/entries", get(participant_entries))
        .route("/participants/{id}/remind", post(remind))
        .route("/study/compliance", get(compliance))
        .route("/study/config", post(set_config))
        .route("/analysis/summary", get(analysis_summary))
        .route("/analysis/stats", get(analysis_stats))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub session: Session,
    pub actions: Vec<Action>,
}

#[derive(Debug, Deserialize)]
struct TokenRequest {
    participant_id: String,
    ttl_minutes: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct OpenSessionRequest {
    participant_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct OpenSessionResponse {
    session: Session,
    actions: Vec<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    token: Option<ApiSessionToken>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub(crate) struct UtteranceRequest {
    pub text: Option<String>,
    pub audio_ref: Option<String>,
    /// Keep a chat-mode utterance open instead of treating it as a full turn.
    pub hold: bool,
}

#[derive(Debug, Deserialize)]
struct EntryRequest {
    participant_id: Option<String>,
    channel: Option<Channel>,
    study_day: Option<u32>,
    responses: Vec<SubmittedResponse>,
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    measure: Option<String>,
}

fn channel_for(condition: Condition) -> Channel {
    match condition {
        Condition::RobotConversational => Channel::Conversational,
        Condition::TextForm => Channel::TextForm,
        Condition::AudioTranscript => Channel::AudioTranscript,
    }
}

/// The participant this request acts for: the token's, or the named one for the researcher.
fn acting_participant(principal: &Principal, named: Option<&str>) -> Result<String, ApiError> {
    match (principal, named) {
        (Principal::Researcher, Some(p)) => Ok(p.to_string()),
        (Principal::Researcher, None) => Err(ApiError::bad_request("participant_id is required")),
        (Principal::Participant(t), Some(p)) if p != t.participant_id => Err(AuthError::Forbidden(
            format!("token is bound to participant {}", t.participant_id),
        )
        .into()),
        (Principal::Participant(t), _) => Ok(t.participant_id.clone()),
    }
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let live = state.service().live_sessions();
    Json(json!({ "status": "ok", "live_sessions": live }))
}

async fn startup(State(state): State<AppState>) -> Json<StartupReport> {
    Json(state.startup_report())
}

async fn issue_token(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<TokenRequest>,
) -> Result<(StatusCode, Json<ApiSessionToken>), ApiError> {
    state.require_researcher(&headers)?;
    let enrolled = state
        .service()
        .config()
        .participants
        .iter()
        .any(|e| e.participant_id == req.participant_id);
    if !enrolled {
        return Err(diary_core::ServiceError::UnknownParticipant(req.participant_id).into());
    }
    let ttl = req
        .ttl_minutes
        .map(|m| chrono::Duration::minutes(m as i64))
        .unwrap_or(state.inner.token_ttl);
    let token = state
        .tokens()
        .issue(&req.participant_id, None, state.now() + ttl);
    Ok((StatusCode::CREATED, Json(token)))
}

async fn open_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Option<Json<OpenSessionRequest>>,
) -> Result<(StatusCode, Json<OpenSessionResponse>), ApiError> {
    let principal = state.principal(&headers, None)?;
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let pid = acting_participant(&principal, req.participant_id.as_deref())?;
    let now = state.now();
    let (session, actions) = state
        .call(move |s| {
            let session = s.open_session(&pid, now)?;
            let actions = s.session_event(session.id(), SessionEvent::Activate, now)?;
            Ok((s.session(session.id())?, actions))
        })
        .await?;
    state.observe(&actions);
    let token = match principal {
        Principal::Participant(t) => Some(state.tokens().issue(
            &t.participant_id,
            Some(session.id()),
            now + state.inner.token_ttl,
        )),
        Principal::Researcher => None,
    };
    Ok((
        StatusCode::CREATED,
        Json(OpenSessionResponse {
            session,
            actions,
            token,
        }),
    ))
}

impl AppState {
    /// Authorize access to session `id` and return its current state.
    pub(crate) async fn authorize_session(
        &self,
        principal: &Principal,
        id: &str,
    ) -> Result<Session, ApiError> {
        let sid = id.to_string();
        let session = self.call(move |s| s.session(&sid)).await?;
        if let Principal::Participant(t) = principal {
            if t.participant_id != session.participant_id() || !t.allows_session(id) {
                return Err(AuthError::Forbidden(format!(
                    "token does not grant access to session {id}"
                ))
                .into());
            }
        }
        Ok(session)
    }

    /// Apply `events` in order. With `finish_chat`, a chat-mode utterance is
    /// closed with a silence timeout so request/response clients get the reply.
    pub(crate) async fn step(
        &self,
        id: &str,
        events: Vec<SessionEvent>,
        finish_chat: bool,
    ) -> Result<StepResponse, ApiError> {
        let now = self.now();
        let sid = id.to_string();
        let response = self
            .call(move |s| {
                let mut actions = Vec::new();
                for event in events {
                    actions.extend(s.session_event(&sid, event, now)?);
                }
                if finish_chat && s.session(&sid)?.mode() == SessionMode::Chat {
                    actions.extend(s.session_event(&sid, SessionEvent::SilenceTimeout, now)?);
                }
                Ok(StepResponse {
                    session: s.session(&sid)?,
                    actions,
                })
            })
            .await?;
        self.observe(&response.actions);
        Ok(response)
    }

    pub(crate) fn observe(&self, actions: &[Action]) {
        let ready = actions.iter().any(|a| {
            matches!(
                a,
                Action::CueChanged {
                    cue: InteractionCue::Ready,
                    ..
                }
            )
        });
        if ready {
            self.note_ready();
        }
    }
}

pub(crate) fn utterance_event(req: UtteranceRequest) -> Result<SessionEvent, ApiError> {
    if req.text.is_none() && req.audio_ref.is_none() {
        return Err(ApiError::bad_request("utterance needs text or audio_ref"));
    }
    Ok(SessionEvent::UtteranceReceived {
        text: req.text,
        audio_ref: req.audio_ref,
    })
}

async fn get_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<Session>, ApiError> {
    let principal = state.principal(&headers, None)?;
    Ok(Json(state.authorize_session(&principal, &id).await?))
}

async fn utterance(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<UtteranceRequest>,
) -> Result<Json<StepResponse>, ApiError> {
    let principal = state.principal(&headers, None)?;
    state.authorize_session(&principal, &id).await?;
    let hold = req.hold;
    let event = utterance_event(req)?;
    Ok(Json(state.step(&id, vec![event], !hold).await?))
}

async fn end_response(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<StepResponse>, ApiError> {
    let principal = state.principal(&headers, None)?;
    state.authorize_session(&principal, &id).await?;
    Ok(Json(
        state
            .step(&id, vec![SessionEvent::EndOfResponse], false)
            .await?,
    ))
}

async fn deactivate(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<StepResponse>, ApiError> {
    let principal = state.principal(&headers, None)?;
    state.authorize_session(&principal, &id).await?;
    Ok(Json(
        state
            .step(&id, vec![SessionEvent::Deactivate], false)
            .await?,
    ))
}

async fn submit_entry(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<EntryRequest>,
) -> Result<(StatusCode, Json<DiaryEntry>), ApiError> {
    let principal = state.principal(&headers, None)?;
    let pid = acting_participant(&principal, req.participant_id.as_deref())?;
    if let Some(channel) = req.channel {
        let condition = state
            .service()
            .config()
            .participants
            .iter()
            .find(|e| e.participant_id == pid)
            .map(|e| e.condition);
        if let Some(c) = condition.filter(|c| channel_for(*c) != channel) {
            return Err(diary_core::ServiceError::WrongChannel {
                participant: pid,
                condition: c.label(),
            }
            .into());
        }
    }
    let now = state.now();
    let submission = EntrySubmission {
        participant_id: pid,
        study_day: req.study_day,
        responses: req.responses,
    };
    let entry = state.call(move |s| s.submit_entry(submission, now)).await?;
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn participant_entries(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(filter): Query<EntryFilter>,
) -> Result<Json<Vec<DiaryEntry>>, ApiError> {
    let principal = state.principal(&headers, None)?;
    acting_participant(&principal, Some(&id))?;
    let entries = state
        .call(move |s| s.fetch_entries(&Scope::Participant(id), &filter))
        .await?;
    Ok(Json(entries))
}

async fn remind(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<ManualReminder>, ApiError> {
    state.require_researcher(&headers)?;
    let now = state.now();
    Ok(Json(state.call(move |s| s.remind(&id, now)).await?))
}

async fn compliance(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> Result<Json<ComplianceReport>, ApiError> {
    state.require_researcher(&headers)?;
    Ok(Json(state.call(|s| Ok(s.compliance())).await?))
}

async fn set_config(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(config): Json<StudyConfig>,
) -> Result<Json<serde_json::Value>, ApiError> {
    state.require_researcher(&headers)?;
    let offset = state.call(move |s| s.set_config(config)).await?;
    Ok(Json(json!({ "offset": offset })))
}

async fn analysis_summary(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> Result<Json<AnalysisSummary>, ApiError> {
    state.require_researcher(&headers)?;
    Ok(Json(state.call(|s| s.analysis_summary()).await?))
}

async fn analysis_stats(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<StatsQuery>,
) -> Result<Json<StatsReport>, ApiError> {
    state.require_researcher(&headers)?;
    Ok(Json(
        state.call(move |s| s.stats(q.measure.as_deref())).await?,
    ))
}
