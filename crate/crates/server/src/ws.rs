//! Per-session bidirectional channel. Reconnecting with the same token
//! resumes the session where it was left.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::Response;
use diary_core::{Action, Session, SessionEvent};
use serde::{Deserialize, Serialize};

use crate::auth::Principal;
use crate::error::{ApiError, ErrorBody};
use crate::routes::{utterance_event, UtteranceRequest};
use crate::AppState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientMessage {
    Activate,
    Utterance {
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        audio_ref: Option<String>,
        #[serde(default)]
        hold: bool,
    },
    /// Chat-mode end of speech.
    Silence,
    EndResponse,
    Deactivate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Snapshot {
        session: Session,
    },
    Step {
        session: Session,
        actions: Vec<Action>,
    },
    Error {
        error: ErrorBody,
    },
}

#[derive(Debug, Deserialize)]
pub(crate) struct TokenQuery {
    token: Option<String>,
}

pub(crate) async fn channel(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let principal = state.principal(&headers, q.token.as_deref())?;
    let session = state.authorize_session(&principal, &id).await?;
    let token = q.token;
    Ok(upgrade.on_upgrade(move |socket| run(state, id, session, token, principal, socket)))
}

fn encode(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).unwrap_or_default().into())
}

fn error_message(e: &ApiError) -> ServerMessage {
    ServerMessage::Error {
        error: e.envelope().error,
    }
}

async fn handle(state: &AppState, id: &str, msg: ClientMessage) -> Result<ServerMessage, ApiError> {
    let (events, finish_chat) = match msg {
        ClientMessage::Activate => (vec![SessionEvent::Activate], false),
        ClientMessage::Utterance {
            text,
            audio_ref,
            hold,
        } => (
            vec![utterance_event(UtteranceRequest {
                text,
                audio_ref,
                hold,
            })?],
            !hold,
        ),
        ClientMessage::Silence => (vec![SessionEvent::SilenceTimeout], false),
        ClientMessage::EndResponse => (vec![SessionEvent::EndOfResponse], false),
        ClientMessage::Deactivate => (vec![SessionEvent::Deactivate], false),
    };
    let step = state.step(id, events, finish_chat).await?;
    Ok(ServerMessage::Step {
        session: step.session,
        actions: step.actions,
    })
}

async fn run(
    state: AppState,
    id: String,
    session: Session,
    query_token: Option<String>,
    principal: Principal,
    mut socket: WebSocket,
) {
    if socket
        .send(encode(&ServerMessage::Snapshot { session }))
        .await
        .is_err()
    {
        return;
    }
    while let Some(Ok(frame)) = socket.recv().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        // Tokens can expire mid-connection.
        if let Principal::Participant(t) = &principal {
            let now = state.now();
            if let Err(e) = state
                .tokens()
                .resolve(Some(query_token.as_deref().unwrap_or(&t.token)), now)
            {
                let _ = socket.send(encode(&error_message(&e.into()))).await;
                break;
            }
        }
        let reply = match serde_json::from_str::<ClientMessage>(text.as_str()) {
            Ok(msg) => handle(&state, &id, msg)
                .await
                .unwrap_or_else(|e| error_message(&e)),
            Err(e) => error_message(&ApiError::bad_request(e.to_string())),
        };
        if socket.send(encode(&reply)).await.is_err() {
            break;
        }
    }
}
