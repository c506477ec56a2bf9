use std::sync::Arc;

use chrono::NaiveDate;
use diary_core::config::Enrollment;
use diary_core::{
    Condition, Gateway, Notifier, RecordingNotifier, SessionMode, StudyConfig, StudyDb,
    StudyService, TRIGGER_PHRASE,
};
use diary_server::{router, AppOptions, AppState, ClientMessage, ServerMessage};
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

async fn next_message<S>(ws: &mut S) -> ServerMessage
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            _ => continue,
        }
    }
}

#[tokio::test]
async fn session_channel_streams_steps_and_resumes() {
    let config = StudyConfig {
        participants: vec![Enrollment {
            participant_id: "R1".into(),
            condition: Condition::RobotConversational,
            check_time: None,
            reminder_channel: None,
        }],
        ..StudyConfig::default()
    };
    let gateway = Arc::new(Gateway::default());
    let notifier: Arc<dyn Notifier> = Arc::new(RecordingNotifier::new());
    let service = StudyService::new(StudyDb::in_memory(config), gateway.clone(), notifier);
    let now = NaiveDate::from_ymd_opt(2024, 6, 3)
        .unwrap()
        .and_hms_opt(20, 0, 0)
        .unwrap();
    let state = AppState::new(
        service,
        gateway,
        AppOptions {
            clock: Arc::new(move || now),
            ..Default::default()
        },
    );
    let session = state.service().open_session("R1", now).unwrap();
    let id = session.id().to_string();
    let token = state
        .tokens()
        .issue("R1", Some(&id), now + chrono::Duration::hours(1));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let url = format!("ws://{addr}/sessions/{id}/channel?token={}", token.token);
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    match next_message(&mut ws).await {
        ServerMessage::Snapshot { session } => assert_eq!(session.mode(), SessionMode::Idle),
        other => panic!("{other:?}"),
    }
    let send = |m: ClientMessage| Message::Text(serde_json::to_string(&m).unwrap().into());
    ws.send(send(ClientMessage::Activate)).await.unwrap();
    match next_message(&mut ws).await {
        ServerMessage::Step { session, .. } => assert_eq!(session.mode(), SessionMode::Chat),
        other => panic!("{other:?}"),
    }
    ws.send(send(ClientMessage::Utterance {
        text: Some(TRIGGER_PHRASE.into()),
        audio_ref: None,
        hold: false,
    }))
    .await
    .unwrap();
    match next_message(&mut ws).await {
        ServerMessage::Step { session, .. } => assert_eq!(session.mode(), SessionMode::Diary),
        other => panic!("{other:?}"),
    }
    ws.send(Message::Text("{\"type\":\"dance\"}".into()))
        .await
        .unwrap();
    match next_message(&mut ws).await {
        ServerMessage::Error { error } => assert_eq!(error.code, "bad_request"),
        other => panic!("{other:?}"),
    }
    ws.close(None).await.unwrap();

    // Resume with the same token.
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    match next_message(&mut ws).await {
        ServerMessage::Snapshot { session } => assert_eq!(session.mode(), SessionMode::Diary),
        other => panic!("{other:?}"),
    }

    // Bad token never upgrades.
    let bad = format!("ws://{addr}/sessions/{id}/channel?token=nope");
    assert!(tokio_tungstenite::connect_async(&bad).await.is_err());
}
