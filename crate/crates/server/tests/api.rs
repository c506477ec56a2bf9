use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{NaiveDate, NaiveDateTime};
use diary_core::config::Enrollment;
use diary_core::synthetic::{bundled_script, BUNDLED_SEED};
use diary_core::{
    simulate, Action, Condition, DiaryEntry, Gateway, MockScript, Notifier, RecordingNotifier,
    SessionMode, SimulationOptions, StatsReport, StudyConfig, StudyDb, StudyService,
};
use diary_server::{router, ApiSessionToken, AppOptions, AppState, ErrorEnvelope, StepResponse};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const RESEARCHER: &str = "researcher-secret";

struct Harness {
    state: AppState,
    now: Arc<Mutex<NaiveDateTime>>,
}

fn night1(h: u32, m: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 6, 3)
        .unwrap()
        .and_hms_opt(h, m, 0)
        .unwrap()
}

fn enroll(pid: &str, condition: Condition) -> Enrollment {
    Enrollment {
        participant_id: pid.into(),
        condition,
        check_time: None,
        reminder_channel: None,
    }
}

fn harness_with(service: StudyService, gateway: Arc<Gateway>) -> Harness {
    let now = Arc::new(Mutex::new(night1(20, 0)));
    let clock_now = now.clone();
    let state = AppState::new(
        service,
        gateway,
        AppOptions {
            researcher_token: Some(RESEARCHER.into()),
            token_ttl: chrono::Duration::hours(2),
            clock: Arc::new(move || *clock_now.lock().unwrap()),
            ..Default::default()
        },
    );
    Harness { state, now }
}

fn harness() -> Harness {
    let config = StudyConfig {
        participants: vec![
            enroll("R1", Condition::RobotConversational),
            enroll("R2", Condition::RobotConversational),
            enroll("A1", Condition::AudioTranscript),
            enroll("T1", Condition::TextForm),
        ],
        ..StudyConfig::default()
    };
    let mut mock = MockScript::default();
    mock.transcripts.insert(
        "blob-1".into(),
        "we had a bath and then read a story".into(),
    );
    let gateway = Arc::new(Gateway::mock(mock));
    let notifier: Arc<dyn Notifier> = Arc::new(RecordingNotifier::new());
    let service = StudyService::new(StudyDb::in_memory(config), gateway.clone(), notifier);
    harness_with(service, gateway)
}

impl Harness {
    async fn send(
        &self,
        method: &str,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = router(self.state.clone())
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    async fn token(&self, pid: &str) -> ApiSessionToken {
        let (status, body) = self
            .send(
                "POST",
                "/tokens",
                Some(RESEARCHER),
                Some(json!({ "participant_id": pid })),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        serde_json::from_value(body).unwrap()
    }
}

fn error_code(body: &Value) -> String {
    serde_json::from_value::<ErrorEnvelope>(body.clone())
        .unwrap()
        .error
        .code
}

fn six_answers(words: &str) -> Value {
    json!((1..=6)
        .map(|q| json!({ "question_id": q, "text": format!("{words} {q}") }))
        .collect::<Vec<_>>())
}

#[tokio::test]
async fn healthz_needs_no_token() {
    let h = harness();
    let (status, body) = h.send("GET", "/healthz", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn researcher_endpoints_check_tokens() {
    let h = harness();
    let (status, body) = h.send("GET", "/study/compliance", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(error_code(&body), "missing_token");

    let (status, body) = h
        .send("GET", "/study/compliance", Some("guess"), None)
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(error_code(&body), "invalid_token");

    let t = h.token("T1").await;
    let (status, body) = h
        .send("GET", "/study/compliance", Some(&t.token), None)
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(error_code(&body), "forbidden");

    let (status, body) = h
        .send(
            "POST",
            "/tokens",
            Some(RESEARCHER),
            Some(json!({ "participant_id": "nobody" })),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "unknown_participant");
}

#[tokio::test]
async fn tokens_are_single_participant_and_expire() {
    let h = harness();
    let t = h.token("T1").await;
    let (status, _) = h
        .send("GET", "/participants/T1/entries", Some(&t.token), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = h
        .send("GET", "/participants/A1/entries", Some(&t.token), None)
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(error_code(&body), "forbidden");
    let (status, _) = h
        .send(
            "POST",
            "/entries",
            Some(&t.token),
            Some(json!({ "participant_id": "A1", "responses": six_answers("x") })),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);

    *h.now.lock().unwrap() = night1(22, 0);
    let (status, body) = h
        .send("GET", "/participants/T1/entries", Some(&t.token), None)
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(error_code(&body), "token_expired");
}

#[tokio::test]
async fn conversational_diary_over_http() {
    let h = harness();
    let t = h.token("R1").await;
    let (status, body) = h.send("POST", "/sessions", Some(&t.token), None).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let id = body["session"]["id"].as_str().unwrap().to_string();
    assert_eq!(body["session"]["mode"], "chat");
    let session_token: ApiSessionToken = serde_json::from_value(body["token"].clone()).unwrap();
    assert_eq!(session_token.session_id.as_deref(), Some(id.as_str()));

    let (status, body) = h
        .send(
            "POST",
            &format!("/sessions/{id}/utterance"),
            Some(&session_token.token),
            Some(json!({ "text": diary_core::TRIGGER_PHRASE })),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let step: StepResponse = serde_json::from_value(body).unwrap();
    assert_eq!(step.session.mode(), SessionMode::Diary);
    assert!(step.actions.iter().any(|a| matches!(
        a,
        Action::ModeChanged {
            from: SessionMode::Chat,
            to: SessionMode::Diary
        }
    )));
    assert!(step.actions.iter().any(|a| matches!(
        a,
        Action::Prompt {
            question_id: Some(1),
            ..
        }
    )));

    // Another participant's token cannot drive this session.
    let other = h.token("R2").await;
    let (status, _) = h
        .send("GET", &format!("/sessions/{id}"), Some(&other.token), None)
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);

    let mut completed: Option<DiaryEntry> = None;
    for q in 1..=6 {
        let (status, _) = h
            .send(
                "POST",
                &format!("/sessions/{id}/utterance"),
                Some(&t.token),
                Some(json!({ "text": format!("a long and detailed answer for question {q}") })),
            )
            .await;
        assert_eq!(status, StatusCode::OK);
        let (status, body) = h
            .send(
                "POST",
                &format!("/sessions/{id}/end-response"),
                Some(&t.token),
                None,
            )
            .await;
        assert_eq!(status, StatusCode::OK);
        let step: StepResponse = serde_json::from_value(body).unwrap();
        for a in step.actions {
            if let Action::EntryCompleted { entry } = a {
                completed = Some(entry);
            }
        }
    }
    let entry = completed.expect("diary completed");
    assert_eq!(entry.participant_id, "R1");
    assert_eq!(entry.word_count, 6 * 8);

    let (status, body) = h
        .send(
            "POST",
            &format!("/sessions/{id}/deactivate"),
            Some(&t.token),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session"]["mode"], "idle");

    let (_, body) = h
        .send("GET", "/participants/R1/entries", Some(RESEARCHER), None)
        .await;
    assert_eq!(body.as_array().unwrap().len(), 1);

    let (_, body) = h.send("GET", "/metrics/startup", None, None).await;
    assert!(body["first_ready_ms"].as_f64().is_some());
}

#[tokio::test]
async fn unknown_session_is_404() {
    let h = harness();
    let (status, body) = h
        .send(
            "POST",
            "/sessions/nope/end-response",
            Some(RESEARCHER),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "unknown_session");
}

#[tokio::test]
async fn direct_entries_by_channel() {
    let h = harness();
    let t = h.token("T1").await;
    let (status, body) = h
        .send(
            "POST",
            "/entries",
            Some(&t.token),
            Some(json!({ "channel": "text-form", "responses": six_answers("one two three") })),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let entry: DiaryEntry = serde_json::from_value(body).unwrap();
    assert_eq!(entry.word_count, 6 * 4);
    assert_eq!(entry.study_day, 1);

    let (status, body) = h
        .send(
            "POST",
            "/entries",
            Some(&t.token),
            Some(json!({ "channel": "audio-transcript", "responses": six_answers("x") })),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "wrong_channel");

    let r = h.token("R1").await;
    let (status, body) = h
        .send(
            "POST",
            "/entries",
            Some(&r.token),
            Some(json!({ "responses": six_answers("x") })),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "wrong_channel");

    let (status, body) = h
        .send(
            "POST",
            "/entries",
            Some(RESEARCHER),
            Some(
                json!({ "participant_id": "T1", "responses": [{ "question_id": 1, "text": "x" }] }),
            ),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "invalid_entry");

    let mut audio: Vec<Value> = (2..=6)
        .map(|q| json!({ "question_id": q, "text": "fine" }))
        .collect();
    audio.insert(0, json!({ "question_id": 1, "audio_ref": "blob-1" }));
    let (status, body) = h
        .send(
            "POST",
            "/entries",
            Some(RESEARCHER),
            Some(json!({ "participant_id": "A1", "responses": audio })),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let entry: DiaryEntry = serde_json::from_value(body).unwrap();
    assert_eq!(entry.word_count, 9 + 5);
}

#[tokio::test]
async fn researcher_operations() {
    let h = harness();
    let (status, body) = h
        .send("POST", "/participants/T1/remind", Some(RESEARCHER), None)
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["outcome"], "sent");
    let (_, body) = h
        .send("POST", "/participants/T1/remind", Some(RESEARCHER), None)
        .await;
    assert_eq!(body["outcome"], "already-sent");

    let (status, body) = h
        .send("GET", "/study/compliance", Some(RESEARCHER), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["records"].as_array().unwrap().len(), 4 * 7);

    let bad = StudyConfig {
        required_days: 99,
        ..StudyConfig::default()
    };
    let (status, body) = h
        .send(
            "POST",
            "/study/config",
            Some(RESEARCHER),
            Some(serde_json::to_value(&bad).unwrap()),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "required_exceeds_total");

    let (status, body) = h
        .send(
            "GET",
            "/analysis/stats?measure=height",
            Some(RESEARCHER),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "unknown_measure");
}

#[tokio::test]
async fn stats_on_bundled_corpus() {
    let script = bundled_script(BUNDLED_SEED);
    let (service, _) = simulate(
        &script,
        SimulationOptions::default(),
        StudyDb::in_memory(StudyConfig::default()),
    )
    .unwrap();
    let h = harness_with(service, Arc::new(Gateway::default()));
    let (status, body) = h
        .send(
            "GET",
            "/analysis/stats?measure=word_count",
            Some(RESEARCHER),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: StatsReport = serde_json::from_value(body).unwrap();
    let wc = report.measure("word_count").unwrap();
    assert_eq!(wc.pair("audio", "text").unwrap().diff, 264.0);
    assert!((wc.pair("audio", "text").unwrap().p - 0.037).abs() < 0.015);

    let (status, body) = h
        .send("GET", "/analysis/summary", Some(RESEARCHER), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["entries"], 162);
}
