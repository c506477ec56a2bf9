use std::path::PathBuf;

use diary_core::compliance::ComplianceStatus;
use diary_core::config::{Condition, StudyConfig};
use diary_core::simulate::{simulate, SimulationOptions, SimulationScript};
use diary_core::store::StudyDb;
use diary_core::synthetic::{bundled_script, BUNDLED_SEED};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn bundled_script_fixture_is_current() {
    let want = serde_json::to_string_pretty(&bundled_script(BUNDLED_SEED)).unwrap() + "\n";
    let path = fixture("bundled_script.json");
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        std::fs::write(&path, &want).unwrap();
    }
    let got = std::fs::read_to_string(&path).expect("run with UPDATE_FIXTURES=1 to create");
    assert!(
        got == want,
        "fixtures/bundled_script.json is stale; rerun with UPDATE_FIXTURES=1"
    );
    let parsed: SimulationScript = serde_json::from_str(&got).unwrap();
    assert_eq!(parsed, bundled_script(BUNDLED_SEED));
}

#[test]
fn bundled_study_compliance() {
    let script = bundled_script(BUNDLED_SEED);
    let (svc, report) = simulate(
        &script,
        SimulationOptions::default(),
        StudyDb::in_memory(StudyConfig::default()),
    )
    .unwrap();
    assert_eq!(report.entries, 162);
    assert_eq!(report.participants, 24);
    let summary = report.compliance.summary.as_ref().unwrap();
    let share = |c| summary.condition(c).unwrap().on_time_no_reminder_share * 100.0;
    assert!((share(Condition::RobotConversational) - 87.5).abs() < 0.05);
    assert!((share(Condition::AudioTranscript) - 71.43).abs() < 0.05);
    assert!((share(Condition::TextForm) - 58.99).abs() < 0.05);
    // Every participant-night lands in exactly one status.
    assert_eq!(report.compliance.records.len(), 24 * 7);
    let excused = report
        .compliance
        .records
        .iter()
        .filter(|r| r.status == ComplianceStatus::Excused)
        .count();
    assert_eq!(excused, 1);

    let stats = report.stats.as_ref().unwrap();
    let wc = stats.measure("word_count").unwrap();
    assert_eq!(wc.groups[0].mean, 286.0);
    assert_eq!(wc.groups[1].mean, 394.0);
    assert_eq!(wc.groups[2].mean, 130.0);
    assert_eq!(wc.pair("audio", "text").unwrap().diff, 264.0);
    assert_eq!(stats.measure("sus").unwrap().groups[0].mean, 63.75);
    assert_eq!(stats.measure("flow").unwrap().groups[2].mean, 6.5);
    assert_eq!(report.sessions, 55);
    assert_eq!(svc.live_sessions(), 0);
}
