/// Verb forms that signal the participant wants to begin the diary.
const START_VERBS: &[&str] = &[
    "start",
    "starts",
    "started",
    "starting",
    "begin",
    "begins",
    "began",
    "beginning",
    "begun",
    "do",
    "does",
    "did",
    "doing",
    "record",
    "records",
    "recorded",
    "recording",
];

const DIARY_FORMS: &[&str] = &["diary", "diaries"];

/// Rule-based diary-start matcher: a form of "diary" plus a start verb, case-folded.
pub fn detect_diary_intent(utterance: &str) -> bool {
    let lowered = utterance.to_lowercase();
    let tokens: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    tokens.iter().any(|t| DIARY_FORMS.contains(t)) && tokens.iter().any(|t| START_VERBS.contains(t))
}
