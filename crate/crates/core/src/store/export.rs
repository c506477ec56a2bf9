use std::io::{BufRead, Write};

use super::{DiaryEntry, StoreError};

const CSV_HEADER: [&str; 7] = [
    "participant_id",
    "condition",
    "study_day",
    "channel",
    "word_count",
    "created_at",
    "text",
];

pub fn write_entries_csv<W: Write>(entries: &[DiaryEntry], out: W) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| StoreError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for e in entries {
        w.write_record([
            e.participant_id.as_str(),
            e.condition.label(),
            &e.study_day.to_string(),
            e.channel.as_str(),
            &e.word_count.to_string(),
            &e.created_at.format("%Y-%m-%dT%H:%M:%S").to_string(),
            &e.text(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn entries_to_csv(entries: &[DiaryEntry]) -> String {
    let mut buf = Vec::new();
    write_entries_csv(entries, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn entries_to_jsonl(entries: &[DiaryEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entries serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_entries_jsonl(text: &str) -> Result<Vec<DiaryEntry>, StoreError> {
    read_entries_jsonl(text.as_bytes())
}

pub fn read_entries_jsonl<R: BufRead>(input: R) -> Result<Vec<DiaryEntry>, StoreError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|err| StoreError::CorruptLog {
            line: i + 1,
            message: err.to_string(),
        })?;
        entries.push(e);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Channel, Condition};
    use crate::store::QuestionResponse;
    use chrono::NaiveDate;

    fn sample() -> Vec<DiaryEntry> {
        vec![DiaryEntry::new(
            "A1".into(),
            Condition::AudioTranscript,
            3,
            Channel::AudioTranscript,
            vec![QuestionResponse {
                question_id: 1,
                segments: vec!["bath, then \"one\" story".into()],
            }],
            NaiveDate::from_ymd_opt(2024, 6, 5)
                .unwrap()
                .and_hms_opt(20, 15, 0)
                .unwrap(),
        )]
    }

    #[test]
    fn csv_has_one_row_per_entry_with_quoting() {
        let csv = entries_to_csv(&sample());
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "participant_id,condition,study_day,channel,word_count,created_at,text"
        );
        assert_eq!(
            lines.next().unwrap(),
            "A1,audio,3,audio-transcript,4,2024-06-05T20:15:00,\"bath, then \"\"one\"\" story\""
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let entries = sample();
        assert_eq!(
            parse_entries_jsonl(&entries_to_jsonl(&entries)).unwrap(),
            entries
        );
        assert!(parse_entries_jsonl("").unwrap().is_empty());
        assert!(parse_entries_jsonl("nope\n").is_err());
    }
}
