use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Record, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub offset: u64,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogOptions {
    /// Refuse appends that would grow the file past this many bytes.
    pub quota_bytes: Option<u64>,
    /// `fsync` after every append.
    pub sync: bool,
}

#[derive(Debug)]
struct Inner {
    file: Option<File>,
    lines: Vec<LogLine>,
    bytes: u64,
    next_offset: u64,
}

/// Single-writer append-only log. Offsets are line sequence numbers.
///
/// A file-backed log keeps its parsed lines in memory as well, so readers
/// never touch the file. An in-memory log behaves identically minus durability.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    options: LogOptions,
    inner: Mutex<Inner>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            path: None,
            options: LogOptions::default(),
            inner: Mutex::new(Inner {
                file: None,
                lines: Vec::new(),
                bytes: 0,
                next_offset: 0,
            }),
        }
    }

    /// Open (or create) a log file, validating every existing line.
    ///
    /// An unterminated final line is the footprint of an interrupted append
    /// and is truncated away; any other unparsable line is `CorruptLog`.
    pub fn open(path: &Path, options: LogOptions) -> Result<Self, StoreError> {
        let mut lines = Vec::new();
        let mut good_bytes = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(path)?);
            let mut buf = String::new();
            let mut lineno = 0;
            loop {
                buf.clear();
                let n = reader.read_line(&mut buf)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                if !buf.ends_with('\n') {
                    tracing::warn!(line = lineno, "truncating unterminated final log line");
                    break;
                }
                let line: LogLine =
                    serde_json::from_str(buf.trim_end()).map_err(|e| StoreError::CorruptLog {
                        line: lineno,
                        message: e.to_string(),
                    })?;
                if line.offset != lines.len() as u64 {
                    return Err(StoreError::CorruptLog {
                        line: lineno,
                        message: format!(
                            "offset {} out of sequence (expected {})",
                            line.offset,
                            lines.len()
                        ),
                    });
                }
                lines.push(line);
                good_bytes += n as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)?;
        if file.metadata()?.len() != good_bytes {
            file.set_len(good_bytes)?;
        }
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0))?;
        let next_offset = lines.len() as u64;
        Ok(EventLog {
            path: Some(path.to_path_buf()),
            options,
            inner: Mutex::new(Inner {
                file: Some(file),
                lines,
                bytes: good_bytes,
                next_offset,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Append one record and return its offset.
    pub fn append(&self, record: Record) -> Result<u64, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let offset = inner.next_offset;
        let line = LogLine { offset, record };
        let mut bytes = serde_json::to_vec(&line)?;
        bytes.push(b'\n');
        let needed = bytes.len() as u64;
        if let Some(quota) = self.options.quota_bytes {
            let remaining = quota.saturating_sub(inner.bytes);
            if needed > remaining {
                return Err(StoreError::StorageFull { needed, remaining });
            }
        }
        if let Some(file) = inner.file.as_mut() {
            file.write_all(&bytes)?;
            file.flush()?;
            if self.options.sync {
                file.sync_data()?;
            }
        }
        inner.bytes += needed;
        inner.next_offset += 1;
        inner.lines.push(line);
        Ok(offset)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_all(&self) -> Vec<LogLine> {
        self.inner.lock().unwrap().lines.clone()
    }

    pub fn read_from(&self, offset: u64) -> Result<Vec<LogLine>, StoreError> {
        let inner = self.inner.lock().unwrap();
        let start = (offset as usize).min(inner.lines.len());
        Ok(inner.lines[start..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Condition;
    use chrono::NaiveDate;

    fn rec(p: &str) -> Record {
        Record::SessionOpened {
            session_id: "s-1".into(),
            participant_id: p.into(),
            condition: Condition::RobotConversational,
            at: NaiveDate::from_ymd_opt(2024, 6, 3)
                .unwrap()
                .and_hms_opt(20, 0, 0)
                .unwrap(),
        }
    }

    #[test]
    fn offsets_increase_and_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::open(&path, LogOptions::default()).unwrap();
        let a = log.append(rec("R1")).unwrap();
        let b = log.append(rec("R2")).unwrap();
        assert!(a < b);
        drop(log);
        let log = EventLog::open(&path, LogOptions::default()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.append(rec("R3")).unwrap(), 2);
        assert_eq!(log.read_from(1).unwrap().len(), 2);
    }

    #[test]
    fn storage_full_keeps_prior_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let first_len = serde_json::to_vec(&LogLine {
            offset: 0,
            record: rec("R1"),
        })
        .unwrap()
        .len() as u64
            + 1;
        let opts = LogOptions {
            quota_bytes: Some(first_len + 10),
            sync: true,
        };
        let log = EventLog::open(&path, opts).unwrap();
        log.append(rec("R1")).unwrap();
        let err = log.append(rec("R2")).unwrap_err();
        assert_eq!(err.code(), "storage_full");
        drop(log);
        let log = EventLog::open(&path, opts).unwrap();
        assert_eq!(log.read_all().len(), 1);
        assert_eq!(log.read_all()[0].record, rec("R1"));
    }

    #[test]
    fn corrupt_line_is_detected_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::open(&path, LogOptions::default()).unwrap();
        log.append(rec("R1")).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{not json}\n").unwrap();
        drop(f);
        let err = EventLog::open(&path, LogOptions::default()).unwrap_err();
        assert!(
            matches!(err, StoreError::CorruptLog { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::open(&path, LogOptions::default()).unwrap();
        log.append(rec("R1")).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"offset\":1,\"ty").unwrap();
        drop(f);
        let log = EventLog::open(&path, LogOptions::default()).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.append(rec("R2")).unwrap(), 1);
        drop(log);
        assert_eq!(
            EventLog::open(&path, LogOptions::default()).unwrap().len(),
            2
        );
    }
}
