//! `diary` — run the service, simulate a study, and analyze its data.
//!
//! Output goes to stdout as JSON or CSV. Errors go to stderr as a JSON error
//! body; usage errors exit 2, data errors exit 1.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use diary_core::analysis::machine_code;
use diary_core::compliance::records_to_csv;
use diary_core::content::{counts_to_csv, participant_content, ParticipantContent};
use diary_core::simulate::SimulationOptions;
use diary_core::stats::{read_raw_csv, read_summaries_csv};
use diary_core::synthetic::{bundled_script, BUNDLED_SEED};
use diary_core::{
    simulate, Codebook, DiaryEntry, Gateway, LogOptions, RecordingNotifier, SimulationScript,
    StatsReport, StudyConfig, StudyDb, StudyService,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "diary", version, about = "Diary-study engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        /// Server config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Run a scripted study on a compressed clock and print the report.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        /// Overrides the script's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Persist the event log here instead of keeping it in memory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Virtual seconds per real second; unthrottled when omitted.
        #[arg(long)]
        compression: Option<f64>,
    },
    /// Machine-code diary entries and print per-participant counts.
    Analyze {
        /// Entries as a JSON array or JSON lines.
        #[arg(long)]
        entries: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Descriptives and Tukey HSD per measure.
    Stats {
        /// CSV with measure,condition,n,mean,sd.
        #[arg(long, conflicts_with = "raw", required_unless_present = "raw")]
        summaries: Option<PathBuf>,
        /// CSV with measure,condition,value.
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Compliance classification of a persisted study.
    Compliance {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Write the bundled synthetic study script.
    GenScript {
        #[arg(long, default_value_t = BUNDLED_SEED)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize)]
struct CliError {
    code: String,
    message: String,
}

impl CliError {
    fn new(code: &str, message: impl std::fmt::Display) -> Self {
        CliError {
            code: code.to_string(),
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::new("io_error", format!("{}: {e}", path.display()))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::new("serialization_error", e))?;
    emit(&(text + "\n"))
}

fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::new("io_error", e))
}

fn parse_entries(text: &str) -> Result<Vec<DiaryEntry>, CliError> {
    let bad = |e: serde_json::Error| CliError::new("bad_entries", e);
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(bad);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(bad))
        .collect()
}

/// Per-participant table plus an `all` row of column sums (uniques are summed
/// per participant, not deduplicated). The `all` row is zero for no entries.
fn counts_with_total(rows: &[ParticipantContent], entries: &[DiaryEntry]) -> String {
    let mut out = counts_to_csv(rows);
    let n = entries.len();
    let words: usize = entries.iter().map(|e| e.word_count).sum();
    let mean = if n == 0 { 0.0 } else { words as f64 / n as f64 };
    let mut total = vec![
        "all".to_string(),
        "all".into(),
        n.to_string(),
        format!("{mean:.2}"),
    ];
    for d in diary_core::content::Dimension::ALL {
        let (t, u) = rows.iter().fold((0, 0), |(t, u), r| {
            let c = r.counts.get(d);
            (t + c.total, u + c.unique)
        });
        total.push(t.to_string());
        total.push(u.to_string());
    }
    total.push(
        rows.iter()
            .map(|r| r.overall_information)
            .sum::<u64>()
            .to_string(),
    );
    out.push_str(&total.join(","));
    out.push('\n');
    out
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Serve { config, addr } => {
            let cfg = diary_server::load_config(config.as_deref())
                .map_err(|e| CliError::new("bad_config", e))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io_error", e))?;
            rt.block_on(diary_server::serve(cfg, addr))
                .map_err(|e| CliError::new("serve_failed", e))
        }
        Command::Simulate {
            script,
            seed,
            out,
            compression,
        } => {
            let text = read(&script)?;
            let script: SimulationScript =
                serde_json::from_str(&text).map_err(|e| CliError::new("script_invalid", e))?;
            let config = script.study_config();
            let db = match out {
                Some(dir) => StudyDb::open(&dir, config, LogOptions::default())
                    .map_err(|e| CliError::new(e.code(), e))?,
                None => StudyDb::in_memory(config),
            };
            let options = SimulationOptions { seed, compression };
            let (_, report) =
                simulate(&script, options, db).map_err(|e| CliError::new(e.code(), e))?;
            print_json(&report)
        }
        Command::Analyze {
            entries,
            codebook,
            format,
        } => {
            let entries = parse_entries(&read(&entries)?)?;
            let codebook = match codebook {
                Some(p) => {
                    Codebook::from_json(&read(&p)?).map_err(|e| CliError::new(e.code(), e))?
                }
                None => Codebook::bundled(),
            };
            let instances =
                machine_code(&entries, &codebook).map_err(|e| CliError::new(e.code(), e))?;
            let rows = participant_content(&entries, &instances)
                .map_err(|e| CliError::new(e.code(), e))?;
            match format {
                Format::Csv => emit(&counts_with_total(&rows, &entries)),
                Format::Json => print_json(&rows),
            }
        }
        Command::Stats {
            summaries,
            raw,
            format,
        } => {
            let report = match (summaries, raw) {
                (Some(p), _) => {
                    let rows = read_summaries_csv(read(&p)?.as_bytes())
                        .map_err(|e| CliError::new(e.code(), e))?;
                    StatsReport::from_summaries(rows)
                }
                (None, Some(p)) => {
                    let rows = read_raw_csv(read(&p)?.as_bytes())
                        .map_err(|e| CliError::new(e.code(), e))?;
                    StatsReport::from_raw(rows)
                }
                (None, None) => unreachable!("clap requires one input"),
            }
            .map_err(|e| CliError::new(e.code(), e))?;
            match format {
                Format::Json => print_json(&report),
                Format::Csv => emit(&report.to_csv().map_err(|e| CliError::new(e.code(), e))?),
            }
        }
        Command::Compliance { study, format } => {
            if !study.join(StudyDb::LOG_FILE).exists() {
                return Err(CliError::new(
                    "unknown_study",
                    format!("no event log in {}", study.display()),
                ));
            }
            let db = StudyDb::open(&study, StudyConfig::default(), LogOptions::default())
                .map_err(|e| CliError::new(e.code(), e))?;
            let service = StudyService::new(
                db,
                Arc::new(Gateway::default()),
                Arc::new(RecordingNotifier::new()),
            );
            let report = service.compliance();
            match format {
                Format::Json => print_json(&report),
                Format::Csv => emit(&records_to_csv(&report.records)),
            }
        }
        Command::GenScript { seed, out } => {
            let text = serde_json::to_string_pretty(&bundled_script(seed))
                .map_err(|e| CliError::new("serialization_error", e))?
                + "\n";
            match out {
                Some(p) => fs::write(&p, text).map_err(|e| CliError::io(&p, e)),
                None => emit(&text),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENTRY: &str = r#"{"id":"e1","participant_id":"P1","condition":"text-form","study_day":1,"channel":"text-form","responses":[{"question_id":1,"segments":["bath then story"]}],"created_at":"2024-06-03T20:00:00","word_count":3}"#;

    #[test]
    fn entries_parse_as_array_or_lines() {
        let array = parse_entries(&format!("[{ENTRY}, {ENTRY}]")).unwrap();
        let lines = parse_entries(&format!("{ENTRY}\n\n{ENTRY}\n")).unwrap();
        assert_eq!(array.len(), 2);
        assert_eq!(lines.len(), 2);
        assert!(parse_entries("").unwrap().is_empty());
        assert_eq!(parse_entries("[{]").unwrap_err().code, "bad_entries");
    }

    #[test]
    fn total_row_sums_participants() {
        let entries = parse_entries(&format!("{ENTRY}\n{ENTRY}")).unwrap();
        let codebook = Codebook::bundled();
        let instances = machine_code(&entries, &codebook).unwrap();
        let rows = participant_content(&entries, &instances).unwrap();
        let csv = counts_with_total(&rows, &entries);
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("all,all,2,3.00,"), "{last}");
        let overall: u64 = last.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(
            overall,
            rows.iter().map(|r| r.overall_information).sum::<u64>()
        );
    }
}
