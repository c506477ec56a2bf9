//! Codebook coding of diary entries, per-dimension counts, and inter-rater reliability.

mod irr;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Condition;
use crate::stats::StatsError;
use crate::store::DiaryEntry;

pub use irr::{cohen_kappa, inter_rater, overall_kappa, Reliability, ReliabilityMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    FeelingsThoughts,
    BedtimeActivities,
    OtherActivities,
    ChildRemark,
    OtherDetails,
    ReasonsGiven,
    TimingsGiven,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::FeelingsThoughts,
        Dimension::BedtimeActivities,
        Dimension::OtherActivities,
        Dimension::ChildRemark,
        Dimension::OtherDetails,
        Dimension::ReasonsGiven,
        Dimension::TimingsGiven,
    ];

    pub fn is_categorical(self) -> bool {
        !matches!(self, Dimension::ReasonsGiven | Dimension::TimingsGiven)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::FeelingsThoughts => "feelings-thoughts",
            Dimension::BedtimeActivities => "bedtime-activities",
            Dimension::OtherActivities => "other-activities",
            Dimension::ChildRemark => "child-remark",
            Dimension::OtherDetails => "other-details",
            Dimension::ReasonsGiven => "reasons-given",
            Dimension::TimingsGiven => "timings-given",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContentError {
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("instances from more than one coder: {0:?}")]
    MixedCoders(Vec<String>),
    #[error("instance refers to unknown entry {0}")]
    UnknownEntry(String),
    #[error("coders share no entries")]
    NoOverlap,
    #[error("every item has the same label; kappa is undefined")]
    DegenerateMarginal,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("annotation line {line}: {message}")]
    BadAnnotation { line: usize, message: String },
}

impl ContentError {
    pub fn code(&self) -> &'static str {
        match self {
            ContentError::InvalidCodebook(_) => "invalid_codebook",
            ContentError::MixedCoders(_) => "mixed_coders",
            ContentError::UnknownEntry(_) => "unknown_entry",
            ContentError::NoOverlap => "no_overlap",
            ContentError::DegenerateMarginal => "degenerate_marginal",
            ContentError::Stats(e) => e.code(),
            ContentError::BadAnnotation { .. } => "bad_annotation",
        }
    }
}

/// Labels and their matcher phrases for the categorical dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: String,
    pub dimensions: BTreeMap<Dimension, BTreeMap<String, Vec<String>>>,
}

const BUNDLED_CODEBOOK: &str = include_str!("../../../../fixtures/codebook.json");

impl Codebook {
    /// The bedtime-routine codebook shipped with the crate.
    pub fn bundled() -> Codebook {
        serde_json::from_str(BUNDLED_CODEBOOK).expect("bundled codebook parses")
    }

    pub fn from_json(text: &str) -> Result<Codebook, ContentError> {
        let cb: Codebook =
            serde_json::from_str(text).map_err(|e| ContentError::InvalidCodebook(e.to_string()))?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<(), ContentError> {
        for (dim, labels) in &self.dimensions {
            if !dim.is_categorical() {
                return Err(ContentError::InvalidCodebook(format!(
                    "{} is numerical and is matched by built-in rules",
                    dim.as_str()
                )));
            }
            for (label, phrases) in labels {
                if label.trim().is_empty() {
                    return Err(ContentError::InvalidCodebook(format!(
                        "empty label in {}",
                        dim.as_str()
                    )));
                }
                if phrases.is_empty() || phrases.iter().any(|p| p.trim().is_empty()) {
                    return Err(ContentError::InvalidCodebook(format!(
                        "label {label:?} in {} needs non-empty phrases",
                        dim.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self, dim: Dimension) -> impl Iterator<Item = &str> {
        self.dimensions
            .get(&dim)
            .into_iter()
            .flat_map(|m| m.keys().map(String::as_str))
    }
}

/// Byte range into the entry text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodeInstance {
    pub entry_id: String,
    pub dimension: Dimension,
    pub code_label: String,
    pub span: Span,
    pub coder_id: String,
}

pub const MACHINE_CODER: &str = "machine";
pub const TIMING_LABEL: &str = "timing";
pub const REASON_LABEL: &str = "reason";

const NUMBER_WORDS: &str = "an?|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|\
fifteen|twenty|thirty|forty|forty-five|fifty|sixty|half an?|a few|a couple of";

fn timing_regex() -> Regex {
    let pattern = format!(
        r"\b(?:\d{{1,2}}(?::\d{{2}})?\s?(?:a\.m\.|p\.m\.|am\b|pm\b)|\d{{1,2}}:\d{{2}}\b|(?:\d+(?:\.\d+)?|{NUMBER_WORDS})\s?(?:minutes?|mins?|hours?|hrs?|seconds?)\b|(?:one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve)\s+o'clock\b)"
    );
    RegexBuilder::new(&pattern)
        .case_insensitive(true)
        .build()
        .expect("timing pattern compiles")
}

fn reason_regex() -> Regex {
    RegexBuilder::new(
        r"\b(?:because|so that|since|due to|in order to|that's why|which is why|as a result)\b",
    )
    .case_insensitive(true)
    .build()
    .expect("reason pattern compiles")
}

/// A codebook compiled to matchers; reuse it across entries.
#[derive(Debug, Clone)]
pub struct Coder {
    categorical: Vec<(Dimension, Vec<(String, Regex)>)>,
    timing: Regex,
    reason: Regex,
    coder_id: String,
}

impl Coder {
    pub fn new(codebook: &Codebook) -> Result<Coder, ContentError> {
        codebook.validate()?;
        let mut categorical = Vec::new();
        for (dim, labels) in &codebook.dimensions {
            let mut compiled = Vec::new();
            for (label, phrases) in labels {
                let mut phrases: Vec<&String> = phrases.iter().collect();
                // Longest first so the alternation prefers the fullest phrase.
                phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
                let alt: Vec<String> = phrases
                    .iter()
                    .map(|p| regex::escape(p.trim()).replace(' ', r"\s+"))
                    .collect();
                let re = RegexBuilder::new(&format!(r"\b(?:{})\b", alt.join("|")))
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| ContentError::InvalidCodebook(e.to_string()))?;
                compiled.push((label.clone(), re));
            }
            categorical.push((*dim, compiled));
        }
        Ok(Coder {
            categorical,
            timing: timing_regex(),
            reason: reason_regex(),
            coder_id: MACHINE_CODER.to_string(),
        })
    }

    pub fn with_coder_id(mut self, id: impl Into<String>) -> Self {
        self.coder_id = id.into();
        self
    }

    pub fn code_text(&self, entry_id: &str, text: &str) -> Vec<CodeInstance> {
        let mut out = Vec::new();
        let mut emit = |dimension, label: &str, start, end| {
            out.push(CodeInstance {
                entry_id: entry_id.to_string(),
                dimension,
                code_label: label.to_string(),
                span: Span { start, end },
                coder_id: self.coder_id.clone(),
            })
        };
        for (dim, labels) in &self.categorical {
            let mut hits: Vec<(usize, usize, &str)> = labels
                .iter()
                .flat_map(|(label, re)| {
                    re.find_iter(text)
                        .map(move |m| (m.start(), m.end(), label.as_str()))
                })
                .collect();
            // Leftmost, then longest, then label order; drop anything overlapping a kept hit.
            hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
            let mut last_end = 0;
            for (start, end, label) in hits {
                if start >= last_end {
                    emit(*dim, label, start, end);
                    last_end = end;
                }
            }
        }
        for m in self.reason.find_iter(text) {
            emit(Dimension::ReasonsGiven, REASON_LABEL, m.start(), m.end());
        }
        for m in self.timing.find_iter(text) {
            emit(Dimension::TimingsGiven, TIMING_LABEL, m.start(), m.end());
        }
        out
    }

    pub fn code_entry(&self, entry: &DiaryEntry) -> Vec<CodeInstance> {
        self.code_text(&entry.id, &entry.text())
    }
}

/// Machine-code one entry.
pub fn apply_codebook(
    entry: &DiaryEntry,
    codebook: &Codebook,
) -> Result<Vec<CodeInstance>, ContentError> {
    Ok(Coder::new(codebook)?.code_entry(entry))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub total: u64,
    pub unique: u64,
}

/// Counts for all seven dimensions (zeros included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionCounts(pub BTreeMap<Dimension, Count>);

impl Default for DimensionCounts {
    fn default() -> Self {
        DimensionCounts(
            Dimension::ALL
                .iter()
                .map(|d| (*d, Count::default()))
                .collect(),
        )
    }
}

impl DimensionCounts {
    pub fn get(&self, d: Dimension) -> Count {
        self.0.get(&d).copied().unwrap_or_default()
    }
}

fn single_coder<'a>(
    instances: impl IntoIterator<Item = &'a CodeInstance>,
) -> Result<(), ContentError> {
    let coders: BTreeSet<&str> = instances.into_iter().map(|i| i.coder_id.as_str()).collect();
    if coders.len() > 1 {
        return Err(ContentError::MixedCoders(
            coders.into_iter().map(str::to_string).collect(),
        ));
    }
    Ok(())
}

/// Total and unique counts per dimension over `instances`, which must share a coder.
///
/// Numerical dimensions count occurrences, so their unique count equals the total.
pub fn counts(instances: &[CodeInstance]) -> Result<DimensionCounts, ContentError> {
    single_coder(instances)?;
    let mut out = DimensionCounts::default();
    for dim in Dimension::ALL {
        let of_dim: Vec<&CodeInstance> = instances.iter().filter(|i| i.dimension == dim).collect();
        let total = of_dim.len() as u64;
        let unique = if dim.is_categorical() {
            of_dim
                .iter()
                .map(|i| i.code_label.as_str())
                .collect::<BTreeSet<_>>()
                .len() as u64
        } else {
            total
        };
        out.0.insert(dim, Count { total, unique });
    }
    Ok(out)
}

/// Sum of unique counts over the seven dimensions.
pub fn overall_information(counts: &DimensionCounts) -> u64 {
    Dimension::ALL.iter().map(|d| counts.get(*d).unique).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantContent {
    pub participant_id: String,
    pub condition: Condition,
    pub entries: usize,
    pub mean_word_count: f64,
    pub counts: DimensionCounts,
    pub overall_information: u64,
}

/// Aggregate per participant: counts summed over their entries, uniques across them.
pub fn participant_content(
    entries: &[DiaryEntry],
    instances: &[CodeInstance],
) -> Result<Vec<ParticipantContent>, ContentError> {
    single_coder(instances)?;
    let owner: BTreeMap<&str, &str> = entries
        .iter()
        .map(|e| (e.id.as_str(), e.participant_id.as_str()))
        .collect();
    let mut by_participant: BTreeMap<&str, Vec<CodeInstance>> = BTreeMap::new();
    for i in instances {
        let p = owner
            .get(i.entry_id.as_str())
            .ok_or_else(|| ContentError::UnknownEntry(i.entry_id.clone()))?;
        by_participant.entry(p).or_default().push(i.clone());
    }
    let mut meta: BTreeMap<&str, (Condition, usize, usize)> = BTreeMap::new();
    for e in entries {
        let m = meta
            .entry(e.participant_id.as_str())
            .or_insert((e.condition, 0, 0));
        m.1 += 1;
        m.2 += e.word_count;
    }
    meta.into_iter()
        .map(|(p, (condition, n, words))| {
            let c = counts(by_participant.get(p).map(Vec::as_slice).unwrap_or(&[]))?;
            Ok(ParticipantContent {
                participant_id: p.to_string(),
                condition,
                entries: n,
                mean_word_count: words as f64 / n as f64,
                overall_information: overall_information(&c),
                counts: c,
            })
        })
        .collect()
}

/// Wide counts table: one row per participant.
pub fn counts_to_csv(rows: &[ParticipantContent]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "participant_id".to_string(),
        "condition".into(),
        "entries".into(),
        "mean_word_count".into(),
    ];
    for d in Dimension::ALL {
        header.push(format!("{}_total", d.as_str()));
        header.push(format!("{}_unique", d.as_str()));
    }
    header.push("overall_information".into());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut row = vec![
            r.participant_id.clone(),
            r.condition.label().to_string(),
            r.entries.to_string(),
            format!("{:.2}", r.mean_word_count),
        ];
        for d in Dimension::ALL {
            let c = r.counts.get(d);
            row.push(c.total.to_string());
            row.push(c.unique.to_string());
        }
        row.push(r.overall_information.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn annotations_to_jsonl(instances: &[CodeInstance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(i).expect("instances serialize") + "\n")
        .collect()
}

/// Read annotations, checking spans against the entry texts when entries are given.
pub fn read_annotations<R: BufRead>(
    input: R,
    entries: Option<&[DiaryEntry]>,
) -> Result<Vec<CodeInstance>, ContentError> {
    let lengths: Option<BTreeMap<&str, usize>> =
        entries.map(|es| es.iter().map(|e| (e.id.as_str(), e.text().len())).collect());
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let bad = |message: String| ContentError::BadAnnotation {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: CodeInstance = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if inst.span.start > inst.span.end {
            return Err(bad("span start after end".into()));
        }
        if let Some(lengths) = &lengths {
            let len = lengths
                .get(inst.entry_id.as_str())
                .ok_or_else(|| ContentError::UnknownEntry(inst.entry_id.clone()))?;
            if inst.span.end > *len {
                return Err(bad(format!(
                    "span end {} beyond text length {len}",
                    inst.span.end
                )));
            }
        }
        out.push(inst);
    }
    Ok(out)
}
