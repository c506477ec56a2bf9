//! Study-level analysis over the store: per-participant measures and the
//! Table-1-shaped statistics report computed from raw participant values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Condition;
use crate::content::{
    participant_content, CodeInstance, Codebook, Coder, ContentError, Dimension, ParticipantContent,
};
use crate::stats::{subscale_scores, StatsError, StatsReport};
use crate::store::{DiaryEntry, Store};

/// Measures in report order. The first eight are the headline table rows.
pub const MEASURES: [&str; 12] = [
    "word_count",
    "total_bedtime_activities",
    "unique_bedtime_activities",
    "overall_information",
    "sus",
    "scope",
    "flow",
    "depth",
    "usefulness",
    "ease_of_use",
    "ease_of_learning",
    "satisfaction",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("unknown measure {0}")]
    UnknownMeasure(String),
    #[error("measure {0} needs at least two conditions with two participants each")]
    InsufficientData(String),
    #[error(transparent)]
    Content(#[from] ContentError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::UnknownMeasure(_) => "unknown_measure",
            AnalysisError::InsufficientData(_) => "insufficient_data",
            AnalysisError::Content(e) => e.code(),
            AnalysisError::Stats(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWordCount {
    pub participant_id: String,
    pub condition: Condition,
    pub study_day: u32,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMeasures {
    pub participant_id: String,
    pub condition: Condition,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub codebook_version: String,
    pub entries: usize,
    /// Per participant and night, in store order.
    pub word_counts: Vec<NightWordCount>,
    pub content: Vec<ParticipantContent>,
    pub measures: Vec<ParticipantMeasures>,
}

/// Machine-code every entry.
pub fn machine_code(
    entries: &[DiaryEntry],
    codebook: &Codebook,
) -> Result<Vec<CodeInstance>, ContentError> {
    let coder = Coder::new(codebook)?;
    Ok(entries.iter().flat_map(|e| coder.code_entry(e)).collect())
}

pub fn participant_measures(
    store: &Store,
    content: &[ParticipantContent],
) -> Result<Vec<ParticipantMeasures>, AnalysisError> {
    let mut out: BTreeMap<String, ParticipantMeasures> = store
        .participants()
        .into_iter()
        .map(|(id, condition)| {
            let m = ParticipantMeasures {
                participant_id: id.clone(),
                condition,
                values: BTreeMap::new(),
            };
            (id, m)
        })
        .collect();
    for c in content {
        let Some(m) = out.get_mut(&c.participant_id) else {
            continue;
        };
        let bedtime = c.counts.get(Dimension::BedtimeActivities);
        m.values.insert("word_count".into(), c.mean_word_count);
        m.values
            .insert("total_bedtime_activities".into(), bedtime.total as f64);
        m.values
            .insert("unique_bedtime_activities".into(), bedtime.unique as f64);
        m.values
            .insert("overall_information".into(), c.overall_information as f64);
    }
    let layout = &store.config.questionnaire;
    for q in store.questionnaires() {
        let Some(m) = out.get_mut(&q.participant_id) else {
            continue;
        };
        let s = subscale_scores(q, layout)?;
        for (name, v) in [
            ("sus", s.sus),
            ("scope", s.scope),
            ("flow", s.flow),
            ("depth", s.depth),
            ("usefulness", s.usefulness),
            ("ease_of_use", s.ease_of_use),
            ("ease_of_learning", s.ease_of_learning),
            ("satisfaction", s.satisfaction),
        ] {
            m.values.insert(name.into(), v);
        }
    }
    Ok(out.into_values().collect())
}

pub fn summarize(store: &Store, codebook: &Codebook) -> Result<AnalysisSummary, AnalysisError> {
    let entries = store.entries();
    let instances = machine_code(entries, codebook)?;
    let content = participant_content(entries, &instances)?;
    let measures = participant_measures(store, &content)?;
    Ok(AnalysisSummary {
        codebook_version: codebook.version.clone(),
        entries: entries.len(),
        word_counts: entries
            .iter()
            .map(|e| NightWordCount {
                participant_id: e.participant_id.clone(),
                condition: e.condition,
                study_day: e.study_day,
                word_count: e.word_count,
            })
            .collect(),
        content,
        measures,
    })
}

/// Per-condition samples of one measure, conditions in canonical order, each with ≥ 2 values.
fn samples(measures: &[ParticipantMeasures], measure: &str) -> Vec<(String, Vec<f64>)> {
    Condition::ALL
        .iter()
        .map(|c| {
            let xs: Vec<f64> = measures
                .iter()
                .filter(|m| m.condition == *c)
                .filter_map(|m| m.values.get(measure).copied())
                .collect();
            (c.label().to_string(), xs)
        })
        .filter(|(_, xs)| xs.len() >= 2)
        .collect()
}

/// Descriptives and Tukey HSD per measure from participant-level values.
///
/// With `measure = None` every measure with enough data is reported; naming a
/// measure that lacks data is an error.
pub fn study_stats(
    summary: &AnalysisSummary,
    measure: Option<&str>,
) -> Result<StatsReport, AnalysisError> {
    let wanted: Vec<&str> = match measure {
        Some(m) if MEASURES.contains(&m) => vec![m],
        Some(m) => return Err(AnalysisError::UnknownMeasure(m.to_string())),
        None => MEASURES.to_vec(),
    };
    let mut rows = Vec::new();
    for m in wanted {
        let s = samples(&summary.measures, m);
        if s.len() < 2 {
            if measure.is_some() {
                return Err(AnalysisError::InsufficientData(m.to_string()));
            }
            continue;
        }
        rows.push((m.to_string(), s));
    }
    Ok(StatsReport::from_raw(rows)?)
}
