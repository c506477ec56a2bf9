//! Questionnaire scoring, reliability, descriptives and Tukey HSD.

mod report;
mod srange;
mod tukey;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::QuestionnaireLayout;
use crate::store::QuestionnaireResponse;

pub use report::{
    read_raw_csv, read_summaries_csv, stars, MeasureReport, PairReport, RawMeasure, StatsReport,
};
pub use srange::{gauss_legendre, normal_range_cdf, studentized_range_cdf, studentized_range_sf};
pub use tukey::{tukey_hsd, tukey_hsd_raw, TukeyResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ranks are constant; correlation undefined")]
    DegenerateRanks,
    #[error("{instrument}: expected {expected} items, got {got}")]
    WrongItemCount {
        instrument: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{instrument}: item {index} = {value} outside [{min}, {max}]")]
    OutOfRangeItem {
        instrument: &'static str,
        index: usize,
        value: u8,
        min: u8,
        max: u8,
    },
    #[error("{instrument}: missing item {index}")]
    MissingItem {
        instrument: &'static str,
        index: usize,
    },
    #[error("total variance is zero")]
    DegenerateVariance,
    #[error("argument out of range: {0}")]
    ArgumentOutOfRange(String),
    #[error("summary path needs equal group sizes, got {0:?}")]
    UnequalNWithSummaries(Vec<usize>),
    #[error("bad input: {0}")]
    BadInput(String),
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            StatsError::TooFewSamples { .. } => "too_few_samples",
            StatsError::LengthMismatch(..) => "length_mismatch",
            StatsError::DegenerateRanks => "degenerate_ranks",
            StatsError::WrongItemCount { .. } => "wrong_item_count",
            StatsError::OutOfRangeItem { .. } => "out_of_range_item",
            StatsError::MissingItem { .. } => "missing_item",
            StatsError::DegenerateVariance => "degenerate_variance",
            StatsError::ArgumentOutOfRange(_) => "argument_out_of_range",
            StatsError::UnequalNWithSummaries(_) => "unequal_n_with_summaries",
            StatsError::BadInput(_) => "bad_input",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    pub fn new(label: impl Into<String>, n: usize, mean: f64, sd: f64) -> Self {
        GroupSummary {
            label: label.into(),
            n,
            mean,
            sd,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn describe(label: impl Into<String>, samples: &[f64]) -> Result<GroupSummary, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    Ok(GroupSummary::new(
        label,
        samples.len(),
        mean(samples),
        variance(samples).sqrt(),
    ))
}

fn check_range(instrument: &'static str, items: &[u8], max: u8) -> Result<(), StatsError> {
    match items.iter().position(|&v| !(1..=max).contains(&v)) {
        Some(index) => Err(StatsError::OutOfRangeItem {
            instrument,
            index,
            value: items[index],
            min: 1,
            max,
        }),
        None => Ok(()),
    }
}

/// Standard ten-item SUS scoring to 0–100.
pub fn sus_score(items: &[u8]) -> Result<f64, StatsError> {
    if items.len() != 10 {
        return Err(StatsError::WrongItemCount {
            instrument: "SUS",
            expected: 10,
            got: items.len(),
        });
    }
    check_range("SUS", items, 5)?;
    let raw: u32 = items
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            // Items 1, 3, 5, ... are positively worded.
            if i % 2 == 0 {
                v as u32 - 1
            } else {
                5 - v as u32
            }
        })
        .sum();
    Ok(raw as f64 * 2.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleScores {
    pub sus: f64,
    pub usefulness: f64,
    pub ease_of_use: f64,
    pub ease_of_learning: f64,
    pub satisfaction: f64,
    pub scope: f64,
    pub flow: f64,
    pub depth: f64,
}

fn item_mean(instrument: &'static str, items: &[u8], idx: &[usize]) -> Result<f64, StatsError> {
    if idx.is_empty() {
        return Err(StatsError::BadInput(format!(
            "{instrument}: no items declared"
        )));
    }
    let mut sum = 0.0;
    for &i in idx {
        let v = items.get(i).ok_or(StatsError::MissingItem {
            instrument,
            index: i,
        })?;
        sum += *v as f64;
    }
    Ok(sum / idx.len() as f64)
}

pub fn subscale_scores(
    q: &QuestionnaireResponse,
    layout: &QuestionnaireLayout,
) -> Result<ScaleScores, StatsError> {
    check_range("USE", &q.use_items, 7)?;
    check_range("breadth", &q.breadth_items, 7)?;
    check_range("depth", &q.depth_items, 7)?;
    if q.depth_items.len() < layout.depth_items {
        return Err(StatsError::MissingItem {
            instrument: "depth",
            index: q.depth_items.len(),
        });
    }
    let depth_idx: Vec<usize> = (0..layout.depth_items).collect();
    Ok(ScaleScores {
        sus: sus_score(&q.sus_items)?,
        usefulness: item_mean("USE", &q.use_items, &layout.usefulness)?,
        ease_of_use: item_mean("USE", &q.use_items, &layout.ease_of_use)?,
        ease_of_learning: item_mean("USE", &q.use_items, &layout.ease_of_learning)?,
        satisfaction: item_mean("USE", &q.use_items, &layout.satisfaction)?,
        scope: item_mean("breadth", &q.breadth_items, &[layout.scope_item])?,
        flow: item_mean("breadth", &q.breadth_items, &[layout.flow_item])?,
        depth: item_mean("depth", &q.depth_items, &depth_idx)?,
    })
}

/// Cronbach's alpha of a respondent × item matrix.
pub fn cronbach_alpha(matrix: &[Vec<f64>]) -> Result<f64, StatsError> {
    let n = matrix.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let k = matrix[0].len();
    if k < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: k });
    }
    if let Some(row) = matrix.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(k, row.len()));
    }
    let item_var: f64 = (0..k)
        .map(|j| variance(&matrix.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum();
    let totals: Vec<f64> = matrix.iter().map(|r| r.iter().sum()).collect();
    let total_var = variance(&totals);
    if total_var <= 1e-12 * (1.0 + item_var) {
        return Err(StatsError::DegenerateVariance);
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateRanks);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
