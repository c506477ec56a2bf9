use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CodeInstance, ContentError, Dimension};
use crate::stats::spearman;

/// Cohen's kappa of a square agreement table (rows: coder A, columns: coder B).
pub fn cohen_kappa(table: &[Vec<f64>]) -> Result<f64, ContentError> {
    let k = table.len();
    if k == 0 || table.iter().any(|r| r.len() != k) {
        return Err(ContentError::DegenerateMarginal);
    }
    let n: f64 = table.iter().flatten().sum();
    if n <= 0.0 {
        return Err(ContentError::NoOverlap);
    }
    let observed = (0..k).map(|i| table[i][i]).sum::<f64>() / n;
    let expected = (0..k)
        .map(|i| {
            let row: f64 = table[i].iter().sum();
            let col: f64 = table.iter().map(|r| r[i]).sum();
            row * col
        })
        .sum::<f64>()
        / (n * n);
    if (1.0 - expected).abs() < 1e-12 {
        return Err(ContentError::DegenerateMarginal);
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReliabilityMetric {
    CohenKappa,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub dimension: Dimension,
    pub metric: ReliabilityMetric,
    pub value: f64,
    /// Rated items: (entry, label) pairs for kappa, entries for Spearman.
    pub items: usize,
    /// Instances from both coders; the weight in the overall kappa.
    pub instances: usize,
}

/// Agreement between two coders on one dimension over a shared entry subset.
///
/// Categorical dimensions use kappa over per-entry presence of each label seen
/// by either coder; numerical ones use Spearman over per-entry counts.
pub fn inter_rater(
    coder_a: &[CodeInstance],
    coder_b: &[CodeInstance],
    dimension: Dimension,
    entry_ids: &[String],
) -> Result<Reliability, ContentError> {
    let entries: BTreeSet<&str> = entry_ids.iter().map(String::as_str).collect();
    if entries.is_empty() {
        return Err(ContentError::NoOverlap);
    }
    let pick = |xs: &'_ [CodeInstance]| -> Vec<CodeInstance> {
        xs.iter()
            .filter(|i| i.dimension == dimension && entries.contains(i.entry_id.as_str()))
            .cloned()
            .collect()
    };
    let (a, b) = (pick(coder_a), pick(coder_b));
    let instances = a.len() + b.len();

    if dimension.is_categorical() {
        let labels: BTreeSet<&str> = a.iter().chain(&b).map(|i| i.code_label.as_str()).collect();
        if labels.is_empty() {
            return Err(ContentError::DegenerateMarginal);
        }
        let has = |xs: &[CodeInstance], e: &str, l: &str| {
            xs.iter().any(|i| i.entry_id == e && i.code_label == l)
        };
        let mut table = vec![vec![0.0; 2]; 2];
        for e in &entries {
            for l in &labels {
                let ra = has(&a, e, l) as usize;
                let rb = has(&b, e, l) as usize;
                table[ra][rb] += 1.0;
            }
        }
        Ok(Reliability {
            dimension,
            metric: ReliabilityMetric::CohenKappa,
            value: cohen_kappa(&table)?,
            items: entries.len() * labels.len(),
            instances,
        })
    } else {
        let per_entry = |xs: &[CodeInstance]| -> Vec<f64> {
            entries
                .iter()
                .map(|e| xs.iter().filter(|i| i.entry_id == *e).count() as f64)
                .collect()
        };
        Ok(Reliability {
            dimension,
            metric: ReliabilityMetric::Spearman,
            value: spearman(&per_entry(&a), &per_entry(&b))?,
            items: entries.len(),
            instances,
        })
    }
}

/// Instance-weighted mean of the categorical kappas.
pub fn overall_kappa(results: &[Reliability]) -> Option<f64> {
    let kappas: Vec<&Reliability> = results
        .iter()
        .filter(|r| r.metric == ReliabilityMetric::CohenKappa)
        .collect();
    let weight: usize = kappas.iter().map(|r| r.instances).sum();
    (weight > 0).then(|| {
        kappas
            .iter()
            .map(|r| r.value * r.instances as f64)
            .sum::<f64>()
            / weight as f64
    })
}
