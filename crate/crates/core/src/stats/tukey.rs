use serde::{Deserialize, Serialize};

use super::{describe, srange::studentized_range_sf, GroupSummary, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult {
    pub pair: (String, String),
    /// mean(first) - mean(second)
    pub diff: f64,
    /// Infinite when the error variance is zero and the means differ.
    pub q: f64,
    pub p: f64,
    pub df: f64,
    pub k: usize,
}

fn check_groups(groups: &[GroupSummary]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: groups.len(),
        });
    }
    for g in groups {
        if g.n < 2 {
            return Err(StatsError::TooFewSamples {
                needed: 2,
                got: g.n,
            });
        }
        if g.sd.is_nan() || g.sd < 0.0 || !g.mean.is_finite() || !g.sd.is_finite() {
            return Err(StatsError::BadInput(format!(
                "group {}: mean {} sd {}",
                g.label, g.mean, g.sd
            )));
        }
    }
    Ok(())
}

/// All pairs (i < j) in input order.
fn pairs(
    groups: &[GroupSummary],
    mse: f64,
    df: f64,
    se: impl Fn(&GroupSummary, &GroupSummary) -> f64,
) -> Result<Vec<TukeyResult>, StatsError> {
    let k = groups.len();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&groups[i], &groups[j]);
            let diff = a.mean - b.mean;
            let (q, p) = if mse <= 0.0 {
                // Zero error variance: any difference is certain.
                if diff == 0.0 {
                    (0.0, 1.0)
                } else {
                    (f64::INFINITY, 0.0)
                }
            } else {
                let q = diff.abs() / se(a, b);
                (q, studentized_range_sf(q, k as u32, df)?)
            };
            out.push(TukeyResult {
                pair: (a.label.clone(), b.label.clone()),
                diff,
                q,
                p,
                df,
                k,
            });
        }
    }
    Ok(out)
}

/// Tukey HSD from equal-n group summaries; MSE is the mean of the group variances.
pub fn tukey_hsd(groups: &[GroupSummary]) -> Result<Vec<TukeyResult>, StatsError> {
    check_groups(groups)?;
    let n = groups[0].n;
    if groups.iter().any(|g| g.n != n) {
        return Err(StatsError::UnequalNWithSummaries(
            groups.iter().map(|g| g.n).collect(),
        ));
    }
    let k = groups.len();
    let mse = groups.iter().map(|g| g.sd * g.sd).sum::<f64>() / k as f64;
    let df = (k * (n - 1)) as f64;
    pairs(groups, mse, df, |_, _| (mse / n as f64).sqrt())
}

/// Tukey HSD (Tukey–Kramer for unequal n) from raw per-group samples.
pub fn tukey_hsd_raw(groups: &[(String, Vec<f64>)]) -> Result<Vec<TukeyResult>, StatsError> {
    let summaries = groups
        .iter()
        .map(|(label, xs)| describe(label.clone(), xs))
        .collect::<Result<Vec<_>, _>>()?;
    check_groups(&summaries)?;
    let total: usize = summaries.iter().map(|g| g.n).sum();
    let k = summaries.len();
    let sse: f64 = summaries
        .iter()
        .map(|g| (g.n as f64 - 1.0) * g.sd * g.sd)
        .sum();
    let df = (total - k) as f64;
    let mse = sse / df;
    pairs(&summaries, mse, df, |a, b| {
        (mse / 2.0 * (1.0 / a.n as f64 + 1.0 / b.n as f64)).sqrt()
    })
}
