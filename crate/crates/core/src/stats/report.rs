use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{describe, tukey_hsd, tukey_hsd_raw, GroupSummary, StatsError, TukeyResult};

/// One measure's raw samples: `(measure, [(condition, values)])`.
pub type RawMeasure = (String, Vec<(String, Vec<f64>)>);

/// `**` for p < 0.05, `*` for p < 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub first: String,
    pub second: String,
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub stars: String,
}

impl From<&TukeyResult> for PairReport {
    fn from(t: &TukeyResult) -> Self {
        PairReport {
            first: t.pair.0.clone(),
            second: t.pair.1.clone(),
            diff: t.diff,
            q: t.q,
            p: t.p,
            stars: stars(t.p).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: String,
    pub groups: Vec<GroupSummary>,
    pub df: f64,
    pub pairs: Vec<PairReport>,
}

impl MeasureReport {
    fn new(measure: String, groups: Vec<GroupSummary>, results: &[TukeyResult]) -> Self {
        MeasureReport {
            measure,
            groups,
            df: results.first().map_or(0.0, |t| t.df),
            pairs: results.iter().map(PairReport::from).collect(),
        }
    }

    pub fn pair(&self, first: &str, second: &str) -> Option<&PairReport> {
        self.pairs
            .iter()
            .find(|p| p.first == first && p.second == second)
    }
}

/// Table-1-shaped report: descriptives per condition and Tukey pairs per measure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub measures: Vec<MeasureReport>,
}

impl StatsReport {
    pub fn from_summaries(rows: Vec<(String, Vec<GroupSummary>)>) -> Result<Self, StatsError> {
        let mut measures = Vec::with_capacity(rows.len());
        for (measure, groups) in rows {
            let results = tukey_hsd(&groups)?;
            measures.push(MeasureReport::new(measure, groups, &results));
        }
        Ok(StatsReport { measures })
    }

    pub fn from_raw(rows: Vec<RawMeasure>) -> Result<Self, StatsError> {
        let mut measures = Vec::with_capacity(rows.len());
        for (measure, samples) in rows {
            let results = tukey_hsd_raw(&samples)?;
            let groups = samples
                .iter()
                .map(|(l, xs)| describe(l.clone(), xs))
                .collect::<Result<Vec<_>, _>>()?;
            measures.push(MeasureReport::new(measure, groups, &results));
        }
        Ok(StatsReport { measures })
    }

    pub fn measure(&self, name: &str) -> Option<&MeasureReport> {
        self.measures.iter().find(|m| m.measure == name)
    }

    /// One row per measure. Every measure must share the first one's group labels.
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let Some(first) = self.measures.first() else {
            return Ok(String::new());
        };
        let labels: Vec<&str> = first.groups.iter().map(|g| g.label.as_str()).collect();
        let mut header = vec!["measure".to_string()];
        for l in &labels {
            header.push(format!("{l}_mean"));
            header.push(format!("{l}_sd"));
        }
        for p in &first.pairs {
            let tag = format!("{}-{}", p.first, p.second);
            header.push(format!("{tag}_diff"));
            header.push(format!("{tag}_p"));
            header.push(format!("{tag}_sig"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(csv_err)?;
        for m in &self.measures {
            let these: Vec<&str> = m.groups.iter().map(|g| g.label.as_str()).collect();
            if these != labels {
                return Err(StatsError::BadInput(format!(
                    "measure {} has groups {these:?}, expected {labels:?}",
                    m.measure
                )));
            }
            let mut row = vec![m.measure.clone()];
            for g in &m.groups {
                row.push(fmt_num(g.mean));
                row.push(fmt_num(g.sd));
            }
            for p in &m.pairs {
                row.push(fmt_num(p.diff));
                row.push(format!("{:.4}", p.p));
                row.push(p.stars.clone());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| StatsError::BadInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn csv_err(e: csv::Error) -> StatsError {
    StatsError::BadInput(e.to_string())
}

#[derive(Deserialize)]
struct SummaryRow {
    measure: String,
    condition: String,
    n: usize,
    mean: f64,
    sd: f64,
}

#[derive(Deserialize)]
struct RawRow {
    measure: String,
    condition: String,
    value: f64,
}

fn push_grouped<T>(out: &mut Vec<(String, Vec<T>)>, key: String, item: T) {
    match out.iter_mut().find(|(k, _)| *k == key) {
        Some((_, v)) => v.push(item),
        None => out.push((key, vec![item])),
    }
}

/// `measure,condition,n,mean,sd`; measures and conditions keep file order.
pub fn read_summaries_csv(r: impl Read) -> Result<Vec<(String, Vec<GroupSummary>)>, StatsError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize::<SummaryRow>() {
        let row = row.map_err(csv_err)?;
        let g = GroupSummary::new(row.condition, row.n, row.mean, row.sd);
        push_grouped(&mut out, row.measure, g);
    }
    if out.is_empty() {
        return Err(StatsError::BadInput("no summary rows".into()));
    }
    Ok(out)
}

/// Long format with columns `measure,condition,value` (extra columns such as
/// `participant_id` are ignored).
#[allow(clippy::type_complexity)]
pub fn read_raw_csv(r: impl Read) -> Result<Vec<RawMeasure>, StatsError> {
    let mut out: Vec<RawMeasure> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize::<RawRow>() {
        let row = row.map_err(csv_err)?;
        let slot = match out.iter().position(|(m, _)| *m == row.measure) {
            Some(i) => &mut out[i].1,
            None => {
                out.push((row.measure.clone(), Vec::new()));
                &mut out.last_mut().unwrap().1
            }
        };
        push_grouped(slot, row.condition, row.value);
    }
    if out.is_empty() {
        return Err(StatsError::BadInput("no sample rows".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUMMARIES: &str = "measure,condition,n,mean,sd
word_count,robot,8,286,166
word_count,audio,8,394,299
word_count,text,8,130,30.9
flow,robot,8,4.75,1.75
flow,audio,8,5.50,1.41
flow,text,8,6.50,0.76
";

    #[test]
    fn stars_thresholds() {
        assert_eq!(stars(0.008), "**");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.0999), "*");
        assert_eq!(stars(0.1), "");
    }

    #[test]
    fn summaries_round_trip_into_report() {
        let rows = read_summaries_csv(SUMMARIES.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].1[2].label, "text");
        let report = StatsReport::from_summaries(rows).unwrap();
        let wc = report.measure("word_count").unwrap();
        let at = wc.pair("audio", "text").unwrap();
        assert_eq!(at.diff, 264.0);
        assert_eq!(at.stars, "**");
        let csv = report.to_csv().unwrap();
        let mut lines = csv.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("measure,robot_mean,robot_sd"));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("word_count,286,166,394,299,130,30.9,-108,"));
        let json = serde_json::to_string(&report).unwrap();
        let back: StatsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn raw_long_format() {
        let csv = "measure,condition,participant_id,value
x,a,P1,1
x,a,P2,2
x,b,P3,3
x,b,P4,5
";
        let rows = read_raw_csv(csv.as_bytes()).unwrap();
        let report = StatsReport::from_raw(rows).unwrap();
        let m = report.measure("x").unwrap();
        assert_eq!(m.groups[1].mean, 4.0);
        assert_eq!(m.pairs[0].diff, -2.5);
        assert_eq!(m.df, 2.0);
    }

    #[test]
    fn bad_csv_is_reported() {
        let err = read_summaries_csv("measure,condition,n,mean,sd\nx,a,eight,1,1\n".as_bytes())
            .unwrap_err();
        assert_eq!(err.code(), "bad_input");
        assert!(read_summaries_csv("measure,condition,n,mean,sd\n".as_bytes()).is_err());
    }
}
