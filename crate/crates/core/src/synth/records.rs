//! Per-view prediction records from an external model.
//!
//! CSV header: `sample_id,label,view,p0,...,p{C-1}` with `view` one of `w`,
//! `s1`, `s2`, ...

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Label, ProbVector, SampleId};

/// Sums within this distance of 1 are renormalized; others are rejected.
pub const RECORD_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum View {
    Weak,
    /// 1-based strong view index.
    Strong(usize),
}

impl View {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "w" {
            return Ok(View::Weak);
        }
        s.strip_prefix('s')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(View::Strong)
            .ok_or_else(|| Error::input(format!("unknown view `{s}`")))
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            View::Weak => write!(f, "w"),
            View::Strong(j) => write!(f, "s{j}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: SampleId,
    pub label: Label,
    pub view: View,
    pub probs: ProbVector,
}

/// All views of one sample, grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleViews {
    pub id: SampleId,
    pub label: Label,
    pub weak: ProbVector,
    pub strong: Vec<ProbVector>,
}

fn parse_row(row: &csv::StringRecord, classes: usize, line: u64) -> Result<PredictionRecord> {
    let field = |i: usize| row.get(i).unwrap_or("").trim();
    let sample_id = field(0)
        .parse::<u64>()
        .map(SampleId)
        .map_err(|_| Error::input(format!("line {line}: bad sample_id `{}`", field(0))))?;
    let label = field(1)
        .parse::<u8>()
        .map_err(|_| Error::input(format!("line {line}: bad label `{}`", field(1))))
        .and_then(Label::from_value)?;
    let view = View::parse(field(2))?;
    let raw: Vec<f64> = (0..classes)
        .map(|c| {
            field(3 + c)
                .parse::<f64>()
                .ok()
                .filter(|p| p.is_finite() && *p >= 0.0)
                .ok_or_else(|| {
                    Error::input(format!("line {line}: bad probability `{}`", field(3 + c)))
                })
        })
        .collect::<Result<_>>()?;
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > RECORD_SUM_TOL {
        return Err(Error::ProbabilitySum {
            id: sample_id,
            view: view.to_string(),
            sum,
        });
    }
    let probs = ProbVector::new(raw.iter().map(|p| p / sum).collect())?;
    Ok(PredictionRecord {
        sample_id,
        label,
        view,
        probs,
    })
}

pub fn parse_prediction_records<R: std::io::Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 5 || cols[..3] != ["sample_id", "label", "view"] {
        return Err(Error::input(
            "record header must be sample_id,label,view,p0,...,p{C-1} with C >= 2",
        ));
    }
    let classes = cols.len() - 3;
    for (c, name) in cols[3..].iter().enumerate() {
        if *name != format!("p{c}") {
            return Err(Error::input(format!(
                "record column {} must be p{c}, found `{name}`",
                c + 3
            )));
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        out.push(parse_row(&row?, classes, i as u64 + 2)?);
    }
    records_by_sample(&out)?;
    Ok(out)
}

pub fn read_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prediction_records(file)
}

/// Groups records per sample, checking that every sample has a weak view,
/// contiguous strong views `s1..sn`, and the same `n` as every other sample.
pub fn records_by_sample(records: &[PredictionRecord]) -> Result<Vec<SampleViews>> {
    let mut grouped: BTreeMap<SampleId, (Label, BTreeMap<View, ProbVector>)> = BTreeMap::new();
    for r in records {
        let entry = grouped
            .entry(r.sample_id)
            .or_insert_with(|| (r.label, BTreeMap::new()));
        if entry.0 != r.label {
            return Err(Error::input(format!(
                "sample {} has conflicting labels",
                r.sample_id
            )));
        }
        if entry.1.insert(r.view, r.probs.clone()).is_some() {
            return Err(Error::input(format!(
                "sample {} repeats view {}",
                r.sample_id, r.view
            )));
        }
    }
    let mut expected: Option<usize> = None;
    let mut out = Vec::with_capacity(grouped.len());
    for (id, (label, mut views)) in grouped {
        let weak = views
            .remove(&View::Weak)
            .ok_or(Error::MissingWeakView(id))?;
        let n = views.len();
        let contiguous = views
            .keys()
            .enumerate()
            .all(|(i, v)| *v == View::Strong(i + 1));
        match expected {
            None => expected = Some(n),
            Some(e) if e != n => {
                return Err(Error::RaggedViews {
                    id,
                    expected: e,
                    found: n,
                })
            }
            _ => {}
        }
        if n == 0 || !contiguous {
            return Err(Error::RaggedViews {
                id,
                expected: expected.unwrap_or(n).max(1),
                found: n,
            });
        }
        let width = weak.len();
        if views.values().any(|p| p.len() != width) {
            return Err(Error::input(format!("sample {id} mixes class counts")));
        }
        out.push(SampleViews {
            id,
            label,
            weak,
            strong: views.into_values().collect(),
        });
    }
    Ok(out)
}
