//! Per-epoch confident-set selection.
//!
//! Five strategies produce a candidate split of the training ids into a
//! high-confidence and a low-confidence set; [`apply_consecutive_clean`] then
//! demotes high samples that were not predicted correctly in each of the last
//! `t` epochs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, SampleId};
use crate::uncertainty::rank_by_uncertainty;

/// Width of the uncertainty intervals scanned by the dynamic threshold.
pub const INTERVAL_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSplit {
    pub high: BTreeSet<SampleId>,
    pub low: BTreeSet<SampleId>,
    pub epoch: usize,
    pub threshold: Option<f64>,
}

impl ConfidenceSplit {
    pub fn len(&self) -> usize {
        self.high.len() + self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_partition_of(&self, ids: &BTreeSet<SampleId>) -> bool {
        self.high.is_disjoint(&self.low)
            && self.high.union(&self.low).copied().collect::<BTreeSet<_>>() == *ids
    }
}

/// Low:high proportion for the fixed-ratio strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ratio {
    /// One third low.
    OneToTwo,
    /// Two thirds low.
    TwoToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodC {
    #[serde(rename = "ratio_1_2")]
    Ratio1To2,
    #[serde(rename = "ratio_2_1")]
    Ratio2To1,
    DynamicThreshold,
    ConsistentLabeling,
    AtLeastOneMatch,
}

impl MethodC {
    pub const ALL: [MethodC; 5] = [
        MethodC::Ratio1To2,
        MethodC::Ratio2To1,
        MethodC::DynamicThreshold,
        MethodC::ConsistentLabeling,
        MethodC::AtLeastOneMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodC::Ratio1To2 => "ratio_1_2",
            MethodC::Ratio2To1 => "ratio_2_1",
            MethodC::DynamicThreshold => "dynamic_threshold",
            MethodC::ConsistentLabeling => "consistent_labeling",
            MethodC::AtLeastOneMatch => "at_least_one_match",
        }
    }
}

impl fmt::Display for MethodC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodC {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodC::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown selection method `{s}`")))
    }
}

fn check_unique(scores: &[(SampleId, f64)]) -> Result<BTreeSet<SampleId>> {
    let mut ids = BTreeSet::new();
    for (id, s) in scores {
        if !ids.insert(*id) {
            return Err(Error::DuplicateId(*id));
        }
        if !s.is_finite() {
            return Err(Error::input(format!("non-finite score for sample {id}")));
        }
    }
    Ok(ids)
}

/// Number of low-confidence samples for `n` items: `ceil(n * r_low)`.
pub fn ratio_low_count(n: usize, ratio: Ratio) -> usize {
    let k = match ratio {
        Ratio::OneToTwo => 1,
        Ratio::TwoToOne => 2,
    };
    (n * k).div_ceil(3)
}

pub fn split_ratio(
    scores: &[(SampleId, f64)],
    ratio: Ratio,
    epoch: usize,
) -> Result<ConfidenceSplit> {
    if scores.is_empty() {
        return Err(Error::input("cannot split an empty score set"));
    }
    check_unique(scores)?;
    let ranked = rank_by_uncertainty(scores);
    let n_low = ratio_low_count(ranked.len(), ratio);
    Ok(ConfidenceSplit {
        low: ranked[..n_low].iter().copied().collect(),
        high: ranked[n_low..].iter().copied().collect(),
        epoch,
        threshold: None,
    })
}

fn interval_index(score: f64) -> i64 {
    // Multiplying avoids 0.3 / 0.1 = 2.999...
    (score * (1.0 / INTERVAL_WIDTH)).floor() as i64
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Scans 0.1-wide uncertainty intervals from the most confident upward and
/// picks the first nonempty one whose accuracy is below the overall accuracy;
/// its median score becomes the threshold and everything at or above it is
/// low-confidence. Falls back to a 2:1 ratio split if no interval qualifies.
pub fn split_dynamic_threshold(
    scores: &[(SampleId, f64)],
    correctness: &BTreeMap<SampleId, bool>,
    epoch: usize,
) -> Result<ConfidenceSplit> {
    if scores.is_empty() {
        return Err(Error::input("cannot split an empty score set"));
    }
    let ids = check_unique(scores)?;
    if let Some(id) = ids.iter().find(|id| !correctness.contains_key(id)) {
        return Err(Error::IdMismatch(*id));
    }
    if let Some(id) = correctness.keys().find(|id| !ids.contains(id)) {
        return Err(Error::IdMismatch(*id));
    }
    let total_correct = scores.iter().filter(|(id, _)| correctness[id]).count();
    let overall = total_correct as f64 / scores.len() as f64;

    let mut intervals: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, s) in scores {
        let e = intervals.entry(interval_index(*s)).or_default();
        e.0.push(*s);
        e.1 += usize::from(correctness[id]);
    }
    let chosen = intervals
        .values_mut()
        .find(|(members, correct)| (*correct as f64 / members.len() as f64) < overall);
    let Some((members, _)) = chosen else {
        return split_ratio(scores, Ratio::TwoToOne, epoch);
    };
    members.sort_by(f64::total_cmp);
    let threshold = median(members);
    let (low, high): (Vec<_>, Vec<_>) = scores.iter().partition(|(_, s)| *s >= threshold);
    Ok(ConfidenceSplit {
        high: high.into_iter().map(|(id, _)| id).collect(),
        low: low.into_iter().map(|(id, _)| id).collect(),
        epoch,
        threshold: Some(threshold),
    })
}

fn split_by_views(
    view_labels: &BTreeMap<SampleId, Vec<Label>>,
    truths: &BTreeMap<SampleId, Label>,
    epoch: usize,
    is_high: impl Fn(usize, usize) -> bool,
) -> Result<ConfidenceSplit> {
    let mut expected = None;
    let mut split = ConfidenceSplit {
        high: BTreeSet::new(),
        low: BTreeSet::new(),
        epoch,
        threshold: None,
    };
    for (id, labels) in view_labels {
        match expected {
            None => expected = Some(labels.len()),
            Some(e) if e != labels.len() => {
                return Err(Error::RaggedViews {
                    id: *id,
                    expected: e,
                    found: labels.len(),
                })
            }
            _ => {}
        }
        let truth = truths.get(id).ok_or(Error::IdMismatch(*id))?;
        let correct = labels.iter().filter(|l| *l == truth).count();
        if is_high(correct, labels.len()) {
            split.high.insert(*id);
        } else {
            split.low.insert(*id);
        }
    }
    if expected == Some(0) {
        return Err(Error::input("view label lists are empty"));
    }
    Ok(split)
}

/// High iff every view's predicted label equals the ground truth.
pub fn split_consistent_labeling(
    view_labels: &BTreeMap<SampleId, Vec<Label>>,
    truths: &BTreeMap<SampleId, Label>,
    epoch: usize,
) -> Result<ConfidenceSplit> {
    split_by_views(view_labels, truths, epoch, |correct, n| correct == n)
}

/// High iff at least one view's predicted label equals the ground truth.
pub fn split_at_least_one_match(
    view_labels: &BTreeMap<SampleId, Vec<Label>>,
    truths: &BTreeMap<SampleId, Label>,
    epoch: usize,
) -> Result<ConfidenceSplit> {
    split_by_views(view_labels, truths, epoch, |correct, _| correct >= 1)
}

/// Per-sample correctness of the unaugmented prediction, one bit per
/// completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochHistory {
    bits: BTreeMap<SampleId, Vec<bool>>,
    depth: usize,
}

impl EpochHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Records one completed epoch; every previously seen id must be present.
    pub fn push_epoch(&mut self, correct: &BTreeMap<SampleId, bool>) -> Result<()> {
        if self.depth > 0 {
            if let Some(id) = self.bits.keys().find(|id| !correct.contains_key(id)) {
                return Err(Error::IdMismatch(*id));
            }
            if let Some(id) = correct.keys().find(|id| !self.bits.contains_key(id)) {
                return Err(Error::IdMismatch(*id));
            }
        }
        for (id, &c) in correct {
            self.bits.entry(*id).or_default().push(c);
        }
        self.depth += 1;
        Ok(())
    }

    pub fn last(&self) -> Option<BTreeMap<SampleId, bool>> {
        (self.depth > 0).then(|| {
            self.bits
                .iter()
                .map(|(id, b)| (*id, *b.last().unwrap()))
                .collect()
        })
    }

    pub fn get(&self, id: SampleId) -> Option<&[bool]> {
        self.bits.get(&id).map(Vec::as_slice)
    }
}

/// Demotes every high id that was not correct in each of the last
/// `min(t, depth)` epochs. Never promotes.
pub fn apply_consecutive_clean(
    split: &ConfidenceSplit,
    history: &EpochHistory,
    t: usize,
) -> Result<ConfidenceSplit> {
    if t < 1 {
        return Err(Error::input(
            "consecutive clean rounds t must be at least 1",
        ));
    }
    if history.depth() == 0 {
        return Err(Error::input(
            "consecutive-clean filter needs at least one epoch of history",
        ));
    }
    let window = t.min(history.depth());
    let mut out = split.clone();
    for id in &split.high {
        let clean = history
            .get(*id)
            .is_some_and(|bits| bits[bits.len() - window..].iter().all(|&b| b));
        if !clean {
            out.high.remove(id);
            out.low.insert(*id);
        }
    }
    Ok(out)
}

/// Everything a strategy may look at.
pub struct SelectionInputs<'a> {
    pub scores: &'a [(SampleId, f64)],
    pub correctness: &'a BTreeMap<SampleId, bool>,
    pub view_labels: &'a BTreeMap<SampleId, Vec<Label>>,
    pub truths: &'a BTreeMap<SampleId, Label>,
}

pub fn select(
    method: MethodC,
    inputs: &SelectionInputs<'_>,
    epoch: usize,
) -> Result<ConfidenceSplit> {
    match method {
        MethodC::Ratio1To2 => split_ratio(inputs.scores, Ratio::OneToTwo, epoch),
        MethodC::Ratio2To1 => split_ratio(inputs.scores, Ratio::TwoToOne, epoch),
        MethodC::DynamicThreshold => {
            split_dynamic_threshold(inputs.scores, inputs.correctness, epoch)
        }
        MethodC::ConsistentLabeling => {
            split_consistent_labeling(inputs.view_labels, inputs.truths, epoch)
        }
        MethodC::AtLeastOneMatch => {
            split_at_least_one_match(inputs.view_labels, inputs.truths, epoch)
        }
    }
}

/// One epoch's split with the scores it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSplit {
    pub split: ConfidenceSplit,
    pub scores: BTreeMap<SampleId, f64>,
}

/// CSV `epoch,sample_id,set,score,threshold` (set is `H` or `L`).
pub fn write_split_dump(path: &Path, splits: &[EpochSplit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "sample_id", "set", "score", "threshold"])?;
    for EpochSplit { split, scores } in splits {
        let all: BTreeSet<_> = split.high.union(&split.low).copied().collect();
        let threshold = split.threshold.map(|t| t.to_string()).unwrap_or_default();
        for id in all {
            let set = if split.high.contains(&id) { "H" } else { "L" };
            let score = scores.get(&id).map(f64::to_string).unwrap_or_default();
            w.write_record([
                split.epoch.to_string(),
                id.to_string(),
                set.to_string(),
                score,
                threshold.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
