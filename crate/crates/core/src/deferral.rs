//! Uncertainty-gated deferral: the most uncertain test predictions are
//! replaced by a human channel's labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion_matrix, format_percent, Metric, MetricsReport};
use crate::rng::{self, Stream};
use crate::types::{Label, SampleId};
use crate::uncertainty::rank_by_uncertainty;

pub const DEFAULT_PROPORTIONS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Source of labels for deferred samples.
pub trait HumanChannel {
    fn judge(&mut self, id: SampleId) -> Result<Label>;
}

/// Always returns the ground truth.
#[derive(Debug, Clone)]
pub struct Perfect {
    truths: BTreeMap<SampleId, Label>,
}

impl Perfect {
    pub fn new(truths: &[(SampleId, Label)]) -> Self {
        Perfect {
            truths: truths.iter().copied().collect(),
        }
    }
}

impl HumanChannel for Perfect {
    fn judge(&mut self, id: SampleId) -> Result<Label> {
        self.truths
            .get(&id)
            .copied()
            .ok_or(Error::ChannelMissing(id))
    }
}

/// Emits the truth with probability `sensitivity` on positives and
/// `specificity` on negatives. Each id draws from its own stream, so a
/// judgment does not depend on which other ids were deferred.
#[derive(Debug, Clone)]
pub struct Simulated {
    truths: BTreeMap<SampleId, Label>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub seed: u64,
}

impl Simulated {
    pub fn new(
        truths: &[(SampleId, Label)],
        sensitivity: f64,
        specificity: f64,
        seed: u64,
    ) -> Result<Self> {
        check_rates(sensitivity, specificity)?;
        Ok(Simulated {
            truths: truths.iter().copied().collect(),
            sensitivity,
            specificity,
            seed,
        })
    }

    pub fn from_preset(
        truths: &[(SampleId, Label)],
        preset: &HumanPreset,
        seed: u64,
    ) -> Result<Self> {
        Simulated::new(truths, preset.sensitivity, preset.specificity, seed)
    }
}

impl HumanChannel for Simulated {
    fn judge(&mut self, id: SampleId) -> Result<Label> {
        let truth = *self.truths.get(&id).ok_or(Error::ChannelMissing(id))?;
        let mut rng = rng::stream(self.seed, "judge", &[id.0]);
        Ok(simulated_judge(
            truth,
            self.sensitivity,
            self.specificity,
            &mut rng,
        ))
    }
}

fn check_rates(sensitivity: f64, specificity: f64) -> Result<()> {
    if (0.0..=1.0).contains(&sensitivity) && (0.0..=1.0).contains(&specificity) {
        Ok(())
    } else {
        Err(Error::input(
            "sensitivity and specificity must lie in [0, 1]",
        ))
    }
}

pub fn simulated_judge(
    truth: Label,
    sensitivity: f64,
    specificity: f64,
    rng: &mut Stream,
) -> Label {
    let p_correct = match truth {
        Label::Positive => sensitivity,
        Label::Negative => specificity,
    };
    if rng.random_bool(p_correct.clamp(0.0, 1.0)) {
        truth
    } else {
        truth.flip()
    }
}

/// Labels read from a file or collected in a review session.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    labels: BTreeMap<SampleId, Label>,
}

impl Replay {
    pub fn new(labels: BTreeMap<SampleId, Label>) -> Self {
        Replay { labels }
    }

    pub fn labels(&self) -> &BTreeMap<SampleId, Label> {
        &self.labels
    }

    /// CSV `sample_id,predicted_label[,confidence]`; the confidence column is ignored.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("sample_id") || headers.get(1) != Some("predicted_label") {
            return Err(Error::input(format!(
                "{}: replay header must start with sample_id,predicted_label",
                path.display()
            )));
        }
        let mut labels = BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let bad = || {
                Error::input(format!(
                    "{}: malformed replay row {}",
                    path.display(),
                    line + 2
                ))
            };
            let id = SampleId(
                record
                    .get(0)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(bad)?,
            );
            let value: u8 = record
                .get(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(bad)?;
            if labels.insert(id, Label::from_value(value)?).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Replay { labels })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "predicted_label"])?;
        for (id, label) in &self.labels {
            w.write_record([id.to_string(), label.value().to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl HumanChannel for Replay {
    fn judge(&mut self, id: SampleId) -> Result<Label> {
        self.labels
            .get(&id)
            .copied()
            .ok_or(Error::ChannelMissing(id))
    }
}

/// Sensitivity/specificity pair for the simulated channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HumanPreset {
    pub name: &'static str,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl HumanPreset {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }
}

/// Half-gap between sensitivity and specificity used by every preset.
const PRESET_SPREAD: f64 = 0.0325;

/// Per-subject balanced accuracies of the reference EEG decoder, in percent.
const SUBJECT_BA: [f64; 8] = [63.66, 85.41, 77.77, 83.17, 80.57, 79.98, 70.56, 72.98];
const SUBJECT_NAMES: [&str; 8] = ["s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8"];

/// `mean` (sensitivity 0.800, specificity 0.735, BA 0.7675) followed by one
/// preset per subject.
pub fn presets() -> Vec<HumanPreset> {
    let mut out = vec![HumanPreset {
        name: "mean",
        sensitivity: 0.800,
        specificity: 0.735,
    }];
    for (name, ba) in SUBJECT_NAMES.iter().zip(SUBJECT_BA) {
        let ba = ba / 100.0;
        out.push(HumanPreset {
            name,
            sensitivity: ba + PRESET_SPREAD,
            specificity: ba - PRESET_SPREAD,
        });
    }
    out
}

pub fn preset(name: &str) -> Result<HumanPreset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::input(format!("unknown channel preset `{name}`")))
}

/// `ceil(p * n)`, with products within 1e-9 of an integer taken as exact so
/// that e.g. `0.3 * 10` defers 3.
pub fn deferred_count(n: usize, p: f64) -> usize {
    let x = p * n as f64;
    let count = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (count as usize).min(n)
}

fn check_proportion(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!(
            "deferral proportion {p} must lie in (0, 1]"
        )))
    }
}

/// The `ceil(p * N)` most uncertain ids; ties by ascending id.
pub fn select_deferred(scores: &[(SampleId, f64)], p: f64) -> Result<BTreeSet<SampleId>> {
    check_proportion(p)?;
    if scores.is_empty() {
        return Err(Error::input("cannot defer from an empty score set"));
    }
    let ranked = rank_by_uncertainty(scores);
    Ok(ranked[..deferred_count(ranked.len(), p)]
        .iter()
        .copied()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Model,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedSample {
    pub id: SampleId,
    pub label: Label,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub samples: Vec<FusedSample>,
    pub deferred: Vec<SampleId>,
    pub fused: MetricsReport,
    pub model: MetricsReport,
    /// Channel labels on the deferred subset.
    pub human: MetricsReport,
    /// Model labels on the deferred subset.
    pub model_on_deferred: MetricsReport,
}

fn metrics_on(
    preds: &[(SampleId, Label)],
    truths: &BTreeMap<SampleId, Label>,
) -> Result<MetricsReport> {
    let t: Vec<_> = preds.iter().map(|(id, _)| (*id, truths[id])).collect();
    Ok(compute_metrics(confusion_matrix(preds, &t)?))
}

/// Deferred ids take the channel's label; all others keep the model's.
/// The channel is queried in ascending id order.
pub fn fuse(
    model_preds: &[(SampleId, Label)],
    truths: &[(SampleId, Label)],
    channel: &mut dyn HumanChannel,
    deferred: &BTreeSet<SampleId>,
) -> Result<FusionResult> {
    let model_cm = confusion_matrix(model_preds, truths)?;
    let truth_map: BTreeMap<_, _> = truths.iter().copied().collect();
    let model_map: BTreeMap<_, _> = model_preds.iter().copied().collect();
    if let Some(id) = deferred.iter().find(|id| !model_map.contains_key(id)) {
        return Err(Error::IdMismatch(*id));
    }
    let mut samples = Vec::with_capacity(model_map.len());
    let mut human = Vec::with_capacity(deferred.len());
    let mut model_deferred = Vec::with_capacity(deferred.len());
    for (&id, &model_label) in &model_map {
        if deferred.contains(&id) {
            let label = channel.judge(id)?;
            human.push((id, label));
            model_deferred.push((id, model_label));
            samples.push(FusedSample {
                id,
                label,
                source: Source::Human,
            });
        } else {
            samples.push(FusedSample {
                id,
                label: model_label,
                source: Source::Model,
            });
        }
    }
    let fused_preds: Vec<_> = samples.iter().map(|s| (s.id, s.label)).collect();
    Ok(FusionResult {
        fused: metrics_on(&fused_preds, &truth_map)?,
        model: compute_metrics(model_cm),
        human: metrics_on(&human, &truth_map)?,
        model_on_deferred: metrics_on(&model_deferred, &truth_map)?,
        deferred: deferred.iter().copied().collect(),
        samples,
    })
}

pub fn sweep_proportions(
    model_preds: &[(SampleId, Label)],
    truths: &[(SampleId, Label)],
    scores: &[(SampleId, f64)],
    channel: &mut dyn HumanChannel,
    proportions: &[f64],
) -> Result<Vec<(f64, FusionResult)>> {
    proportions
        .iter()
        .map(|&p| {
            let deferred = select_deferred(scores, p)?;
            Ok((p, fuse(model_preds, truths, channel, &deferred)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub proportion: f64,
    pub deferred: usize,
    pub model_ba: Metric,
    pub model_f1: Metric,
    pub fused_ba: Metric,
    pub fused_f1: Metric,
    pub human_ba: Metric,
    pub model_accuracy_on_deferred: Metric,
}

/// Sweep rows keyed by the proportion formatted to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub channel: String,
    pub rows: BTreeMap<String, SweepRow>,
}

impl SweepReport {
    pub fn new(channel: &str, sweep: &[(f64, FusionResult)]) -> Self {
        let rows = sweep
            .iter()
            .map(|(p, r)| {
                let row = SweepRow {
                    proportion: *p,
                    deferred: r.deferred.len(),
                    model_ba: r.model.ba,
                    model_f1: r.model.f1,
                    fused_ba: r.fused.ba,
                    fused_f1: r.fused.f1,
                    human_ba: r.human.ba,
                    model_accuracy_on_deferred: r.model_on_deferred.accuracy(),
                };
                (format!("{p:.2}"), row)
            })
            .collect();
        SweepReport {
            channel: channel.to_string(),
            rows,
        }
    }

    /// One column pair (BA, F1) per proportion; rows for the model alone and
    /// the fused output.
    pub fn render_table(&self) -> String {
        let rows: Vec<&SweepRow> = self.rows.values().collect();
        let mut out = String::new();
        let _ = writeln!(out, "Deferral sweep ({} channel)", self.channel);
        let mut header = format!("{:<12}", "");
        let mut sub = format!("{:<12}", "");
        for r in &rows {
            let _ = write!(
                header,
                " | {:^17}",
                format!("{}%", format_percent(r.proportion).trim_end_matches(".00"))
            );
            let _ = write!(sub, " | {:>8} {:>8}", "BA(%)", "F1(%)");
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{sub}");
        for (name, pick) in [
            (
                "Model",
                (|r: &SweepRow| (r.model_ba, r.model_f1)) as fn(&SweepRow) -> (Metric, Metric),
            ),
            ("Fused", |r: &SweepRow| (r.fused_ba, r.fused_f1)),
        ] {
            let mut line = format!("{name:<12}");
            for r in &rows {
                let (ba, f1) = pick(r);
                let _ = write!(line, " | {:>8} {:>8}", ba.percent(), f1.percent());
            }
            let _ = writeln!(out, "{line}");
        }
        let mut line = format!("{:<12}", "Deferred");
        for r in &rows {
            let _ = write!(line, " | {:>17}", r.deferred);
        }
        let _ = writeln!(out, "{line}");
        out
    }
}
