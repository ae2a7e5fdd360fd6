//! Multiview uncertainty: the mean cross-entropy between the prediction on a
//! weak view and the predictions on each of `n` strong views.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentConfig, ViewContext};
use crate::classifier::{features, predict_rows, ModelParams, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::synth::{ImageSample, SampleViews};
use crate::types::{Label, ProbVector, SampleId};

/// Nonnegative uncertainty in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UncertaintyScore(pub f64);

/// `-sum_i p_i ln q_i`, with `q` floored at `1e-12`.
pub fn cross_entropy(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(pi, qi)| {
            if *pi == 0.0 {
                0.0
            } else {
                -pi * qi.max(PROB_FLOOR).ln()
            }
        })
        .sum())
}

/// `(1/n) sum_j CE(p_w, p_sj)`; the weak-view prediction is always the first argument.
pub fn multiview_uncertainty(p_w: &ProbVector, p_s: &[ProbVector]) -> Result<UncertaintyScore> {
    if p_s.is_empty() {
        return Err(Error::input(
            "multiview uncertainty needs at least one strong view",
        ));
    }
    let total = p_s
        .iter()
        .map(|q| cross_entropy(p_w, q))
        .sum::<Result<f64>>()?;
    Ok(UncertaintyScore(total / p_s.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub id: SampleId,
    pub score: UncertaintyScore,
    pub p_w: ProbVector,
    pub p_s: Vec<ProbVector>,
}

impl ScoredSample {
    /// Argmax labels of every view, weak first.
    pub fn view_labels(&self) -> Vec<Label> {
        std::iter::once(&self.p_w)
            .chain(&self.p_s)
            .map(ProbVector::predicted_label)
            .collect()
    }
}

/// Scores every sample with a live model. Views come from
/// [`make_views`] under `ctx`, so the result is a pure function of
/// `(model, samples, n, cfg, ctx)`.
pub fn score_dataset(
    model: &ModelParams,
    samples: &[ImageSample],
    n: usize,
    cfg: &AugmentConfig,
    ctx: ViewContext<'_>,
) -> Result<Vec<ScoredSample>> {
    let mut rows = Vec::with_capacity(samples.len() * (n + 1));
    for s in samples {
        if s.pixels.len() != model.input_dim() {
            return Err(Error::input(format!(
                "sample {}: {} pixels, model expects {}",
                s.id,
                s.pixels.len(),
                model.input_dim()
            )));
        }
        let views = make_views(s, n, cfg, ctx)?;
        rows.push(features(&views.weak));
        rows.extend(views.strong.iter().map(features));
    }
    let probs = predict_rows(model, &rows)?;
    samples
        .iter()
        .zip(probs.chunks(n + 1))
        .map(|(s, chunk)| {
            let p_w = chunk[0].clone();
            let p_s = chunk[1..].to_vec();
            let score = multiview_uncertainty(&p_w, &p_s)?;
            Ok(ScoredSample {
                id: s.id,
                score,
                p_w,
                p_s,
            })
        })
        .collect()
}

/// Post-hoc scoring from ingested per-view records.
pub fn score_records(records: &[SampleViews]) -> Result<Vec<ScoredSample>> {
    records
        .iter()
        .map(|r| {
            let score = multiview_uncertainty(&r.weak, &r.strong)?;
            Ok(ScoredSample {
                id: r.id,
                score,
                p_w: r.weak.clone(),
                p_s: r.strong.clone(),
            })
        })
        .collect()
}

pub fn score_pairs(scored: &[ScoredSample]) -> Vec<(SampleId, f64)> {
    scored.iter().map(|s| (s.id, s.score.0)).collect()
}

/// Most uncertain first; ties by ascending id.
pub fn rank_by_uncertainty(scores: &[(SampleId, f64)]) -> Vec<SampleId> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(id, _)| id).collect()
}

/// One row of the score dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: SampleId,
    pub score: f64,
    pub p_w: Vec<f64>,
}

/// CSV `sample_id,score,p_w0,...,p_w{C-1}`; floats use Rust's shortest
/// round-trip formatting.
pub fn write_scores(path: &Path, scored: &[ScoredSample]) -> Result<()> {
    let classes = scored.first().map_or(2, |s| s.p_w.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "score".to_string()];
    header.extend((0..classes).map(|c| format!("p_w{c}")));
    w.write_record(&header)?;
    for s in scored {
        let mut rec = vec![s.id.to_string(), s.score.0.to_string()];
        rec.extend(s.p_w.as_slice().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "sample_id" || &header[1] != "score" {
        return Err(Error::input(format!(
            "{}: not a score dump",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::input(format!("{}: bad field {i}", path.display())))
        };
        let sample_id = SampleId(
            rec.get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::input(format!("{}: bad sample_id", path.display())))?,
        );
        let p_w = (2..rec.len()).map(num).collect::<Result<_>>()?;
        out.push(ScoreRow {
            sample_id,
            score: num(1)?,
            p_w,
        });
    }
    Ok(out)
}
