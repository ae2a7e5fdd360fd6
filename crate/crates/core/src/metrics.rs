//! Confusion matrices, balanced accuracy / F1, and the uncertainty-binned
//! breakdown.
//!
//! The positive class is always `Label::Positive`. A matrix is laid out as
//! `[[tp, fn], [fp, tn]]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, SampleId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    /// Builds from the `[[tp, fn], [fp, tn]]` layout.
    pub fn from_rows(rows: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix {
            tp: rows[0][0],
            fn_: rows[0][1],
            fp: rows[1][0],
            tn: rows[1][1],
        }
    }

    pub fn rows(&self) -> [[u64; 2]; 2] {
        [[self.tp, self.fn_], [self.fp, self.tn]]
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (truth, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
        }
    }

    /// Plain accuracy; undefined on an empty matrix.
    pub fn accuracy(&self) -> Metric {
        Metric::ratio(self.correct(), self.total())
    }

    /// The matrix obtained by calling the negative class positive.
    pub fn swap_classes(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fn_: self.fp,
            fp: self.fn_,
            tn: self.tp,
        }
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(ConfusionMatrix::from_rows(<[[u64; 2]; 2]>::deserialize(d)?))
    }
}

/// A metric value, or `Undefined` when a denominator is zero.
///
/// Serialized as a number or `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Defined(f64),
    Undefined,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Defined(_))
    }

    /// Percentage with two decimals, rounded half away from zero.
    pub fn percent(self) -> String {
        match self {
            Metric::Defined(v) => format_percent(v),
            Metric::Undefined => "undef".to_string(),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<f64>::deserialize(d)? {
            Some(v) => Metric::Defined(v),
            None => Metric::Undefined,
        })
    }
}

/// `f64::round` already rounds half away from zero.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", (fraction * 1e4).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ba: Metric,
    pub f1: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub cm: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<BinReport>>,
}

impl MetricsReport {
    pub fn accuracy(&self) -> Metric {
        self.cm.accuracy()
    }
}

/// One equal-count slice of the uncertainty ranking. `start..end` are rank
/// positions (0 = most confident).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub max_uncertainty: f64,
    pub ids: Vec<SampleId>,
    pub report: MetricsReport,
}

fn index_unique(pairs: &[(SampleId, Label)]) -> Result<BTreeMap<SampleId, Label>> {
    let mut map = BTreeMap::new();
    for &(id, label) in pairs {
        if map.insert(id, label).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

pub fn confusion_matrix(
    predictions: &[(SampleId, Label)],
    truths: &[(SampleId, Label)],
) -> Result<ConfusionMatrix> {
    let preds = index_unique(predictions)?;
    let truth = index_unique(truths)?;
    if let Some(id) = preds.keys().find(|id| !truth.contains_key(id)) {
        return Err(Error::IdMismatch(*id));
    }
    if let Some(id) = truth.keys().find(|id| !preds.contains_key(id)) {
        return Err(Error::IdMismatch(*id));
    }
    let mut cm = ConfusionMatrix::default();
    for (id, &p) in &preds {
        cm.record(p, truth[id]);
    }
    Ok(cm)
}

pub fn compute_metrics(cm: ConfusionMatrix) -> MetricsReport {
    let sensitivity = Metric::ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = Metric::ratio(cm.tn, cm.tn + cm.fp);
    let ba = match (sensitivity, specificity) {
        (Metric::Defined(a), Metric::Defined(b)) => Metric::Defined(0.5 * (a + b)),
        _ => Metric::Undefined,
    };
    let precision = Metric::ratio(cm.tp, cm.tp + cm.fp);
    let recall = sensitivity;
    let f1 = match (precision, recall) {
        (Metric::Defined(p), Metric::Defined(r)) if p + r > 0.0 => {
            Metric::Defined(2.0 * p * r / (p + r))
        }
        // Both defined but tp = 0: the harmonic mean of two zeros is zero.
        (Metric::Defined(_), Metric::Defined(_)) => Metric::Defined(0.0),
        _ => Metric::Undefined,
    };
    MetricsReport {
        ba,
        f1,
        precision,
        recall,
        cm,
        bins: None,
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// `None` when the lengths differ, fewer than two points are given, or
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Sizes of `n_bins` equal-count bins over `n` items; earlier bins take the
/// remainder.
pub fn bin_sizes(n: usize, n_bins: usize) -> Vec<usize> {
    let base = n / n_bins;
    let extra = n % n_bins;
    (0..n_bins).map(|i| base + usize::from(i < extra)).collect()
}

/// Sorts by ascending uncertainty (ties by ascending id) and reports metrics
/// per equal-count bin. Bin 0 holds the most confident samples.
pub fn binned_report(
    scores: &[(SampleId, f64)],
    predictions: &[(SampleId, Label)],
    truths: &[(SampleId, Label)],
    n_bins: usize,
) -> Result<Vec<BinReport>> {
    if n_bins == 0 {
        return Err(Error::input("n_bins must be at least 1"));
    }
    let preds = index_unique(predictions)?;
    let truth = index_unique(truths)?;
    let mut ranked = scores.to_vec();
    {
        let mut seen = std::collections::BTreeSet::new();
        for (id, s) in &ranked {
            if !seen.insert(*id) {
                return Err(Error::DuplicateId(*id));
            }
            if !s.is_finite() {
                return Err(Error::input(format!(
                    "non-finite uncertainty for sample {id}"
                )));
            }
        }
    }
    if let Some(id) = preds
        .keys()
        .find(|id| !ranked.iter().any(|(s, _)| s == *id))
    {
        return Err(Error::IdMismatch(*id));
    }
    if n_bins > ranked.len() {
        return Err(Error::input(format!(
            "{n_bins} bins requested for {} samples",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut out = Vec::with_capacity(n_bins);
    let mut start = 0;
    for (index, size) in bin_sizes(ranked.len(), n_bins).into_iter().enumerate() {
        let slice = &ranked[start..start + size];
        let ids: Vec<SampleId> = slice.iter().map(|(id, _)| *id).collect();
        let p: Vec<_> = ids
            .iter()
            .map(|id| {
                preds
                    .get(id)
                    .map(|l| (*id, *l))
                    .ok_or(Error::IdMismatch(*id))
            })
            .collect::<Result<_>>()?;
        let t: Vec<_> = ids
            .iter()
            .map(|id| {
                truth
                    .get(id)
                    .map(|l| (*id, *l))
                    .ok_or(Error::IdMismatch(*id))
            })
            .collect::<Result<_>>()?;
        let cm = confusion_matrix(&p, &t)?;
        out.push(BinReport {
            index,
            start,
            end: start + size,
            max_uncertainty: slice.last().map(|(_, s)| *s).unwrap_or(0.0),
            ids,
            report: compute_metrics(cm),
        });
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(labels: &[u8]) -> Vec<(SampleId, Label)> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (SampleId(i as u64), Label::from_value(l).unwrap()))
            .collect()
    }

    #[test]
    fn identity_predictions() {
        let t = ids(&[1, 1, 1, 0, 0]);
        let cm = confusion_matrix(&t, &t).unwrap();
        assert_eq!(cm.rows(), [[3, 0], [0, 2]]);
    }

    #[test]
    fn complement_predictions() {
        let t = ids(&[1, 0]);
        let p = ids(&[0, 1]);
        assert_eq!(confusion_matrix(&p, &t).unwrap().rows(), [[0, 1], [1, 0]]);
    }

    #[test]
    fn forty_five_sample_bin() {
        let mut t = vec![1u8; 27];
        t.extend(vec![0u8; 18]);
        let mut p = vec![1u8; 28];
        p.extend(vec![0u8; 17]);
        let cm = confusion_matrix(&ids(&p), &ids(&t)).unwrap();
        assert_eq!(cm.rows(), [[27, 0], [1, 17]]);
    }

    #[test]
    fn mismatched_and_duplicate_ids_are_named() {
        let t = ids(&[1, 0]);
        let p = vec![
            (SampleId(0), Label::Positive),
            (SampleId(7), Label::Negative),
        ];
        match confusion_matrix(&p, &t) {
            Err(Error::IdMismatch(SampleId(7))) => {}
            other => panic!("{other:?}"),
        }
        let dup = vec![
            (SampleId(0), Label::Positive),
            (SampleId(0), Label::Negative),
        ];
        assert!(matches!(
            confusion_matrix(&dup, &t),
            Err(Error::DuplicateId(SampleId(0)))
        ));
    }

    #[test]
    fn metrics_from_reference_matrices() {
        // Exact values; one-decimal truncations are 97.2 / 98.1, 70.5 / 59.2
        // and 63.3 / 51.6.
        let cases = [
            ([[27, 0], [1, 17]], 0.972_222_222, 0.981_818_182),
            ([[8, 6], [5, 26]], 0.705_069_124, 0.592_592_593),
            ([[8, 7], [8, 22]], 0.633_333_333, 0.516_129_032),
        ];
        for (rows, ba, f1) in cases {
            let r = compute_metrics(ConfusionMatrix::from_rows(rows));
            assert!((r.ba.value().unwrap() - ba).abs() < 1e-8, "{rows:?}");
            assert!((r.f1.value().unwrap() - f1).abs() < 1e-8, "{rows:?}");
        }
    }

    #[test]
    fn empty_class_is_undefined_not_zero() {
        let r = compute_metrics(ConfusionMatrix::from_rows([[3, 1], [0, 0]]));
        assert_eq!(r.ba, Metric::Undefined);
        assert_eq!(r.precision, Metric::Defined(1.0));
        assert_eq!(r.f1, Metric::Defined(2.0 * 0.75 / 1.75));
        let r = compute_metrics(ConfusionMatrix::from_rows([[0, 0], [0, 5]]));
        assert_eq!(r.f1, Metric::Undefined);
        assert_eq!(r.recall, Metric::Undefined);
        assert_eq!(serde_json::to_value(r.ba).unwrap(), serde_json::Value::Null);
    }

    #[test]
    fn ba_extremes() {
        for k in 1..6 {
            for m in 1..6 {
                let good = compute_metrics(ConfusionMatrix::from_rows([[k, 0], [0, m]]));
                assert_eq!(good.ba, Metric::Defined(1.0));
                let bad = compute_metrics(ConfusionMatrix::from_rows([[0, k], [m, 0]]));
                assert_eq!(bad.ba, Metric::Defined(0.0));
            }
        }
    }

    #[test]
    fn class_swap_keeps_ba_but_not_f1() {
        let cm = ConfusionMatrix::from_rows([[8, 6], [5, 26]]);
        let a = compute_metrics(cm);
        let b = compute_metrics(cm.swap_classes());
        assert!((a.ba.value().unwrap() - b.ba.value().unwrap()).abs() < 1e-12);
        assert!((a.f1.value().unwrap() - b.f1.value().unwrap()).abs() > 0.1);
    }

    #[test]
    fn json_layout() {
        let r = compute_metrics(ConfusionMatrix::from_rows([[27, 0], [1, 17]]));
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["cm"], serde_json::json!([[27, 0], [1, 17]]));
        for key in ["ba", "f1", "precision", "recall"] {
            assert!(v[key].is_number(), "{key}");
        }
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(format_percent(0.972_222), "97.22");
        assert_eq!(format_percent(0.5), "50.00");
        assert_eq!(format_percent(0.123_45), "12.35");
        assert_eq!(Metric::Undefined.percent(), "undef");
    }

    fn scored(n: usize) -> (Vec<(SampleId, f64)>, crate::types::LabelPairs) {
        let s = (0..n)
            .map(|i| (SampleId(i as u64), (n - i) as f64 / 10.0))
            .collect();
        let t = (0..n)
            .map(|i| {
                (
                    SampleId(i as u64),
                    Label::from_value((i % 2) as u8).unwrap(),
                )
            })
            .collect();
        (s, t)
    }

    #[test]
    fn equal_count_bins() {
        let (s, t) = scored(10);
        let bins = binned_report(&s, &t, &t, 5).unwrap();
        assert!(bins.iter().all(|b| b.ids.len() == 2));
        // Lowest score belongs to the largest id.
        assert_eq!(bins[0].ids, vec![SampleId(9), SampleId(8)]);
        let (s, t) = scored(11);
        let sizes: Vec<_> = binned_report(&s, &t, &t, 5)
            .unwrap()
            .iter()
            .map(|b| b.ids.len())
            .collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn bins_break_ties_by_id_and_reject_too_many() {
        let s: Vec<_> = (0..4).map(|i| (SampleId(3 - i), 0.5)).collect();
        let t: Vec<_> = (0..4).map(|i| (SampleId(i), Label::Positive)).collect();
        let bins = binned_report(&s, &t, &t, 2).unwrap();
        assert_eq!(bins[0].ids, vec![SampleId(0), SampleId(1)]);
        assert!(binned_report(&s, &t, &t, 5).is_err());
        assert!(binned_report(&s, &t, &t, 0).is_err());
    }

    #[test]
    fn spearman_values() {
        let idx = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&idx, &[5.0, 4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&idx, &[1.0, 2.0, 3.0, 4.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&idx, &[1.0; 5]), None);
        // Tied ranks [4, 4, 2, 4, 1]: centred cross sum -6, squares 10 and 8.
        let r = spearman(&idx, &[0.9, 0.9, 0.5, 0.9, 0.1]).unwrap();
        assert!((r - (-6.0 / (10.0f64 * 8.0).sqrt())).abs() < 1e-12);
        assert_eq!(
            average_ranks(&[0.9, 0.9, 0.5, 0.9, 0.1]),
            vec![4.0, 4.0, 2.0, 4.0, 1.0]
        );
    }
}
