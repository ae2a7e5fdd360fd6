use std::collections::{BTreeMap, BTreeSet};

use camoguard_core::deferral::{deferred_count, fuse, select_deferred, Perfect};
use camoguard_core::metrics::{bin_sizes, binned_report, compute_metrics, ConfusionMatrix, Metric};
use camoguard_core::partition::{
    apply_consecutive_clean, ratio_low_count, select, split_dynamic_threshold, split_ratio,
    EpochHistory, MethodC, Ratio, SelectionInputs,
};
use camoguard_core::review::{build_sequence, ItemKind, MIN_FILLERS};
use camoguard_core::{Label, SampleId};
use proptest::prelude::*;

fn label(b: bool) -> Label {
    if b {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Scores, per-sample correctness, truths and per-view labels for `n` samples.
#[derive(Debug, Clone)]
struct Instance {
    scores: Vec<(SampleId, f64)>,
    correct: BTreeMap<SampleId, bool>,
    truths: BTreeMap<SampleId, Label>,
    views: BTreeMap<SampleId, Vec<Label>>,
}

fn instance(max_n: usize) -> impl Strategy<Value = Instance> {
    (1..=max_n, 1usize..6).prop_flat_map(|(n, v)| {
        (
            prop::collection::vec(0.0f64..2.0, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), v), n),
        )
            .prop_map(|(scores, correct, truths, views)| Instance {
                scores: scores
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (SampleId(i as u64), s))
                    .collect(),
                correct: correct
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| (SampleId(i as u64), c))
                    .collect(),
                truths: truths
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| (SampleId(i as u64), label(t)))
                    .collect(),
                views: views
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| (SampleId(i as u64), v.into_iter().map(label).collect()))
                    .collect(),
            })
    })
}

proptest! {
    #[test]
    fn every_method_returns_an_exact_partition(inst in instance(120)) {
        let ids: BTreeSet<_> = inst.scores.iter().map(|(id, _)| *id).collect();
        let inputs = SelectionInputs {
            scores: &inst.scores,
            correctness: &inst.correct,
            view_labels: &inst.views,
            truths: &inst.truths,
        };
        for method in MethodC::ALL {
            let split = select(method, &inputs, 3).unwrap();
            prop_assert!(split.is_partition_of(&ids), "{method}");
            prop_assert_eq!(split.epoch, 3);
        }
    }

    #[test]
    fn ratio_low_set_holds_the_highest_scores(inst in instance(200)) {
        for ratio in [Ratio::OneToTwo, Ratio::TwoToOne] {
            let split = split_ratio(&inst.scores, ratio, 0).unwrap();
            prop_assert_eq!(split.low.len(), ratio_low_count(inst.scores.len(), ratio));
            let score: BTreeMap<_, _> = inst.scores.iter().copied().collect();
            let max_high = split.high.iter().map(|id| score[id]).fold(f64::NEG_INFINITY, f64::max);
            let min_low = split.low.iter().map(|id| score[id]).fold(f64::INFINITY, f64::min);
            prop_assert!(max_high <= min_low);
        }
    }

    #[test]
    fn dynamic_threshold_low_set_is_upward_closed(inst in instance(200)) {
        let split = split_dynamic_threshold(&inst.scores, &inst.correct, 0).unwrap();
        let score: BTreeMap<_, _> = inst.scores.iter().copied().collect();
        let min_low = split.low.iter().map(|id| score[id]).fold(f64::INFINITY, f64::min);
        for id in &split.high {
            prop_assert!(score[id] < min_low);
        }
        if let Some(th) = split.threshold {
            for (id, s) in &inst.scores {
                prop_assert_eq!(split.low.contains(id), *s >= th);
            }
        }
    }

    #[test]
    fn consecutive_clean_never_grows_the_high_set(
        inst in instance(80),
        epochs in prop::collection::vec(prop::collection::vec(any::<bool>(), 80), 1..6),
        t in 1usize..5,
    ) {
        let mut history = EpochHistory::new();
        for bits in &epochs {
            let correct = inst.scores.iter().zip(bits).map(|((id, _), b)| (*id, *b)).collect();
            history.push_epoch(&correct).unwrap();
        }
        let split = split_ratio(&inst.scores, Ratio::OneToTwo, 0).unwrap();
        let filtered = apply_consecutive_clean(&split, &history, t).unwrap();
        prop_assert!(filtered.high.is_subset(&split.high));
        prop_assert!(split.low.is_subset(&filtered.low));
        prop_assert_eq!(filtered.len(), split.len());
        let window = t.min(history.depth());
        for id in &filtered.high {
            let bits = history.get(*id).unwrap();
            prop_assert!(bits[bits.len() - window..].iter().all(|&b| b));
        }
    }

    #[test]
    fn metrics_stay_in_range_and_respect_symmetry(tp in 0u64..60, fn_ in 0u64..60, fp in 0u64..60, tn in 0u64..60) {
        let cm = ConfusionMatrix::from_rows([[tp, fn_], [fp, tn]]);
        let r = compute_metrics(cm);
        for m in [r.ba, r.f1, r.precision, r.recall] {
            if let Metric::Defined(v) = m {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        prop_assert_eq!(r.ba.is_defined(), tp + fn_ > 0 && fp + tn > 0);
        let swapped = compute_metrics(cm.swap_classes());
        match (r.ba, swapped.ba) {
            (Metric::Defined(a), Metric::Defined(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn bins_cover_every_sample_once(scores in prop::collection::vec(0.0f64..3.0, 5..150), n_bins in 1usize..8) {
        prop_assume!(n_bins <= scores.len());
        let ids: Vec<_> = (0..scores.len() as u64).map(SampleId).collect();
        let scored: Vec<_> = ids.iter().copied().zip(scores.iter().copied()).collect();
        let preds: Vec<_> = ids.iter().map(|&id| (id, label(id.0 % 3 == 0))).collect();
        let truths: Vec<_> = ids.iter().map(|&id| (id, label(id.0 % 2 == 0))).collect();
        let bins = binned_report(&scored, &preds, &truths, n_bins).unwrap();
        let sizes = bin_sizes(scores.len(), n_bins);
        prop_assert_eq!(bins.len(), n_bins);
        let mut total = 0;
        for (b, size) in bins.iter().zip(&sizes) {
            prop_assert_eq!(b.report.cm.total() as usize, *size);
            total += size;
        }
        prop_assert_eq!(total, scores.len());
    }

    #[test]
    fn deferral_takes_the_most_uncertain(scores in prop::collection::vec(0.0f64..3.0, 1..200), p in 0.01f64..=1.0) {
        let scored: Vec<_> = scores.iter().enumerate().map(|(i, s)| (SampleId(i as u64), *s)).collect();
        let deferred = select_deferred(&scored, p).unwrap();
        prop_assert_eq!(deferred.len(), deferred_count(scored.len(), p));
        let min_in = scored.iter().filter(|(id, _)| deferred.contains(id)).map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let max_out = scored.iter().filter(|(id, _)| !deferred.contains(id)).map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max_out <= min_in);
    }

    #[test]
    fn perfect_channel_never_lowers_accuracy(
        truth_bits in prop::collection::vec(any::<bool>(), 2..100),
        flips in prop::collection::vec(any::<bool>(), 100),
        p in 0.01f64..=1.0,
    ) {
        let truths: Vec<_> = truth_bits.iter().enumerate().map(|(i, b)| (SampleId(i as u64), label(*b))).collect();
        let preds: Vec<_> = truths.iter().zip(&flips).map(|((id, l), f)| (*id, if *f { l.flip() } else { *l })).collect();
        let scores: Vec<_> = truths.iter().map(|(id, _)| (*id, (id.0 * 7919 % 101) as f64)).collect();
        let deferred = select_deferred(&scores, p).unwrap();
        let r = fuse(&preds, &truths, &mut Perfect::new(&truths), &deferred).unwrap();
        prop_assert!(r.fused.cm.correct() >= r.model.cm.correct());
    }

    #[test]
    fn review_sequence_spacing(n_targets in 1usize..25, spare in 0usize..20, extra in 0usize..3, seed in any::<u64>()) {
        let gap = MIN_FILLERS + extra;
        let targets: Vec<_> = (0..n_targets as u64).map(SampleId).collect();
        let pool: Vec<_> = (1000..1000 + (gap * (n_targets - 1) + spare) as u64).map(SampleId).collect();
        let seq = build_sequence(&targets, &pool, seed, extra).unwrap();
        let positions: Vec<_> = seq.iter().enumerate().filter(|(_, it)| it.kind == ItemKind::Target).map(|(i, _)| i).collect();
        prop_assert_eq!(positions.len(), n_targets);
        prop_assert_eq!(positions[0], 0);
        for w in positions.windows(2) {
            prop_assert_eq!(w[1] - w[0] - 1, gap);
        }
        let ids: BTreeSet<_> = seq.iter().map(|it| it.id).collect();
        prop_assert_eq!(ids.len(), seq.len());
        if n_targets > 1 {
            let short = &pool[..gap * (n_targets - 1) - 1];
            prop_assert!(build_sequence(&targets, short, seed, extra).is_err());
        }
    }
}
