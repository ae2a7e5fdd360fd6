//! Uncertainty-aware training.
//!
//! Epochs `0..warmup` train plain cross-entropy on the whole train set. Every
//! later epoch scores the train set, splits it into high- and low-confidence
//! sets, and iterates the low set in batches of `B`, pairing each low batch
//! with an equally sized high batch drawn with replacement. Every sample
//! contributes plain cross-entropy on its unaugmented image; samples of the
//! augmented set(s) additionally contribute `r * [l(strong) + l(weak)]`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_augment, training_stream, weak_augment, AugmentConfig, ViewContext};
use crate::classifier::{
    backward_sum, features, predict_rows, sgd_step, Example, ModelParams, Velocity, DEFAULT_HIDDEN,
};
use crate::error::{Error, Result};
use crate::metrics::{
    binned_report, compute_metrics, confusion_matrix, BinReport, Metric, MetricsReport,
};
use crate::partition::{
    apply_consecutive_clean, select, ConfidenceSplit, EpochHistory, EpochSplit, MethodC,
    SelectionInputs,
};
use crate::rng;
use crate::synth::ImageSample;
use crate::types::{Label, LabelPairs, SampleId};
use crate::uncertainty::{score_dataset, score_pairs};

/// Number of equal-count bins in the per-epoch validation report.
pub const VAL_BINS: usize = 5;

/// Which confidence set receives the ramp-weighted augmented-views term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugTarget {
    #[serde(rename = "both")]
    Both,
    #[serde(rename = "h_only")]
    HighOnly,
    #[serde(rename = "l_only")]
    LowOnly,
}

impl AugTarget {
    fn augments_high(self) -> bool {
        matches!(self, AugTarget::Both | AugTarget::HighOnly)
    }

    fn augments_low(self) -> bool {
        matches!(self, AugTarget::Both | AugTarget::LowOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub rampup_length: usize,
    pub lambda_u: f64,
    /// Consecutive clean rounds.
    pub t: usize,
    pub method_c: MethodC,
    pub aug_target: AugTarget,
    pub patience: usize,
    pub seed: u64,
    /// Strong views per sample when scoring.
    pub n_views: usize,
    pub hidden: Vec<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 100,
            warmup_epochs: 5,
            rampup_length: 10,
            lambda_u: 1.0,
            t: 2,
            method_c: MethodC::Ratio2To1,
            aug_target: AugTarget::LowOnly,
            patience: 10,
            seed: 37,
            n_views: 5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// `lambda_u = 0` is accepted: it is the plain cross-entropy control.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::input(m.to_string()));
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if self.warmup_epochs >= self.max_epochs {
            return fail("warmup_epochs must be below max_epochs");
        }
        if self.rampup_length < 1 {
            return fail("rampup_length must be at least 1");
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return fail("lambda_u must be finite and non-negative");
        }
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if self.t < 1 {
            return fail("t must be at least 1");
        }
        if self.n_views < 1 {
            return fail("n_views must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive");
        }
        self.augment.validate()
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden);
        s.push(2);
        s
    }
}

/// `clip((e - warmup) / rampup_length, 0, 1) * lambda_u`.
pub fn ramp_factor(epoch: usize, warmup: usize, rampup_length: usize, lambda_u: f64) -> f64 {
    let x = (epoch as f64 - warmup as f64) / rampup_length.max(1) as f64;
    x.clamp(0.0, 1.0) * lambda_u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub val_bins: Vec<BinReport>,
    pub high: usize,
    pub low: usize,
    pub ramp: f64,
    pub threshold: Option<f64>,
}

pub fn write_diagnostics(path: &Path, diagnostics: &[EpochDiagnostics]) -> Result<()> {
    let mut out = Vec::new();
    for d in diagnostics {
        serde_json::to_writer(&mut out, d)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<EpochDiagnostics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub epoch: usize,
    pub best_ba: f64,
    pub best_epoch: Option<usize>,
    pub best_params: ModelParams,
    pub velocity: Velocity,
    pub history: EpochHistory,
    pub split: Option<ConfidenceSplit>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best post-warm-up epoch by validation BA.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub diagnostics: Vec<EpochDiagnostics>,
    /// The split used by every policy epoch.
    pub splits: Vec<EpochSplit>,
}

fn labelled(samples: &[ImageSample], preds: &[Label]) -> (LabelPairs, LabelPairs) {
    let p = samples.iter().zip(preds).map(|(s, l)| (s.id, *l)).collect();
    let t = samples.iter().map(|s| (s.id, s.label)).collect();
    (p, t)
}

fn predict_labels(model: &ModelParams, rows: &[Vec<f64>]) -> Result<Vec<Label>> {
    Ok(predict_rows(model, rows)?
        .iter()
        .map(|p| p.predicted_label())
        .collect())
}

/// Argmax predictions on the unaugmented samples.
pub fn evaluate(model: &ModelParams, samples: &[ImageSample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::input("cannot evaluate on an empty sample set"));
    }
    let rows: Vec<_> = samples.iter().map(features).collect();
    let preds = predict_labels(model, &rows)?;
    let (p, t) = labelled(samples, &preds);
    Ok(compute_metrics(confusion_matrix(&p, &t)?))
}

/// [`evaluate`] plus a binned report over the given uncertainty scores.
pub fn evaluate_binned(
    model: &ModelParams,
    samples: &[ImageSample],
    scores: &[(SampleId, f64)],
    n_bins: usize,
) -> Result<MetricsReport> {
    let rows: Vec<_> = samples.iter().map(features).collect();
    let preds = predict_labels(model, &rows)?;
    let (p, t) = labelled(samples, &preds);
    let mut report = compute_metrics(confusion_matrix(&p, &t)?);
    report.bins = Some(binned_report(scores, &p, &t, n_bins)?);
    Ok(report)
}

struct Data<'a> {
    samples: &'a [ImageSample],
    rows: Vec<Vec<f64>>,
    index: BTreeMap<SampleId, usize>,
}

impl<'a> Data<'a> {
    fn new(samples: &'a [ImageSample]) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id, i).is_some() {
                return Err(Error::DuplicateId(s.id));
            }
        }
        Ok(Data {
            samples,
            rows: samples.iter().map(features).collect(),
            index,
        })
    }

    fn correctness(&self, model: &ModelParams) -> Result<BTreeMap<SampleId, bool>> {
        let preds = predict_labels(model, &self.rows)?;
        Ok(self
            .samples
            .iter()
            .zip(preds)
            .map(|(s, p)| (s.id, p == s.label))
            .collect())
    }
}

/// Which member of the batch pair a sample belongs to; also its augmentation slot.
#[derive(Clone, Copy)]
struct Member {
    idx: usize,
    augment: bool,
    slot: usize,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    train: Data<'a>,
    val: Data<'a>,
    state: TrainState,
}

impl Trainer<'_> {
    /// One SGD step on the batch; returns the summed loss over the batch.
    fn step(
        &mut self,
        members: &[Member],
        r: f64,
        divisor: usize,
        epoch: usize,
        iteration: usize,
    ) -> Result<f64> {
        let cfg = self.cfg;
        let mut aug_rows = Vec::new();
        if r > 0.0 {
            for m in members.iter().filter(|m| m.augment) {
                let s = &self.train.samples[m.idx];
                let strong = strong_augment(
                    s,
                    &cfg.augment,
                    &mut training_stream(cfg.seed, "train-strong", s.id, epoch, m.slot),
                );
                let weak = weak_augment(
                    s,
                    &cfg.augment,
                    &mut training_stream(cfg.seed, "train-weak", s.id, epoch, m.slot),
                );
                aug_rows.push((features(&strong), s.label));
                aug_rows.push((features(&weak), s.label));
            }
        }
        let mut batch: Vec<Example<'_>> = members
            .iter()
            .map(|m| Example {
                features: &self.train.rows[m.idx],
                label: self.train.samples[m.idx].label,
                weight: 1.0,
            })
            .collect();
        batch.extend(aug_rows.iter().map(|(f, label)| Example {
            features: f,
            label: *label,
            weight: r,
        }));

        let (mut grads, loss) = backward_sum(&self.state.params, &batch).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch, iteration },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, iteration });
        }
        grads.scale(1.0 / divisor as f64);
        sgd_step(
            &mut self.state.params,
            &grads,
            cfg.learning_rate,
            cfg.momentum,
            &mut self.state.velocity,
        )?;
        if self.state.params.check_finite().is_err() {
            return Err(Error::Diverged { epoch, iteration });
        }
        Ok(loss)
    }

    fn warmup_epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.samples.len()).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, "shuffle", &[epoch as u64]));
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let members: Vec<Member> = chunk
                .iter()
                .map(|&idx| Member {
                    idx,
                    augment: false,
                    slot: 0,
                })
                .collect();
            total += self.step(&members, 0.0, chunk.len(), epoch, iteration)?;
        }
        Ok(total / order.len() as f64)
    }

    fn build_split(&self, epoch: usize) -> Result<EpochSplit> {
        let cfg = self.cfg;
        let ctx = ViewContext {
            seed: cfg.seed,
            tag: "split-views",
            epoch: epoch as u64,
        };
        let scored = score_dataset(
            &self.state.params,
            self.train.samples,
            cfg.n_views,
            &cfg.augment,
            ctx,
        )?;
        let scores = score_pairs(&scored);
        let correctness = match self.state.history.last() {
            Some(c) => c,
            None => self.train.correctness(&self.state.params)?,
        };
        let view_labels: BTreeMap<_, _> = scored.iter().map(|s| (s.id, s.view_labels())).collect();
        let truths: BTreeMap<_, _> = self.train.samples.iter().map(|s| (s.id, s.label)).collect();
        let inputs = SelectionInputs {
            scores: &scores,
            correctness: &correctness,
            view_labels: &view_labels,
            truths: &truths,
        };
        let mut split = select(cfg.method_c, &inputs, epoch)?;
        if self.state.history.depth() > 0 {
            split = apply_consecutive_clean(&split, &self.state.history, cfg.t)?;
        }
        Ok(EpochSplit {
            split,
            scores: scores.into_iter().collect(),
        })
    }

    fn policy_epoch(&mut self, epoch: usize, r: f64, split: &ConfidenceSplit) -> Result<f64> {
        let cfg = self.cfg;
        let b = cfg.batch_size;
        let to_idx = |ids: &std::collections::BTreeSet<SampleId>| -> Vec<usize> {
            ids.iter().map(|id| self.train.index[id]).collect()
        };
        let mut low = to_idx(&split.low);
        let high = to_idx(&split.high);
        low.shuffle(&mut rng::stream(cfg.seed, "shuffle", &[epoch as u64]));

        let mut total = 0.0;
        let mut seen = 0;
        if low.is_empty() {
            log::warn!("epoch {epoch}: empty low-confidence set, skipping the augmented term");
            let mut order = high;
            order.shuffle(&mut rng::stream(cfg.seed, "shuffle-high", &[epoch as u64]));
            for (iteration, chunk) in order.chunks(b).enumerate() {
                let members: Vec<Member> = chunk
                    .iter()
                    .map(|&idx| Member {
                        idx,
                        augment: false,
                        slot: 0,
                    })
                    .collect();
                total += self.step(&members, 0.0, chunk.len(), epoch, iteration)?;
                seen += chunk.len();
            }
            return Ok(total / seen as f64);
        }

        let mut oversample = rng::stream(cfg.seed, "oversample", &[epoch as u64]);
        for (iteration, chunk) in low.chunks(b).enumerate() {
            let mut members: Vec<Member> = chunk
                .iter()
                .enumerate()
                .map(|(k, &idx)| Member {
                    idx,
                    augment: cfg.aug_target.augments_low(),
                    slot: iteration * b + k,
                })
                .collect();
            if !high.is_empty() {
                for k in 0..chunk.len() {
                    let idx = high[oversample.random_range(0..high.len())];
                    members.push(Member {
                        idx,
                        augment: cfg.aug_target.augments_high(),
                        slot: iteration * b + k,
                    });
                }
            }
            total += self.step(&members, r, chunk.len(), epoch, iteration)?;
            seen += members.len();
        }
        Ok(total / seen as f64)
    }

    fn validate(&self, epoch: usize) -> Result<(MetricsReport, Vec<BinReport>)> {
        let cfg = self.cfg;
        let ctx = ViewContext {
            seed: cfg.seed,
            tag: "val-views",
            epoch: epoch as u64,
        };
        let scored = score_dataset(
            &self.state.params,
            self.val.samples,
            cfg.n_views,
            &cfg.augment,
            ctx,
        )?;
        let bins = VAL_BINS.min(self.val.samples.len());
        let mut report = evaluate_binned(
            &self.state.params,
            self.val.samples,
            &score_pairs(&scored),
            bins,
        )?;
        let val_bins = report.bins.take().unwrap_or_default();
        Ok((report, val_bins))
    }
}

/// Runs the full schedule with early stopping on validation BA.
pub fn train_uncertainty_aware(
    config: &TrainConfig,
    train: &[ImageSample],
    val: &[ImageSample],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::input("train and validation sets must be nonempty"));
    }
    let dim = train[0].pixels.len();
    if let Some(s) = train.iter().chain(val).find(|s| s.pixels.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            found: s.pixels.len(),
        });
    }
    let params = ModelParams::init(&config.layer_sizes(dim), config.seed)?;
    let mut trainer = Trainer {
        cfg: config,
        train: Data::new(train)?,
        val: Data::new(val)?,
        state: TrainState {
            velocity: Velocity::zeros_like(&params),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_ba: f64::NEG_INFINITY,
            best_epoch: None,
            history: EpochHistory::new(),
            split: None,
            seed: config.seed,
        },
    };

    let mut diagnostics = Vec::new();
    let mut splits = Vec::new();
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        trainer.state.epoch = epoch;
        let (phase, r, train_loss, high, low, threshold) = if epoch < config.warmup_epochs {
            let loss = trainer.warmup_epoch(epoch)?;
            (Phase::Warmup, 0.0, loss, train.len(), 0, None)
        } else {
            let r = ramp_factor(
                epoch,
                config.warmup_epochs,
                config.rampup_length,
                config.lambda_u,
            );
            let epoch_split = trainer.build_split(epoch)?;
            let split = &epoch_split.split;
            let loss = trainer.policy_epoch(epoch, r, split)?;
            let out = (
                Phase::Policy,
                r,
                loss,
                split.high.len(),
                split.low.len(),
                split.threshold,
            );
            trainer.state.split = Some(split.clone());
            splits.push(epoch_split);
            out
        };
        let correct = trainer.train.correctness(&trainer.state.params)?;
        trainer.state.history.push_epoch(&correct)?;
        let (val_report, val_bins) = trainer.validate(epoch)?;
        log::debug!(
            "epoch {epoch} loss {train_loss:.4} val BA {}",
            val_report.ba.percent()
        );

        let mut stop = false;
        if phase == Phase::Policy {
            let ba = match val_report.ba {
                Metric::Defined(v) => v,
                Metric::Undefined => f64::NEG_INFINITY,
            };
            if trainer.state.best_epoch.is_none() || ba > trainer.state.best_ba {
                trainer.state.best_ba = ba;
                trainer.state.best_epoch = Some(epoch);
                trainer.state.best_params = trainer.state.params.clone();
                since_best = 0;
            } else {
                since_best += 1;
                stop = since_best >= config.patience;
            }
        }
        diagnostics.push(EpochDiagnostics {
            epoch,
            phase,
            train_loss,
            val: val_report,
            val_bins,
            high,
            low,
            ramp: r,
            threshold,
        });
        if stop {
            break;
        }
    }
    let best_epoch = trainer
        .state
        .best_epoch
        .expect("at least one policy epoch runs");
    Ok(TrainOutcome {
        params: trainer.state.best_params,
        best_epoch,
        diagnostics,
        splits,
    })
}
