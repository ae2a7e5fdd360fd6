use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use camoguard_core::augment::ViewContext;
use camoguard_core::classifier::{
    load_checkpoint, predict_images, save_checkpoint, seeded_grad_check,
};
use camoguard_core::config::{ChannelKind, Mode, RunConfig};
use camoguard_core::deferral::{
    fuse, select_deferred, sweep_proportions, HumanChannel, Perfect, Replay, Simulated, SweepReport,
};
use camoguard_core::metrics::{binned_report, format_percent, BinReport};
use camoguard_core::partition::{select, write_split_dump, EpochSplit, SelectionInputs};
use camoguard_core::synth::{
    generate_dataset, read_prediction_records, read_split, records_by_sample, split_dataset,
    write_split, ImageSample,
};
use camoguard_core::trainer::{
    evaluate, read_diagnostics, train_uncertainty_aware, write_diagnostics, TrainConfig,
};
use camoguard_core::uncertainty::{
    read_scores, score_dataset, score_pairs, score_records, write_scores, ScoredSample,
};
use camoguard_core::{
    compute_metrics, confusion_matrix, Error, Label, LabelPairs, Metric, MetricsReport, SampleId,
};
use serde::{Deserialize, Serialize};

use crate::args::{ChannelArg, ChannelArgs, Cli, Command, Common};
use crate::artifacts::*;
use crate::error::{CliError, CliResult, Kind};

/// Equal-count uncertainty bins in reports.
pub const REPORT_BINS: usize = 5;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData {
            common,
            n_samples,
            image_size,
            data_seed,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n_samples {
                cfg.dataset.n_samples = n;
            }
            if let Some(s) = image_size {
                cfg.dataset.image_size = s;
            }
            if let Some(s) = data_seed {
                cfg.dataset.seed = s;
            }
            gen_data(&validated(cfg)?)
        }
        Command::Train {
            common,
            seeds,
            lambda_u,
            max_epochs,
            learning_rate,
            method_c,
            aug_target,
        } => {
            let mut cfg = load_config(&common)?;
            let t = &mut cfg.train;
            if let Some(v) = lambda_u {
                t.lambda_u = v;
            }
            if let Some(v) = max_epochs {
                t.max_epochs = v;
            }
            if let Some(v) = learning_rate {
                t.learning_rate = v;
            }
            if let Some(m) = method_c {
                t.method_c = m.parse().map_err(CliError::config)?;
            }
            if let Some(a) = aug_target {
                t.aug_target = serde_json::from_value(serde_json::Value::String(a.clone()))
                    .map_err(|_| CliError::config(format!("unknown aug target `{a}`")))?;
            }
            train(&validated(cfg)?, seeds.as_deref())
        }
        Command::Score { common, records } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = records {
                cfg.paths.records = Some(r);
                cfg.mode = Some(Mode::PostHoc);
            }
            score(&validated(cfg)?)
        }
        Command::Partition { common, method_c } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = method_c {
                cfg.train.method_c = m.parse().map_err(CliError::config)?;
            }
            partition(&validated(cfg)?)
        }
        Command::Defer {
            common,
            channel,
            proportion,
        } => {
            let mut cfg = load_config(&common)?;
            apply_channel(&mut cfg, &channel);
            if let Some(p) = proportion {
                cfg.deferral.proportion = p;
            }
            defer(&validated(cfg)?)
        }
        Command::Sweep {
            common,
            channel,
            proportions,
        } => {
            let mut cfg = load_config(&common)?;
            apply_channel(&mut cfg, &channel);
            if let Some(p) = proportions {
                cfg.deferral.proportions = p;
            }
            sweep(&validated(cfg)?)
        }
        Command::Report { common } => report(&validated(load_config(&common)?)?),
        Command::Serve {
            common,
            addr,
            run_id,
            snapshot_dir,
            manual_fillers,
            extra_fillers,
        } => {
            let cfg = validated(load_config(&common)?)?;
            let opts = crate::server::ServeOptions {
                addr,
                run_id,
                snapshot_dir,
                manual_fillers,
                extra_fillers,
            };
            crate::server::serve(&cfg, opts)
        }
        Command::GradCheck {
            seeds,
            dim,
            hidden,
            batch,
            eps,
        } => grad_check(seeds, dim, hidden, batch, eps),
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => CliError::from(e),
            other => CliError::config(format!("{}: {other}", path.display())),
        })?,
        None => RunConfig::default(),
    };
    cfg.apply_seed_env().map_err(CliError::config)?;
    if let Some(d) = &common.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &common.run_dir {
        cfg.paths.run_dir = d.clone();
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn validated(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

fn apply_channel(cfg: &mut RunConfig, args: &ChannelArgs) {
    let ch = &mut cfg.deferral.channel;
    if let Some(kind) = args.channel {
        ch.kind = match kind {
            ChannelArg::Perfect => ChannelKind::Perfect,
            ChannelArg::Simulated => ChannelKind::Simulated,
            ChannelArg::Replay => ChannelKind::Replay,
        };
    }
    if let Some(v) = args.sens {
        ch.sensitivity = v;
        ch.preset = None;
    }
    if let Some(v) = args.spec {
        ch.specificity = v;
        ch.preset = None;
    }
    if let Some(p) = &args.preset {
        ch.preset = Some(p.clone());
    }
    if let Some(p) = &args.replay {
        ch.replay_path = Some(p.clone());
    }
    if let Some(s) = args.channel_seed {
        ch.seed = s;
    }
}

fn emit<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string(value).expect("summaries serialize")
    );
}

pub struct DataSplits {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

pub fn load_data(dir: &Path) -> CliResult<DataSplits> {
    Ok(DataSplits {
        train: read_split(&dir.join(TRAIN_DIR))?,
        val: read_split(&dir.join(VAL_DIR))?,
        test: read_split(&dir.join(TEST_DIR))?,
    })
}

fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let samples = generate_dataset(&cfg.dataset)?;
    let splits = split_dataset(samples, &cfg.split)?;
    let dir = &cfg.paths.data_dir;
    write_split(&dir.join(TRAIN_DIR), &splits.train)?;
    write_split(&dir.join(VAL_DIR), &splits.val)?;
    write_split(&dir.join(TEST_DIR), &splits.test)?;
    emit(&serde_json::json!({
        "data_dir": dir,
        "train": splits.train.len(),
        "val": splits.val.len(),
        "test": splits.test.len(),
    }));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_std(values: &[Metric]) -> Option<MeanStd> {
    let v: Vec<f64> = values.iter().filter_map(|m| m.value()).collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    Some(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

fn train_one(cfg: &TrainConfig, data: &DataSplits, dir: &Path) -> CliResult<TrainSummary> {
    ensure_dir(dir)?;
    let out = train_uncertainty_aware(cfg, &data.train, &data.val)?;
    save_checkpoint(&dir.join(CHECKPOINT), &out.params)?;
    write_diagnostics(&dir.join(DIAGNOSTICS), &out.diagnostics)?;
    write_split_dump(&dir.join(SPLITS), &out.splits)?;
    let summary = TrainSummary {
        seed: cfg.seed,
        best_epoch: out.best_epoch,
        epochs_run: out.diagnostics.len(),
        val: evaluate(&out.params, &data.val)?,
        test: evaluate(&out.params, &data.test)?,
    };
    write_json(&dir.join(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

fn train(cfg: &RunConfig, seeds: Option<&[u64]>) -> CliResult<()> {
    let data = load_data(&cfg.paths.data_dir)?;
    let run_dir = &cfg.paths.run_dir;
    let Some(seeds) = seeds else {
        let s = train_one(&cfg.train, &data, run_dir)?;
        emit(&serde_json::json!({
            "seed": s.seed,
            "best_epoch": s.best_epoch,
            "test_ba": s.test.ba,
            "test_f1": s.test.f1,
        }));
        return Ok(());
    };
    if seeds.is_empty() {
        return Err(CliError::new(
            Kind::Usage,
            "--seeds needs at least one seed",
        ));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let s = train_one(&tc, &data, &run_dir.join(format!("seed-{seed}")))?;
        log::info!("seed {seed}: test BA {}", s.test.ba.percent());
        runs.push(s);
    }
    let ba: Vec<Metric> = runs.iter().map(|r| r.test.ba).collect();
    let f1: Vec<Metric> = runs.iter().map(|r| r.test.f1).collect();
    let summary = serde_json::json!({
        "seeds": seeds,
        "test_ba": mean_std(&ba),
        "test_f1": mean_std(&f1),
        "runs": runs,
    });
    write_json(&run_dir.join(SEEDS_SUMMARY), &summary)?;
    let fmt = |m: Option<MeanStd>| {
        m.map_or("undef".into(), |m| {
            format!("{}±{}", format_percent(m.mean), format_percent(m.std))
        })
    };
    println!(
        "test BA {} F1 {} over {} seeds",
        fmt(mean_std(&ba)),
        fmt(mean_std(&f1)),
        seeds.len()
    );
    Ok(())
}

fn schema(e: Error) -> CliError {
    match e {
        Error::Input(m) => CliError::new(Kind::Schema, m),
        other => other.into(),
    }
}

/// Scores and predictions for the test split (live) or the record file (post-hoc).
fn scored_test(cfg: &RunConfig) -> CliResult<(Vec<ScoredSample>, Vec<PredictionRow>)> {
    if cfg.mode() == Mode::PostHoc {
        let path = cfg.paths.records.as_ref().expect("validated");
        let records =
            records_by_sample(&read_prediction_records(path).map_err(schema)?).map_err(schema)?;
        let scored = score_records(&records)?;
        let preds = records
            .iter()
            .map(|r| PredictionRow {
                sample_id: r.id,
                label: r.label,
                predicted: r.weak.predicted_label(),
                probs: r.weak.as_slice().to_vec(),
            })
            .collect();
        return Ok((scored, preds));
    }
    let test = read_split(&cfg.paths.data_dir.join(TEST_DIR))?;
    let model = load_checkpoint(&cfg.paths.run_dir.join(CHECKPOINT), None)?;
    let ctx = ViewContext {
        seed: cfg.train.seed,
        tag: "test-views",
        epoch: 0,
    };
    let scored = score_dataset(&model, &test, cfg.train.n_views, &cfg.train.augment, ctx)?;
    let probs = predict_images(&model, &test)?;
    let preds = test
        .iter()
        .zip(probs)
        .map(|(s, p)| PredictionRow {
            sample_id: s.id,
            label: s.label,
            predicted: p.predicted_label(),
            probs: p.as_slice().to_vec(),
        })
        .collect();
    Ok((scored, preds))
}

fn score(cfg: &RunConfig) -> CliResult<()> {
    let (scored, preds) = scored_test(cfg)?;
    let dir = &cfg.paths.run_dir;
    ensure_dir(dir)?;
    write_scores(&dir.join(SCORES), &scored)?;
    write_predictions(&dir.join(PREDICTIONS), &preds)?;
    let (p, t) = pairs(&preds);
    let metrics = compute_metrics(confusion_matrix(&p, &t)?);
    emit(&serde_json::json!({ "scored": scored.len(), "ba": metrics.ba, "f1": metrics.f1 }));
    Ok(())
}

fn partition(cfg: &RunConfig) -> CliResult<()> {
    let (scored, truths): (Vec<ScoredSample>, BTreeMap<SampleId, Label>) =
        if cfg.mode() == Mode::PostHoc {
            let path = cfg.paths.records.as_ref().expect("validated");
            let records = records_by_sample(&read_prediction_records(path).map_err(schema)?)
                .map_err(schema)?;
            (
                score_records(&records)?,
                records.iter().map(|r| (r.id, r.label)).collect(),
            )
        } else {
            let train = read_split(&cfg.paths.data_dir.join(TRAIN_DIR))?;
            let model = load_checkpoint(&cfg.paths.run_dir.join(CHECKPOINT), None)?;
            let ctx = ViewContext {
                seed: cfg.train.seed,
                tag: "split-views",
                epoch: 0,
            };
            let scored = score_dataset(&model, &train, cfg.train.n_views, &cfg.train.augment, ctx)?;
            (scored, train.iter().map(|s| (s.id, s.label)).collect())
        };
    // Without a training history the weak view's prediction stands in for
    // the unaugmented one.
    let correctness: BTreeMap<_, _> = scored
        .iter()
        .map(|s| (s.id, s.p_w.predicted_label() == truths[&s.id]))
        .collect();
    let view_labels: BTreeMap<_, _> = scored.iter().map(|s| (s.id, s.view_labels())).collect();
    let scores = score_pairs(&scored);
    let inputs = SelectionInputs {
        scores: &scores,
        correctness: &correctness,
        view_labels: &view_labels,
        truths: &truths,
    };
    let split = select(cfg.train.method_c, &inputs, 0)?;
    ensure_dir(&cfg.paths.run_dir)?;
    let (high, low) = (split.high.len(), split.low.len());
    let threshold = split.threshold;
    write_split_dump(
        &cfg.paths.run_dir.join(PARTITION),
        &[EpochSplit {
            split,
            scores: scores.into_iter().collect(),
        }],
    )?;
    emit(
        &serde_json::json!({ "method_c": cfg.train.method_c, "high": high, "low": low, "threshold": threshold }),
    );
    Ok(())
}

fn pairs(preds: &[PredictionRow]) -> (LabelPairs, LabelPairs) {
    (
        preds.iter().map(|r| (r.sample_id, r.predicted)).collect(),
        preds.iter().map(|r| (r.sample_id, r.label)).collect(),
    )
}

/// Predictions, truths and scores of the run, checked to cover the same ids.
type ScoredRun = (Vec<PredictionRow>, Vec<(SampleId, f64)>);

fn load_scored_run(dir: &Path) -> CliResult<ScoredRun> {
    let preds = read_predictions(&dir.join(PREDICTIONS)).map_err(schema)?;
    let scores: Vec<_> = read_scores(&dir.join(SCORES))
        .map_err(schema)?
        .iter()
        .map(|r| (r.sample_id, r.score))
        .collect();
    let a: Vec<_> = preds.iter().map(|r| r.sample_id).collect();
    let mut b: Vec<_> = scores.iter().map(|s| s.0).collect();
    let mut a_sorted = a.clone();
    a_sorted.sort();
    b.sort();
    if a_sorted != b {
        return Err(CliError::new(
            Kind::Schema,
            "predictions.csv and scores.csv cover different samples",
        ));
    }
    Ok((preds, scores))
}

fn make_channel(
    cfg: &RunConfig,
    truths: &[(SampleId, Label)],
) -> CliResult<(String, Box<dyn HumanChannel>)> {
    let ch = &cfg.deferral.channel;
    Ok(match ch.kind {
        ChannelKind::Perfect => ("perfect".into(), Box::new(Perfect::new(truths))),
        ChannelKind::Simulated => {
            let (sens, spec) = ch.rates()?;
            let name = format!("simulated sens={sens} spec={spec}");
            (name, Box::new(Simulated::new(truths, sens, spec, ch.seed)?))
        }
        ChannelKind::Replay => {
            let path = ch.replay_path.as_ref().expect("validated");
            (
                "replay".into(),
                Box::new(Replay::read(path).map_err(schema)?),
            )
        }
    })
}

fn defer(cfg: &RunConfig) -> CliResult<()> {
    let dir = &cfg.paths.run_dir;
    let (preds, scores) = load_scored_run(dir)?;
    let (p, t) = pairs(&preds);
    let (_, mut channel) = make_channel(cfg, &t)?;
    let deferred = select_deferred(&scores, cfg.deferral.proportion)?;
    let result = fuse(&p, &t, channel.as_mut(), &deferred)?;
    write_json(&dir.join(FUSION), &result)?;
    emit(&serde_json::json!({
        "proportion": cfg.deferral.proportion,
        "deferred": result.deferred.len(),
        "model_ba": result.model.ba,
        "fused_ba": result.fused.ba,
    }));
    Ok(())
}

fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let dir = &cfg.paths.run_dir;
    let (preds, scores) = load_scored_run(dir)?;
    let (p, t) = pairs(&preds);
    let (name, mut channel) = make_channel(cfg, &t)?;
    let rows = sweep_proportions(&p, &t, &scores, channel.as_mut(), &cfg.deferral.proportions)?;
    let report = SweepReport::new(&name, &rows);
    write_json(&dir.join(SWEEP_JSON), &report)?;
    let table = report.render_table();
    write_text(&dir.join(SWEEP_TXT), &table)?;
    print!("{table}");
    Ok(())
}

/// Everything `report` derives from the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub test: MetricsReport,
    pub test_bins: Vec<BinReport>,
    pub final_val_bins: Option<Vec<BinReport>>,
    pub sweep: Option<SweepReport>,
}

pub fn render_bins(title: &str, bins: &[BinReport]) -> String {
    let mut out = format!("{title}\n");
    let _ = writeln!(
        out,
        "{:<5} {:>8} {:>16} {:>8} {:>8}  [[TP, FN], [FP, TN]]",
        "Bin", "Samples", "Max uncertainty", "BA(%)", "F1(%)"
    );
    for b in bins {
        let [[tp, fn_], [fp, tn]] = b.report.cm.rows();
        let _ = writeln!(
            out,
            "{:<5} {:>8} {:>16.6} {:>8} {:>8}  [[{tp}, {fn_}], [{fp}, {tn}]]",
            b.index,
            b.ids.len(),
            b.max_uncertainty,
            b.report.ba.percent(),
            b.report.f1.percent(),
        );
    }
    out
}

fn report(cfg: &RunConfig) -> CliResult<()> {
    let dir = &cfg.paths.run_dir;
    let (preds, scores) = load_scored_run(dir)?;
    let (p, t) = pairs(&preds);
    let test = compute_metrics(confusion_matrix(&p, &t)?);
    let test_bins = binned_report(&scores, &p, &t, REPORT_BINS.min(preds.len()))?;
    let diag_path = dir.join(DIAGNOSTICS);
    let final_val_bins = if diag_path.is_file() {
        read_diagnostics(&diag_path)
            .map_err(schema)?
            .last()
            .map(|d| d.val_bins.clone())
    } else {
        None
    };
    let sweep_path = dir.join(SWEEP_JSON);
    let sweep: Option<SweepReport> =
        if sweep_path.is_file() {
            let text = std::fs::read_to_string(&sweep_path)?;
            Some(serde_json::from_str(&text).map_err(|e| {
                CliError::new(Kind::Schema, format!("{}: {e}", sweep_path.display()))
            })?)
        } else {
            None
        };

    let mut text = format!(
        "Test set: {} samples, BA {}%, F1 {}%\n\n",
        preds.len(),
        test.ba.percent(),
        test.f1.percent()
    );
    text.push_str(&render_bins("Test accuracy by uncertainty bin", &test_bins));
    if let Some(bins) = &final_val_bins {
        text.push('\n');
        text.push_str(&render_bins(
            "Validation accuracy by uncertainty bin (final epoch)",
            bins,
        ));
    }
    if let Some(s) = &sweep {
        text.push('\n');
        text.push_str(&s.render_table());
    }
    let report = RunReport {
        test,
        test_bins,
        final_val_bins,
        sweep,
    };
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_text(&dir.join(REPORT_TXT), &text)?;
    print!("{text}");
    Ok(())
}

/// Maximum tolerated relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

fn grad_check(seeds: u64, dim: usize, hidden: Vec<usize>, batch: usize, eps: f64) -> CliResult<()> {
    let mut sizes = vec![dim];
    sizes.extend(hidden);
    sizes.push(2);
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let r = seeded_grad_check(&sizes, seed, batch, eps)?;
        println!(
            "seed {seed}: max relative error {:.3e} over {} parameters",
            r.max_rel_error, r.params_checked
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if worst >= GRAD_CHECK_TOL {
        return Err(CliError::new(
            Kind::GradCheck,
            format!("max relative error {worst:e} >= {GRAD_CHECK_TOL:e}"),
        ));
    }
    Ok(())
}
