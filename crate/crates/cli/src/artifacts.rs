//! Files under the data and run directories.

use std::path::Path;

use camoguard_core::{Error, Label, Result, SampleId};

pub const TRAIN_DIR: &str = "train";
pub const VAL_DIR: &str = "val";
pub const TEST_DIR: &str = "test";

pub const CHECKPOINT: &str = "model.ckpt";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";
pub const SPLITS: &str = "splits.csv";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const SEEDS_SUMMARY: &str = "summary.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const SCORES: &str = "scores.csv";
pub const PARTITION: &str = "partition.csv";
pub const FUSION: &str = "fusion.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_TXT: &str = "sweep.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// One row of `predictions.csv`: ground truth, predicted label and class
/// probabilities for a test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub sample_id: SampleId,
    pub label: Label,
    pub predicted: Label,
    pub probs: Vec<f64>,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let classes = rows.first().map_or(2, |r| r.probs.len());
    let mut header = vec![
        "sample_id".to_string(),
        "label".to_string(),
        "predicted".to_string(),
    ];
    header.extend((0..classes).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.label.value().to_string(),
            r.predicted.value().to_string(),
        ];
        rec.extend(r.probs.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3
        || &header[0] != "sample_id"
        || &header[1] != "label"
        || &header[2] != "predicted"
    {
        return Err(Error::Input(format!(
            "{}: not a prediction dump",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Input(format!("{}: malformed row {}", path.display(), line + 2));
        let label = |i: usize| -> Result<Label> {
            Label::from_value(rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad)?)
        };
        let probs = (3..rec.len())
            .map(|i| rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad))
            .collect::<Result<_>>()?;
        out.push(PredictionRow {
            sample_id: SampleId(rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?),
            label: label(1)?,
            predicted: label(2)?,
            probs,
        });
    }
    Ok(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PREDICTIONS);
        let rows = vec![
            PredictionRow {
                sample_id: SampleId(3),
                label: Label::Positive,
                predicted: Label::Negative,
                probs: vec![0.7, 0.3],
            },
            PredictionRow {
                sample_id: SampleId(9),
                label: Label::Negative,
                predicted: Label::Negative,
                probs: vec![0.9, 0.1],
            },
        ];
        write_predictions(&path, &rows).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), rows);
    }
}
