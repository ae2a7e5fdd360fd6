//! Run configuration file (JSON). Unknown keys are rejected at every level;
//! omitted keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deferral::{preset, DEFAULT_PROPORTIONS};
use crate::error::{Error, Result};
use crate::synth::{DatasetSpec, SplitSpec};
use crate::trainer::TrainConfig;

/// Environment variable that overrides the training seed.
pub const SEED_ENV: &str = "CAMOGUARD_SEED";

pub const DEFAULT_SEEDS: [u64; 5] = [37, 12, 6, 99, 123];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Scores come from the built-in classifier.
    Live,
    /// Scores come from an ingested per-view prediction record file.
    PostHoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Perfect,
    Simulated,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Named preset; overrides sensitivity and specificity when set.
    pub preset: Option<String>,
    pub replay_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            kind: ChannelKind::Simulated,
            sensitivity: 0.800,
            specificity: 0.735,
            preset: None,
            replay_path: None,
            seed: 37,
        }
    }
}

impl ChannelConfig {
    /// Sensitivity and specificity after applying any preset.
    pub fn rates(&self) -> Result<(f64, f64)> {
        match &self.preset {
            Some(name) => {
                let p = preset(name)?;
                Ok((p.sensitivity, p.specificity))
            }
            None => Ok((self.sensitivity, self.specificity)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeferralConfig {
    /// Proportion used by `defer` and review sessions.
    pub proportion: f64,
    /// Proportions swept by `sweep`.
    pub proportions: Vec<f64>,
    pub channel: ChannelConfig,
}

impl Default for DeferralConfig {
    fn default() -> Self {
        DeferralConfig {
            proportion: 0.2,
            proportions: DEFAULT_PROPORTIONS.to_vec(),
            channel: ChannelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Per-view prediction records for post-hoc mode.
    pub records: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            records: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub deferral: DeferralConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Live)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `CAMOGUARD_SEED` if it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        let d = &self.deferral;
        for p in std::iter::once(d.proportion).chain(d.proportions.iter().copied()) {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::input(format!(
                    "deferral proportion {p} must lie in (0, 1]"
                )));
            }
        }
        let (sens, spec) = d.channel.rates()?;
        if !(0.0..=1.0).contains(&sens) || !(0.0..=1.0).contains(&spec) {
            return Err(Error::input(
                "channel sensitivity and specificity must lie in [0, 1]",
            ));
        }
        if d.channel.kind == ChannelKind::Replay && d.channel.replay_path.is_none() {
            return Err(Error::input(
                "the replay channel needs deferral.channel.replay_path",
            ));
        }
        if self.mode() == Mode::PostHoc && self.paths.records.is_none() {
            return Err(Error::input("post_hoc mode needs paths.records"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.train.seed, 37);
        assert_eq!(cfg.train.patience, 10);
        assert_eq!(cfg.train.n_views, 5);
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).is_err());
        assert!(
            RunConfig::from_json(r#"{"train": {"augment": {"gain": [1, 2], "x": 1}}}"#).is_err()
        );
        assert!(RunConfig::from_json(r#"{"deferral": {"channel": {"sens": 1}}}"#).is_err());
    }

    #[test]
    fn partial_files_merge_with_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"max_epochs": 7, "method_c": "dynamic_threshold"}, "dataset": {"n_samples": 200}}"#).unwrap();
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.dataset.n_samples, 200);
        assert_eq!(cfg.dataset.image_size, 32);
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            r#"{"deferral": {"proportion": 0}}"#,
            r#"{"deferral": {"proportions": [0.1, 1.2]}}"#,
            r#"{"deferral": {"channel": {"kind": "replay"}}}"#,
            r#"{"deferral": {"channel": {"preset": "nobody"}}}"#,
            r#"{"mode": "post_hoc"}"#,
            r#"{"train": {"warmup_epochs": 200}}"#,
        ];
        for text in bad {
            assert!(
                RunConfig::from_json(text).unwrap().validate().is_err(),
                "{text}"
            );
        }
    }

    #[test]
    fn presets_override_rates() {
        let cfg = RunConfig::from_json(
            r#"{"deferral": {"channel": {"preset": "mean", "sensitivity": 0.1}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.deferral.channel.rates().unwrap(), (0.800, 0.735));
    }
}
