//! Live review sessions: deferred targets are presented one at a time with
//! filler images between them, and the collected judgments are fused like a
//! replayed channel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::deferral::{fuse, select_deferred, FusionResult, Replay};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::{encode_pgm, ImageSample};
use crate::types::{Label, SampleId};

/// Fillers between consecutive targets.
pub const MIN_FILLERS: usize = 3;
/// Suggested presentation time per item.
pub const DISPLAY_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Target,
    Filler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: SampleId,
    pub kind: ItemKind,
}

/// Presentation order: targets in seeded random order with exactly
/// `MIN_FILLERS + extra` distinct fillers between consecutive targets.
pub fn build_sequence(
    deferred: &[SampleId],
    filler_pool: &[SampleId],
    seed: u64,
    extra: usize,
) -> Result<Vec<ReviewItem>> {
    if deferred.is_empty() {
        return Err(Error::input(
            "a review session needs at least one deferred sample",
        ));
    }
    let gap = MIN_FILLERS + extra;
    let required = gap * (deferred.len() - 1);
    let pool: BTreeSet<SampleId> = filler_pool
        .iter()
        .copied()
        .filter(|id| !deferred.contains(id))
        .collect();
    if pool.len() < required {
        return Err(Error::input(format!(
            "{} deferred samples need at least {required} filler images, got {}",
            deferred.len(),
            pool.len()
        )));
    }
    let mut rng = rng::stream(seed, "review-order", &[]);
    let mut targets = deferred.to_vec();
    targets.sort();
    targets.shuffle(&mut rng);
    let mut fillers: Vec<SampleId> = pool.into_iter().collect();
    fillers.shuffle(&mut rng);
    let mut fillers = fillers.into_iter();

    let mut items = Vec::with_capacity(deferred.len() + required);
    for (k, id) in targets.into_iter().enumerate() {
        if k > 0 {
            items.extend(fillers.by_ref().take(gap).map(|id| ReviewItem {
                id,
                kind: ItemKind::Filler,
            }));
        }
        items.push(ReviewItem {
            id,
            kind: ItemKind::Target,
        });
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: SampleId,
    pub label: Label,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub client_timestamp: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Complete,
}

/// Pipeline outputs a session draws from: model predictions, truths and
/// uncertainty scores on the test set, test images, and a pool of filler images.
#[derive(Debug, Clone)]
pub struct ReviewRun {
    pub model_preds: Vec<(SampleId, Label)>,
    pub truths: Vec<(SampleId, Label)>,
    pub scores: Vec<(SampleId, f64)>,
    pub images: BTreeMap<SampleId, ImageSample>,
    pub fillers: BTreeMap<SampleId, ImageSample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReviewSession {
    pub id: String,
    pub run_id: String,
    pub proportion: f64,
    pub items: Vec<ReviewItem>,
    pub cursor: usize,
    pub state: SessionState,
    pub auto_advance_fillers: bool,
    pub judgments: BTreeMap<SampleId, Judgment>,
    pub filler_judgments: Vec<Judgment>,
    #[serde(skip)]
    run: Option<Arc<ReviewRun>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Item {
        item_id: SampleId,
        kind: ItemKind,
        image: Vec<u8>,
        display_ms: u64,
    },
    Done,
}

impl ReviewSession {
    pub fn remaining_targets(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.kind == ItemKind::Target)
            .count()
            - self.judgments.len()
    }

    fn run(&self) -> &ReviewRun {
        self.run
            .as_deref()
            .expect("sessions are created with their run")
    }

    fn image(&self, item: &ReviewItem) -> Result<Vec<u8>> {
        let run = self.run();
        let image = match item.kind {
            ItemKind::Target => run.images.get(&item.id),
            ItemKind::Filler => run.fillers.get(&item.id),
        };
        encode_pgm(image.ok_or(Error::ChannelMissing(item.id))?)
    }

    fn close_if_done(&mut self) {
        if self.cursor >= self.items.len() {
            self.state = SessionState::Complete;
        }
    }

    /// The item at the cursor. With auto-advance, serving a filler moves the
    /// cursor past it; targets stay current until judged.
    pub fn next_item(&mut self) -> Result<Next> {
        if self.state == SessionState::Complete {
            return Ok(Next::Done);
        }
        let item = self.items[self.cursor];
        let image = self.image(&item)?;
        if item.kind == ItemKind::Filler && self.auto_advance_fillers {
            self.cursor += 1;
            self.close_if_done();
        }
        Ok(Next::Item {
            item_id: item.id,
            kind: item.kind,
            image,
            display_ms: DISPLAY_MS,
        })
    }

    /// Records a judgment for the item at the cursor. Rejected submissions
    /// leave the session unchanged.
    pub fn submit_judgment(&mut self, judgment: Judgment) -> Result<()> {
        let id = judgment.item_id;
        if self.judgments.contains_key(&id) || self.filler_judgments.iter().any(|j| j.item_id == id)
        {
            return Err(Error::Conflict(format!("duplicate judgment for item {id}")));
        }
        if self.state == SessionState::Complete {
            return Err(Error::Conflict(format!("session {} is complete", self.id)));
        }
        let current = self.items[self.cursor];
        if current.id != id {
            return Err(Error::Conflict(format!(
                "out-of-order judgment: expected item {}, got {id}",
                current.id
            )));
        }
        match current.kind {
            ItemKind::Target => {
                self.judgments.insert(id, judgment);
            }
            ItemKind::Filler => self.filler_judgments.push(judgment),
        }
        self.cursor += 1;
        self.close_if_done();
        Ok(())
    }

    /// Fusion over the deferred judgments only.
    pub fn results(&self) -> Result<FusionResult> {
        if self.state != SessionState::Complete {
            return Err(Error::SessionIncomplete {
                remaining: self.remaining_targets(),
            });
        }
        let run = self.run();
        let labels: BTreeMap<_, _> = self
            .judgments
            .iter()
            .map(|(id, j)| (*id, j.label))
            .collect();
        let deferred: BTreeSet<_> = labels.keys().copied().collect();
        fuse(
            &run.model_preds,
            &run.truths,
            &mut Replay::new(labels),
            &deferred,
        )
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub seed: u64,
    pub auto_advance_fillers: bool,
    /// Fillers beyond the minimum between consecutive targets.
    pub extra_fillers: usize,
    /// Completed sessions are written here as `<session id>.json`.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            seed: 37,
            auto_advance_fillers: true,
            extra_fillers: 0,
            snapshot_dir: None,
        }
    }
}

/// In-memory registry of runs and sessions. Each session sits behind its own lock.
#[derive(Debug, Default)]
pub struct SessionStore {
    config: StoreConfig,
    runs: BTreeMap<String, Arc<ReviewRun>>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<ReviewSession>>>>,
    counter: Mutex<u64>,
}

impl SessionStore {
    pub fn new(config: StoreConfig) -> Self {
        SessionStore {
            config,
            ..Default::default()
        }
    }

    pub fn add_run(&mut self, run_id: &str, run: ReviewRun) {
        self.runs.insert(run_id.to_string(), Arc::new(run));
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.keys().cloned().collect()
    }

    /// Defers the top `proportion` of the run's test set and registers a
    /// session for it. Returns the session id and sequence length.
    pub fn create_session(&self, run_id: &str, proportion: f64) -> Result<(String, usize)> {
        let run = self
            .runs
            .get(run_id)
            .ok_or_else(|| Error::input(format!("unknown run `{run_id}`")))?
            .clone();
        let deferred: Vec<_> = select_deferred(&run.scores, proportion)?
            .into_iter()
            .collect();
        let pool: Vec<_> = run.fillers.keys().copied().collect();
        let n = {
            let mut c = self.counter.lock().unwrap();
            *c += 1;
            *c
        };
        let items = build_sequence(
            &deferred,
            &pool,
            rng::derive_seed(self.config.seed, "session", &[n]),
            self.config.extra_fillers,
        )?;
        let id = format!("s{n:04}");
        let session = ReviewSession {
            id: id.clone(),
            run_id: run_id.to_string(),
            proportion,
            cursor: 0,
            state: SessionState::Open,
            auto_advance_fillers: self.config.auto_advance_fillers,
            judgments: BTreeMap::new(),
            filler_judgments: Vec::new(),
            run: Some(run),
            items,
        };
        let len = session.items.len();
        self.sessions
            .lock()
            .unwrap()
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok((id, len))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ReviewSession>>> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn next_item(&self, id: &str) -> Result<Next> {
        self.session(id)?.lock().unwrap().next_item()
    }

    pub fn submit_judgment(&self, id: &str, judgment: Judgment) -> Result<()> {
        let session = self.session(id)?;
        let mut s = session.lock().unwrap();
        s.submit_judgment(judgment)?;
        if s.state == SessionState::Complete {
            if let Some(dir) = &self.config.snapshot_dir {
                let path = dir.join(format!("{}.json", s.id));
                let bytes = serde_json::to_vec_pretty(&*s)?;
                std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn results(&self, id: &str) -> Result<FusionResult> {
        self.session(id)?.lock().unwrap().results()
    }

    pub fn snapshot(&self, id: &str) -> Result<ReviewSession> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }
}
