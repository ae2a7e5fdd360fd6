//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use camoguard_core::classifier::{features, ModelParams, DEFAULT_HIDDEN};
use camoguard_core::synth::{generate_dataset, DatasetSpec, ImageSample};
use camoguard_core::{Label, SampleId};

/// `n` synthetic images at the default size.
pub fn corpus(n: usize) -> Vec<ImageSample> {
    generate_dataset(&DatasetSpec {
        n_samples: n,
        ..DatasetSpec::default()
    })
    .expect("valid spec")
}

/// Freshly initialised default-architecture model for `input_dim` features.
pub fn model(input_dim: usize) -> ModelParams {
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(&DEFAULT_HIDDEN);
    sizes.push(2);
    ModelParams::init(&sizes, 37).expect("valid sizes")
}

pub fn feature_rows(images: &[ImageSample]) -> Vec<Vec<f64>> {
    images.iter().map(features).collect()
}

/// Deterministic pseudo-random scores and correctness bits for `n` ids.
pub fn scores(n: usize) -> (Vec<(SampleId, f64)>, BTreeMap<SampleId, bool>) {
    let scores = (0..n as u64)
        .map(|i| (SampleId(i), ((i * 7919) % 1009) as f64 / 500.0))
        .collect();
    let correct = (0..n as u64).map(|i| (SampleId(i), i % 4 != 0)).collect();
    (scores, correct)
}

pub fn labels(images: &[ImageSample]) -> Vec<Label> {
    images.iter().map(|s| s.label).collect()
}
