//! Synthetic camouflage corpus.
//!
//! Every sample is a smooth Gaussian texture. Positive samples additionally
//! carry one axis-aligned elliptical blob whose intensity is offset by
//! `contrast`; the texture itself is drawn identically for both classes.
//! Blob geometry is drawn for negatives too (and simply not painted), so a
//! "blob region" statistic is defined for every sample.

mod codec;
mod records;

pub use codec::{
    decode_pgm, encode_pgm, read_image, read_manifest, read_split, write_image, write_split,
    ManifestRow,
};
pub use records::{
    parse_prediction_records, read_prediction_records, records_by_sample, PredictionRecord,
    SampleViews, View,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Label, SampleId};

/// Standard deviation of the background texture around mid-grey.
pub const TEXTURE_STD: f64 = 0.09;
/// Blob centres jitter by at most this fraction of the side around the centre.
pub const CENTER_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: SampleId,
    pub width: usize,
    pub height: usize,
    /// Row-major grayscale intensities in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub label: Label,
}

impl ImageSample {
    pub fn new(
        id: SampleId,
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        label: Label,
    ) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::Shape {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::IntensityOutOfRange { index, value });
        }
        Ok(ImageSample {
            id,
            width,
            height,
            pixels,
            label,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Same metadata, new pixels (clamped to `[0, 1]`).
    pub(crate) fn with_pixels(&self, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        ImageSample {
            pixels,
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub image_size: usize,
    pub contrast: f64,
    pub texture_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 1000,
            image_size: 32,
            contrast: 0.15,
            texture_scale: 2.0,
            seed: 37,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || !self.n_samples.is_multiple_of(2) {
            return Err(Error::input(format!(
                "n_samples must be a positive even number, got {}",
                self.n_samples
            )));
        }
        if self.image_size < 8 {
            return Err(Error::input("image_size must be at least 8"));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::input(format!(
                "contrast {} outside [0, 1]",
                self.contrast
            )));
        }
        if self.texture_scale.is_nan() || self.texture_scale <= 0.0 {
            return Err(Error::input("texture_scale must be positive"));
        }
        Ok(())
    }
}

/// Axis-aligned ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobRegion {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl BlobRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    pub fn mean_over(&self, image: &ImageSample) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..image.height {
            for x in 0..image.width {
                if self.contains(x, y) {
                    sum += image.at(x, y);
                    n += 1;
                }
            }
        }
        if n == 0 {
            image.mean()
        } else {
            sum / n as f64
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// White noise blurred to correlation length `scale`, rescaled to unit
/// variance.
fn texture(size: usize, scale: f64, rng: &mut rng::Stream) -> Vec<f64> {
    let kernel = gaussian_kernel(scale);
    let r = kernel.len() / 2;
    let full = size + 2 * r;
    let noise: Vec<f64> = (0..full * full)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    // Separable valid-mode convolution: rows, then columns.
    let mut rows = vec![0.0; full * size];
    for y in 0..full {
        for x in 0..size {
            rows[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * noise[y * full + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * rows[(y + k) * size + x])
                .sum();
        }
    }
    // Variance of a 2-D separable blur of unit white noise is (sum k^2)^2.
    let norm = kernel.iter().map(|w| w * w).sum::<f64>();
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

fn draw_region(size: usize, rng: &mut rng::Stream) -> BlobRegion {
    let s = size as f64;
    let rx = rng.random_range(s / 8.0..=s / 4.0);
    let ry = rng.random_range(s / 8.0..=s / 4.0);
    let j = CENTER_JITTER * s;
    let c = (s - 1.0) / 2.0;
    BlobRegion {
        cx: c + rng.random_range(-j..=j),
        cy: c + rng.random_range(-j..=j),
        rx,
        ry,
    }
}

fn balanced_labels(spec: &DatasetSpec) -> Vec<Label> {
    let half = spec.n_samples / 2;
    let mut labels: Vec<Label> = (0..spec.n_samples)
        .map(|i| {
            if i < half {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    labels.shuffle(&mut rng::stream(spec.seed, "labels", &[]));
    labels
}

fn render(spec: &DatasetSpec, id: u64, label: Label) -> (ImageSample, BlobRegion) {
    let size = spec.image_size;
    let mut rng = rng::stream(spec.seed, "sample", &[id]);
    let tex = texture(size, spec.texture_scale, &mut rng);
    let region = draw_region(size, &mut rng);
    let mut pixels: Vec<f64> = tex.iter().map(|t| 0.5 + TEXTURE_STD * t).collect();
    if label == Label::Positive {
        for y in 0..size {
            for x in 0..size {
                if region.contains(x, y) {
                    pixels[y * size + x] += spec.contrast;
                }
            }
        }
    }
    let image = ImageSample {
        id: SampleId(id),
        width: size,
        height: size,
        pixels: pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        label,
    };
    (image, region)
}

/// Generates the corpus together with each sample's blob region.
pub fn generate_dataset_with_regions(spec: &DatasetSpec) -> Result<Vec<(ImageSample, BlobRegion)>> {
    spec.validate()?;
    Ok(balanced_labels(spec)
        .into_iter()
        .enumerate()
        .map(|(i, label)| render(spec, i as u64, label))
        .collect())
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<ImageSample>> {
    Ok(generate_dataset_with_regions(spec)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            val_fraction_of_train: 0.1,
            seed: 37,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

/// Stratified split: test takes `1 - train_fraction` of each class, then val
/// takes `val_fraction_of_train` of what remains.
pub fn split_dataset(samples: Vec<ImageSample>, split: &SplitSpec) -> Result<Splits> {
    for (name, f) in [
        ("train_fraction", split.train_fraction),
        ("val_fraction_of_train", split.val_fraction_of_train),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::input(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    if samples.len() < 10 {
        return Err(Error::input(format!(
            "need at least 10 samples to split, got {}",
            samples.len()
        )));
    }
    let mut by_class: BTreeMap<Label, Vec<ImageSample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label).or_default().push(s);
    }
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for label in [Label::Negative, Label::Positive] {
        let mut class = by_class.remove(&label).unwrap_or_default();
        class.sort_by_key(|s| s.id);
        class.shuffle(&mut rng::stream(
            split.seed,
            "split",
            &[label.value() as u64],
        ));
        let n = class.len();
        let n_test = ((1.0 - split.train_fraction) * n as f64).round() as usize;
        let n_val = (split.val_fraction_of_train * (n - n_test) as f64).round() as usize;
        if n_test == 0 || n_val == 0 || n - n_test - n_val == 0 {
            return Err(Error::input(format!(
                "class {label} cannot populate every split ({n} samples)"
            )));
        }
        let mut rest = class.split_off(n_test);
        splits.test.extend(class);
        let train = rest.split_off(n_val);
        splits.val.extend(rest);
        splits.train.extend(train);
    }
    for part in [&mut splits.train, &mut splits.val, &mut splits.test] {
        part.sort_by_key(|s| s.id);
    }
    Ok(splits)
}
