//! Weak and strong view generators.
//!
//! Weak ops: horizontal flip, small rotation, translate-by-crop.
//! Strong ops: large crop (resized back), affine intensity map, noise or blur,
//! occlusion patch, and a composite of two distinct strong ops.
//! All outputs keep the source dimensions and label and are clamped to `[0, 1]`.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::synth::ImageSample;
use crate::types::SampleId;

/// Operator magnitudes. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub weak_crop_min_area: f64,
    pub strong_crop_area: [f64; 2],
    pub gain: [f64; 2],
    pub bias: [f64; 2],
    pub noise_sigma: [f64; 2],
    pub occlusion_fraction: [f64; 2],
    pub occlusion_fill: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 10.0,
            weak_crop_min_area: 0.9,
            strong_crop_area: [0.4, 0.7],
            gain: [0.6, 1.4],
            bias: [-0.2, 0.2],
            noise_sigma: [0.05, 0.2],
            occlusion_fraction: [0.1, 0.3],
            occlusion_fill: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::input(format!(
                    "augment.{name} must be an ordered [lo, hi] pair"
                )))
            }
        };
        ordered("strong_crop_area", self.strong_crop_area)?;
        ordered("gain", self.gain)?;
        ordered("bias", self.bias)?;
        ordered("noise_sigma", self.noise_sigma)?;
        ordered("occlusion_fraction", self.occlusion_fraction)?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::input(format!("augment.{name} must lie in [0, 1]")))
            }
        };
        unit("weak_crop_min_area", self.weak_crop_min_area)?;
        unit("strong_crop_area[0]", self.strong_crop_area[0])?;
        unit("strong_crop_area[1]", self.strong_crop_area[1])?;
        unit("occlusion_fraction[0]", self.occlusion_fraction[0])?;
        unit("occlusion_fraction[1]", self.occlusion_fraction[1])?;
        unit("occlusion_fill", self.occlusion_fill)?;
        if self.strong_crop_area[0] <= 0.0
            || self.noise_sigma[0] < 0.0
            || self.max_rotation_deg < 0.0
        {
            return Err(Error::input("augment magnitudes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeakOp {
    HFlip,
    SmallRotation,
    RandomCropPad,
}

impl WeakOp {
    pub const ALL: [WeakOp; 3] = [WeakOp::HFlip, WeakOp::SmallRotation, WeakOp::RandomCropPad];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrongOp {
    LargeCrop,
    IntensityTransform,
    QualityDegradation,
    OcclusionPatch,
    Composite,
}

impl StrongOp {
    pub const ALL: [StrongOp; 5] = [
        StrongOp::LargeCrop,
        StrongOp::IntensityTransform,
        StrongOp::QualityDegradation,
        StrongOp::OcclusionPatch,
        StrongOp::Composite,
    ];
    const BASIC: [StrongOp; 4] = [
        StrongOp::LargeCrop,
        StrongOp::IntensityTransform,
        StrongOp::QualityDegradation,
        StrongOp::OcclusionPatch,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    Weak(WeakOp),
    Strong(StrongOp),
}

fn range(rng: &mut Stream, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

pub fn hflip(image: &ImageSample) -> ImageSample {
    let (w, h) = (image.width, image.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = image.pixels[y * w + (w - 1 - x)];
        }
    }
    image.with_pixels(out)
}

/// Bilinear sample with edge replication.
fn sample_bilinear(image: &ImageSample, sx: f64, sy: f64) -> f64 {
    let (w, h) = (image.width as isize, image.height as isize);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let px =
        |x: isize, y: isize| image.pixels[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let (x0, y0) = (x0 as isize, y0 as isize);
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotation about the image centre; exposed corners replicate the edge.
pub fn rotate(image: &ImageSample, degrees: f64) -> ImageSample {
    if degrees == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width, image.height);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse map: rotate the destination point back by `degrees`.
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            out[y * w + x] = sample_bilinear(image, sx, sy);
        }
    }
    image.with_pixels(out)
}

/// Keeps a `keep_w x keep_h` window starting at `(src_x, src_y)` and pastes it
/// at `(dst_x, dst_y)`; everything else becomes `fill`.
pub fn crop_pad(
    image: &ImageSample,
    keep: (usize, usize),
    src: (usize, usize),
    dst: (usize, usize),
    fill: f64,
) -> ImageSample {
    let (w, h) = (image.width, image.height);
    let mut out = vec![fill; w * h];
    for y in 0..keep.1 {
        for x in 0..keep.0 {
            out[(dst.1 + y) * w + dst.0 + x] = image.pixels[(src.1 + y) * w + src.0 + x];
        }
    }
    image.with_pixels(out)
}

/// Crops `(x0, y0, cw, ch)` and resizes it back to full size bilinearly.
pub fn crop_resize(image: &ImageSample, x0: usize, y0: usize, cw: usize, ch: usize) -> ImageSample {
    let (w, h) = (image.width, image.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sx = x0 as f64 + (x as f64 + 0.5) * cw as f64 / w as f64 - 0.5;
            let sy = y0 as f64 + (y as f64 + 0.5) * ch as f64 / h as f64 - 0.5;
            let sx = sx.clamp(x0 as f64, (x0 + cw - 1) as f64);
            let sy = sy.clamp(y0 as f64, (y0 + ch - 1) as f64);
            out[y * w + x] = sample_bilinear(image, sx, sy);
        }
    }
    image.with_pixels(out)
}

pub fn intensity_transform(image: &ImageSample, gain: f64, bias: f64) -> ImageSample {
    image.with_pixels(image.pixels.iter().map(|p| gain * p + bias).collect())
}

pub fn add_noise(image: &ImageSample, sigma: f64, rng: &mut Stream) -> ImageSample {
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite");
    image.with_pixels(
        image
            .pixels
            .iter()
            .map(|p| p + normal.sample(rng))
            .collect(),
    )
}

/// 3x3 box blur with edge replication.
pub fn box_blur(image: &ImageSample) -> ImageSample {
    let (w, h) = (image.width as isize, image.height as isize);
    let mut out = vec![0.0; image.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let xx = (x + dx).clamp(0, w - 1);
                    let yy = (y + dy).clamp(0, h - 1);
                    s += image.pixels[(yy * w + xx) as usize];
                }
            }
            out[(y * w + x) as usize] = s / 9.0;
        }
    }
    image.with_pixels(out)
}

/// Patch geometry covering exactly `count` pixels: full rows of `width`
/// pixels plus one partial row.
pub fn occlusion_shape(count: usize, image_w: usize) -> (usize, usize) {
    let width = ((count as f64).sqrt().ceil() as usize).clamp(1, image_w);
    (width, count.div_ceil(width))
}

/// Sets exactly `round(fraction * N)` pixels to `fill`, filled row-major in a
/// patch anchored at `(x0, y0)`.
pub fn occlude(image: &ImageSample, fraction: f64, x0: usize, y0: usize, fill: f64) -> ImageSample {
    let n = image.pixels.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    let (pw, ph) = occlusion_shape(count, image.width);
    let x0 = x0.min(image.width - pw);
    let y0 = y0.min(image.height.saturating_sub(ph));
    let mut out = image.pixels.clone();
    for k in 0..count {
        let (dy, dx) = (k / pw, k % pw);
        out[(y0 + dy) * image.width + x0 + dx] = fill;
    }
    image.with_pixels(out)
}

pub fn choose_weak_op(rng: &mut Stream) -> WeakOp {
    WeakOp::ALL[rng.random_range(0..WeakOp::ALL.len())]
}

pub fn choose_strong_op(rng: &mut Stream) -> StrongOp {
    StrongOp::ALL[rng.random_range(0..StrongOp::ALL.len())]
}

pub fn apply_weak(
    image: &ImageSample,
    op: WeakOp,
    cfg: &AugmentConfig,
    rng: &mut Stream,
) -> ImageSample {
    match op {
        WeakOp::HFlip => hflip(image),
        WeakOp::SmallRotation => {
            let m = cfg.max_rotation_deg;
            rotate(image, range(rng, [-m, m]))
        }
        WeakOp::RandomCropPad => {
            let (w, h) = (image.width, image.height);
            // Per-axis keep fraction sqrt(area) so the kept area is >= the minimum.
            let side = cfg.weak_crop_min_area.sqrt();
            let kw = ((w as f64 * range(rng, [side, 1.0])).ceil() as usize).clamp(1, w);
            let kh = ((h as f64 * range(rng, [side, 1.0])).ceil() as usize).clamp(1, h);
            let src = (rng.random_range(0..=w - kw), rng.random_range(0..=h - kh));
            let dst = (rng.random_range(0..=w - kw), rng.random_range(0..=h - kh));
            crop_pad(image, (kw, kh), src, dst, image.mean())
        }
    }
}

fn apply_basic_strong(
    image: &ImageSample,
    op: StrongOp,
    cfg: &AugmentConfig,
    rng: &mut Stream,
) -> ImageSample {
    let (w, h) = (image.width, image.height);
    match op {
        StrongOp::LargeCrop => {
            let side = range(rng, cfg.strong_crop_area).sqrt();
            let cw = ((w as f64 * side).round() as usize).clamp(1, w);
            let ch = ((h as f64 * side).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - cw);
            let y0 = rng.random_range(0..=h - ch);
            crop_resize(image, x0, y0, cw, ch)
        }
        StrongOp::IntensityTransform => {
            let gain = range(rng, cfg.gain);
            let bias = range(rng, cfg.bias);
            intensity_transform(image, gain, bias)
        }
        StrongOp::QualityDegradation => {
            if rng.random_bool(0.5) {
                let sigma = range(rng, cfg.noise_sigma);
                add_noise(image, sigma, rng)
            } else {
                box_blur(image)
            }
        }
        StrongOp::OcclusionPatch => {
            let fraction = range(rng, cfg.occlusion_fraction);
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            occlude(image, fraction, x0, y0, cfg.occlusion_fill)
        }
        StrongOp::Composite => unreachable!("composite is not a basic op"),
    }
}

pub fn apply_strong(
    image: &ImageSample,
    op: StrongOp,
    cfg: &AugmentConfig,
    rng: &mut Stream,
) -> ImageSample {
    match op {
        StrongOp::Composite => {
            let first = rng.random_range(0..StrongOp::BASIC.len());
            let mut second = rng.random_range(0..StrongOp::BASIC.len() - 1);
            if second >= first {
                second += 1;
            }
            let once = apply_basic_strong(image, StrongOp::BASIC[first], cfg, rng);
            apply_basic_strong(&once, StrongOp::BASIC[second], cfg, rng)
        }
        basic => apply_basic_strong(image, basic, cfg, rng),
    }
}

pub fn weak_augment(image: &ImageSample, cfg: &AugmentConfig, rng: &mut Stream) -> ImageSample {
    let op = choose_weak_op(rng);
    apply_weak(image, op, cfg, rng)
}

pub fn strong_augment(image: &ImageSample, cfg: &AugmentConfig, rng: &mut Stream) -> ImageSample {
    let op = choose_strong_op(rng);
    apply_strong(image, op, cfg, rng)
}

#[derive(Debug, Clone)]
pub struct ViewSet {
    pub weak: ImageSample,
    pub strong: Vec<ImageSample>,
}

/// Identifies the random streams of one view-generation pass.
#[derive(Debug, Clone, Copy)]
pub struct ViewContext<'a> {
    pub seed: u64,
    pub tag: &'a str,
    pub epoch: u64,
}

/// One weak and `n` strong views; view `j` uses its own stream keyed by
/// `(seed, tag, sample id, epoch, j)` with `j = 0` for the weak view.
pub fn make_views(
    image: &ImageSample,
    n: usize,
    cfg: &AugmentConfig,
    ctx: ViewContext<'_>,
) -> Result<ViewSet> {
    if n == 0 {
        return Err(Error::input("at least one strong view is required"));
    }
    let stream_for = |j: u64| rng::stream(ctx.seed, ctx.tag, &[image.id.0, ctx.epoch, j]);
    let weak = weak_augment(image, cfg, &mut stream_for(0));
    let strong = (1..=n as u64)
        .map(|j| strong_augment(image, cfg, &mut stream_for(j)))
        .collect();
    Ok(ViewSet { weak, strong })
}

/// Stream used for a training-time augmentation of one sample slot.
pub fn training_stream(seed: u64, tag: &str, id: SampleId, epoch: usize, slot: usize) -> Stream {
    rng::stream(seed, tag, &[id.0, epoch as u64, slot as u64])
}
