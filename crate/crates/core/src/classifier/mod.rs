//! A small fully-connected classifier trained from scratch.
//!
//! ReLU hidden layers, softmax head, cross-entropy loss with a `1e-12` clamp,
//! exact batched backprop and classical momentum SGD. `grad_check` compares
//! backprop against central finite differences.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng;
use crate::synth::ImageSample;
use crate::types::{Label, ProbVector};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 32, 8];

/// Input features for an image: the flattened pixels, centred on mid-grey.
pub fn features(image: &ImageSample) -> Vec<f64> {
    image.pixels.iter().map(|p| p - 0.5).collect()
}

/// One affine layer; `weights` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
}

/// Same shape as [`ModelParams`]; also used for momentum state.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::input(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::input("the output layer needs at least 2 classes"));
        }
        Ok(ModelParams {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut params = ModelParams::zeros(sizes)?;
        let mut rng = rng::stream(seed, "init", &[]);
        for layer in &mut params.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        Ok(params)
    }

    /// `[D, hidden..., C]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.nrows()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in layer order (weights row-major, then bias).
    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                let cols = l.weights.ncols();
                return &mut l.weights[[index / cols, index % cols]];
            }
            index -= nw;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|v| v * factor);
            l.bias.mapv_inplace(|v| v * factor);
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter_flat().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<()> {
        for (layer, l) in self.layers.iter().enumerate() {
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite { layer });
            }
        }
        Ok(())
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

struct Trace {
    /// Layer inputs: `inputs[0]` is the batch, `inputs[l]` the activation fed to layer `l`.
    inputs: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

fn run_forward(params: &ModelParams, x: ArrayView2<f64>, keep: bool) -> Result<Trace> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Shape {
            expected: params.input_dim(),
            found: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite input feature"));
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::new();
    let mut act = x.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = act.dot(&layer.weights);
        z += &layer.bias;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: i });
        }
        if i < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        if keep {
            inputs.push(std::mem::replace(&mut act, z));
        } else {
            act = z;
        }
    }
    softmax_rows(&mut act);
    Ok(Trace { inputs, probs: act })
}

/// Class probabilities for a batch of feature rows.
pub fn forward_batch(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(run_forward(params, x, false)?.probs)
}

pub fn forward(params: &ModelParams, features: &[f64]) -> Result<ProbVector> {
    let x = ArrayView2::from_shape((1, features.len()), features).map_err(|_| Error::Shape {
        expected: params.input_dim(),
        found: features.len(),
    })?;
    let probs = forward_batch(params, x)?;
    Ok(ProbVector::from_softmax(probs.row(0).to_vec()))
}

/// Predicts every image (unaugmented), in input order.
pub fn predict_images<'a, I>(params: &ModelParams, images: I) -> Result<Vec<ProbVector>>
where
    I: IntoIterator<Item = &'a ImageSample>,
{
    let rows: Vec<Vec<f64>> = images.into_iter().map(features).collect();
    predict_rows(params, &rows)
}

pub(crate) fn stack(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let mut x = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Shape {
                expected: d,
                found: r.len(),
            });
        }
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(r.as_slice()));
    }
    Ok(x)
}

/// Forward in chunks so large scoring passes stay cache-friendly.
pub fn predict_rows(params: &ModelParams, rows: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let probs = forward_batch(params, stack(chunk)?.view())?;
        out.extend(
            probs
                .rows()
                .into_iter()
                .map(|r| ProbVector::from_softmax(r.to_vec())),
        );
    }
    Ok(out)
}

pub fn loss_ce(prob: &ProbVector, y: Label) -> f64 {
    -prob.get(y.index()).max(PROB_FLOOR).ln()
}

/// One weighted training example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: Label,
    pub weight: f64,
}

fn check_batch(batch: &[Example<'_>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if let Some(e) = batch
        .iter()
        .find(|e| !e.weight.is_finite() || e.weight < 0.0)
    {
        return Err(Error::input(format!(
            "example weight {} must be finite and >= 0",
            e.weight
        )));
    }
    Ok(())
}

/// Mean weighted loss `(1/N) sum w_i l_i`.
pub fn batch_loss(params: &ModelParams, batch: &[Example<'_>]) -> Result<f64> {
    check_batch(batch)?;
    let rows: Vec<Vec<f64>> = batch.iter().map(|e| e.features.to_vec()).collect();
    let probs = forward_batch(params, stack(&rows)?.view())?;
    let total: f64 = batch
        .iter()
        .zip(probs.rows())
        .map(|(e, p)| e.weight * -p[e.label.index()].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of `sum w_i l_i` (not divided by the batch size) and the summed
/// weighted loss.
pub(crate) fn backward_sum(
    params: &ModelParams,
    batch: &[Example<'_>],
) -> Result<(Gradients, f64)> {
    check_batch(batch)?;
    let mut grads = params.zeros_like();
    let active: Vec<&Example<'_>> = batch.iter().filter(|e| e.weight > 0.0).collect();
    if active.is_empty() {
        return Ok((grads, 0.0));
    }
    let rows: Vec<Vec<f64>> = active.iter().map(|e| e.features.to_vec()).collect();
    let trace = run_forward(params, stack(&rows)?.view(), true)?;

    let mut loss = 0.0;
    // d(sum w l)/d logits = w (p - onehot(y)) for softmax + CE.
    let mut delta = trace.probs.clone();
    for (i, e) in active.iter().enumerate() {
        loss += e.weight * -trace.probs[[i, e.label.index()]].max(PROB_FLOOR).ln();
        delta[[i, e.label.index()]] -= 1.0;
        delta.row_mut(i).mapv_inplace(|v| v * e.weight);
    }
    for l in (0..params.layers.len()).rev() {
        let input = &trace.inputs[l];
        grads.layers[l].weights = input.t().dot(&delta);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&params.layers[l].weights.t());
            // `input` is the post-ReLU activation of layer l-1; zero where the unit was off.
            ndarray::Zip::from(&mut prev).and(input).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    for (layer, g) in grads.layers.iter().enumerate() {
        if g.weights
            .iter()
            .chain(g.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite { layer });
        }
    }
    Ok((grads, loss))
}

/// Gradient of the mean weighted loss over the batch.
pub fn backward(params: &ModelParams, batch: &[Example<'_>]) -> Result<Gradients> {
    let (mut g, _) = backward_sum(params, batch)?;
    g.scale(1.0 / batch.len() as f64);
    Ok(g)
}

/// Momentum buffer for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub ModelParams);

impl Velocity {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Velocity(params.zeros_like())
    }
}

/// `v <- momentum * v - lr * g; theta <- theta + v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    if params.sizes() != grads.sizes() || params.sizes() != velocity.0.sizes() {
        return Err(Error::input(
            "parameter, gradient and velocity shapes differ",
        ));
    }
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.0.layers)
    {
        ndarray::Zip::from(&mut v.weights)
            .and(&g.weights)
            .for_each(|v, &g| *v = momentum * *v - lr * g);
        ndarray::Zip::from(&mut v.bias)
            .and(&g.bias)
            .for_each(|v, &g| *v = momentum * *v - lr * g);
        p.weights += &v.weights;
        p.bias += &v.bias;
    }
    params.check_finite()
}

/// Finite-difference steps below this are dominated by rounding error.
pub const MIN_STABLE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
    /// Set when `eps` is below [`MIN_STABLE_EPS`].
    pub warning: Option<String>,
}

/// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// with central differences of step `eps`.
pub fn grad_check(
    params: &ModelParams,
    batch: &[Example<'_>],
    eps: f64,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::input("eps must be positive"));
    }
    let warning = (eps < MIN_STABLE_EPS).then(|| {
        let msg = format!("eps {eps:e} is below the stable range (>= {MIN_STABLE_EPS:e})");
        log::warn!("{msg}");
        msg
    });
    let analytic: Vec<f64> = backward(params, batch)?.iter_flat().collect();
    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *probe.flat_mut(i);
        *probe.flat_mut(i) = orig + eps;
        let plus = batch_loss(&probe, batch)?;
        *probe.flat_mut(i) = orig - eps;
        let minus = batch_loss(&probe, batch)?;
        *probe.flat_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        params_checked: analytic.len(),
        warning,
    })
}

/// Default central-difference step for [`seeded_grad_check`].
pub const GRAD_CHECK_EPS: f64 = 1e-4;

/// Grad check of a freshly initialised `sizes` network on `batch` inputs drawn
/// uniformly from `[-1, 1]`, with alternating labels. Everything derives from `seed`.
pub fn seeded_grad_check(
    sizes: &[usize],
    seed: u64,
    batch: usize,
    eps: f64,
) -> Result<GradCheckReport> {
    let params = ModelParams::init(sizes, seed)?;
    let mut r = rng::stream(seed, "grad-check", &[]);
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..sizes[0]).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let examples: Vec<Example<'_>> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| Example {
            features: x,
            label: if i % 2 == 0 {
                Label::Positive
            } else {
                Label::Negative
            },
            weight: 1.0,
        })
        .collect();
    grad_check(&params, &examples, eps)
}
