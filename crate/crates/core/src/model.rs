//! Pixel-wise two-layer perceptron over a handcrafted feature stack.
//!
//! Per channel the features are: raw intensity, 3x3 mean, 3x3 standard
//! deviation, and Gaussian smoothing at sigma 1 and 2. Two normalized
//! coordinates follow, so `F = 5 * channels + 2`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::paramcore::{LayoutId, ParamVector};
use crate::seeding;
use crate::synthdata::SyntheticCase;

pub const FEATURES_PER_CHANNEL: usize = 5;
pub const DEFAULT_HIDDEN: usize = 16;
/// Output probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;
const SOFT_DICE_SMOOTH: f64 = 1.0;

pub fn feature_count(channels: usize) -> usize {
    channels * FEATURES_PER_CHANNEL + 2
}

/// Per-pixel feature vectors, pixel-major (`data[p * n_features + f]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub rows: usize,
    pub cols: usize,
    pub n_features: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_features..(p + 1) * self.n_features]
    }
}

fn box_stats(img: &Image) -> (Image, Image) {
    let (h, w) = img.shape();
    let mut mean = Image::filled(h, w, 0.0);
    let mut std = Image::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let v = *img.get(rr, cc);
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let m = s / n;
            mean.set(r, c, m);
            std.set(r, c, (s2 / n - m * m).max(0.0).sqrt());
        }
    }
    (mean, std)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let (h, w) = img.shape();
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let tmp = Image::from_fn(h, w, |r, c| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * img.get(r, clamp(c as i64 + t as i64 - radius, w)))
            .sum()
    });
    Image::from_fn(h, w, |r, c| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * tmp.get(clamp(r as i64 + t as i64 - radius, h), c))
            .sum()
    })
}

/// Unstandardized feature stack of a case.
pub fn raw_features(case: &SyntheticCase) -> Result<FeatureStack> {
    let (h, w) = case.shape();
    for ch in &case.channels {
        ch.check_shape(&case.gland_mask)?;
    }
    let n_features = feature_count(case.channels.len());
    let mut planes: Vec<Image> = Vec::with_capacity(n_features);
    for ch in &case.channels {
        let (mean, std) = box_stats(ch);
        planes.push(ch.clone());
        planes.push(mean);
        planes.push(std);
        planes.push(gaussian_blur(ch, 1.0));
        planes.push(gaussian_blur(ch, 2.0));
    }
    let denom = |n: usize| if n > 1 { (n - 1) as f64 } else { 1.0 };
    planes.push(Image::from_fn(h, w, |r, _| r as f64 / denom(h)));
    planes.push(Image::from_fn(h, w, |_, c| c as f64 / denom(w)));
    let mut data = Vec::with_capacity(h * w * n_features);
    for p in 0..h * w {
        for plane in &planes {
            data.push(plane.as_slice()[p]);
        }
    }
    Ok(FeatureStack {
        rows: h,
        cols: w,
        n_features,
        data,
    })
}

/// Mergeable first and second moments of raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl FeatureMoments {
    pub fn new(n_features: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; n_features],
            sum_sq: vec![0.0; n_features],
        }
    }

    pub fn add_stack(&mut self, stack: &FeatureStack) {
        for p in 0..stack.n_pixels() {
            for (f, v) in stack.pixel(p).iter().enumerate() {
                self.sum[f] += v;
                self.sum_sq[f] += v * v;
            }
        }
        self.count += stack.n_pixels() as u64;
    }

    pub fn from_cases(cases: &[SyntheticCase], n_features: usize) -> Result<Self> {
        let mut m = Self::new(n_features);
        for case in cases {
            let stack = raw_features(case)?;
            if stack.n_features != n_features {
                return Err(Error::ShapeMismatch(format!(
                    "case {} yields {} features, expected {n_features}",
                    case.case_id, stack.n_features
                )));
            }
            m.add_stack(&stack);
        }
        Ok(m)
    }

    pub fn merge(&mut self, other: &FeatureMoments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn to_stats(&self) -> Result<FeatureStats> {
        if self.count == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let sd = (s2 / n - m * m).max(0.0).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(FeatureStats { mean, std })
    }
}

/// Standardization statistics, stored with every trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(n_features: usize) -> Self {
        Self {
            mean: vec![0.0; n_features],
            std: vec![1.0; n_features],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Standardized feature stack of `case` under `stats`.
pub fn extract_features(case: &SyntheticCase, stats: &FeatureStats) -> Result<FeatureStack> {
    let mut stack = raw_features(case)?;
    if stack.n_features != stats.n_features() {
        return Err(Error::ShapeMismatch(format!(
            "case has {} features, statistics cover {}",
            stack.n_features,
            stats.n_features()
        )));
    }
    for px in stack.data.chunks_exact_mut(stats.n_features()) {
        for ((v, m), s) in px.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(stack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayout {
    pub n_features: usize,
    pub hidden: usize,
}

impl MlpLayout {
    pub fn new(n_features: usize, hidden: usize) -> Self {
        Self { n_features, hidden }
    }

    pub fn layout_id(&self) -> LayoutId {
        LayoutId::from_dims("pixel-mlp-v1", &[self.n_features, self.hidden])
    }

    pub fn param_count(&self) -> usize {
        self.n_features * self.hidden + 2 * self.hidden + 1
    }
}

/// Flattened as `w1` (row-major, `n_features x hidden`), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layout: MlpLayout,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ModelWeights {
    pub fn zeros(layout: MlpLayout) -> Self {
        Self {
            layout,
            w1: vec![0.0; layout.n_features * layout.hidden],
            b1: vec![0.0; layout.hidden],
            w2: vec![0.0; layout.hidden],
            b2: 0.0,
        }
    }

    pub fn flatten(&self) -> ParamVector {
        ParamVector::new(self.layout.layout_id(), self.flatten_unchecked())
            .expect("model weights are finite")
    }

    pub fn unflatten(layout: MlpLayout, params: &ParamVector) -> Result<Self> {
        if params.layout() != layout.layout_id() || params.len() != layout.param_count() {
            return Err(Error::LayoutMismatch(format!(
                "parameter vector of length {} does not fit {}x{} mlp",
                params.len(),
                layout.n_features,
                layout.hidden
            )));
        }
        let v = params.values();
        let (f, h) = (layout.n_features, layout.hidden);
        Ok(Self {
            layout,
            w1: v[..f * h].to_vec(),
            b1: v[f * h..f * h + h].to_vec(),
            w2: v[f * h + h..f * h + 2 * h].to_vec(),
            b2: v[f * h + 2 * h],
        })
    }

    fn check_features(&self, features: &FeatureStack) -> Result<()> {
        if features.n_features != self.layout.n_features {
            return Err(Error::LayoutMismatch(format!(
                "model expects {} features, stack has {}",
                self.layout.n_features, features.n_features
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform matrices, zero biases.
pub fn init_weights(layout: MlpLayout, seed: u64) -> ModelWeights {
    let mut rng = seeding::stream(seed, "init-weights", 0);
    let (f, h) = (layout.n_features, layout.hidden);
    let a1 = (6.0 / (f + h) as f64).sqrt();
    let a2 = (6.0 / (h + 1) as f64).sqrt();
    let mut w = ModelWeights::zeros(layout);
    w.w1.iter_mut().for_each(|x| *x = rng.gen_range(-a1..a1));
    w.w2.iter_mut().for_each(|x| *x = rng.gen_range(-a2..a2));
    w
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fills `hidden` with post-ReLU activations and returns the output logit.
#[inline]
fn forward_pixel(w: &ModelWeights, f: &[f64], hidden: &mut [f64]) -> f64 {
    let h = w.layout.hidden;
    hidden.copy_from_slice(&w.b1);
    for (i, fi) in f.iter().enumerate() {
        let row = &w.w1[i * h..(i + 1) * h];
        for (z, wv) in hidden.iter_mut().zip(row) {
            *z += fi * wv;
        }
    }
    let mut out = w.b2;
    for (z, w2) in hidden.iter_mut().zip(&w.w2) {
        if *z < 0.0 {
            *z = 0.0;
        }
        out += *z * w2;
    }
    out
}

/// Probability map, `sigmoid(w2 . relu(w1^T f + b1) + b2)` per pixel.
pub fn forward(weights: &ModelWeights, features: &FeatureStack) -> Result<Image> {
    weights.check_features(features)?;
    let mut hidden = vec![0.0; weights.layout.hidden];
    let probs = (0..features.n_pixels())
        .map(|p| {
            sigmoid(forward_pixel(weights, features.pixel(p), &mut hidden))
                .clamp(PROB_EPS, 1.0 - PROB_EPS)
        })
        .collect();
    Image::from_vec(features.rows, features.cols, probs)
}

/// Probability map for a raw case.
pub fn predict(
    weights: &ModelWeights,
    stats: &FeatureStats,
    case: &SyntheticCase,
) -> Result<Image> {
    forward(weights, &extract_features(case, stats)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    BceSoftDice,
}

/// Reusable buffers for one gradient evaluation.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    grad: ModelWeights,
}

impl Workspace {
    fn new(layout: MlpLayout) -> Self {
        Self {
            hidden: Vec::new(),
            logits: Vec::new(),
            grad: ModelWeights::zeros(layout),
        }
    }
}

/// Loss over the selected pixels; the gradient is left in `ws.grad`.
fn batch_loss_grad(
    w: &ModelWeights,
    features: &FeatureStack,
    target: &[f64],
    pixels: &[usize],
    loss: LossKind,
    ws: &mut Workspace,
) -> f64 {
    let h = w.layout.hidden;
    let b = pixels.len();
    ws.hidden.resize(b * h, 0.0);
    ws.logits.resize(b, 0.0);
    for (k, &p) in pixels.iter().enumerate() {
        ws.logits[k] = forward_pixel(w, features.pixel(p), &mut ws.hidden[k * h..(k + 1) * h]);
    }

    let n = b as f64;
    let mut bce = 0.0;
    let (mut s_py, mut s_p, mut s_y) = (0.0, 0.0, 0.0);
    for (k, &p) in pixels.iter().enumerate() {
        let (z, y) = (ws.logits[k], target[p]);
        bce += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        if loss == LossKind::BceSoftDice {
            let prob = sigmoid(z);
            s_py += prob * y;
            s_p += prob;
            s_y += y;
        }
    }
    let mut total = bce / n;
    let dice_den = s_p + s_y + SOFT_DICE_SMOOTH;
    let dice_num = 2.0 * s_py + SOFT_DICE_SMOOTH;
    if loss == LossKind::BceSoftDice {
        total += 1.0 - dice_num / dice_den;
    }

    // dL/dz per pixel, stored over the logits buffer
    for (k, &p) in pixels.iter().enumerate() {
        let (z, y) = (ws.logits[k], target[p]);
        let prob = sigmoid(z);
        let mut dz = (prob - y) / n;
        if loss == LossKind::BceSoftDice {
            let ddice_dp = (2.0 * y * dice_den - dice_num) / (dice_den * dice_den);
            dz -= ddice_dp * prob * (1.0 - prob);
        }
        ws.logits[k] = dz;
    }

    let g = &mut ws.grad;
    g.w1.iter_mut().for_each(|x| *x = 0.0);
    g.b1.iter_mut().for_each(|x| *x = 0.0);
    g.w2.iter_mut().for_each(|x| *x = 0.0);
    g.b2 = 0.0;
    let mut dh = vec![0.0; h];
    for (k, &p) in pixels.iter().enumerate() {
        let dz = ws.logits[k];
        let act = &ws.hidden[k * h..(k + 1) * h];
        g.b2 += dz;
        for j in 0..h {
            g.w2[j] += dz * act[j];
            dh[j] = if act[j] > 0.0 { dz * w.w2[j] } else { 0.0 };
            g.b1[j] += dh[j];
        }
        for (i, fi) in features.pixel(p).iter().enumerate() {
            let row = &mut g.w1[i * h..(i + 1) * h];
            for (gw, d) in row.iter_mut().zip(&dh) {
                *gw += fi * d;
            }
        }
    }
    total
}

/// Mean BCE (optionally plus `1 - soft Dice`) over all pixels and its exact gradient.
pub fn loss_and_gradient(
    weights: &ModelWeights,
    features: &FeatureStack,
    target: &Mask,
    loss: LossKind,
) -> Result<(f64, ParamVector)> {
    weights.check_features(features)?;
    if target.len() != features.n_pixels() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} pixels, features {}",
            target.len(),
            features.n_pixels()
        )));
    }
    let y: Vec<f64> = target.as_slice().iter().map(|&t| t as u8 as f64).collect();
    let pixels: Vec<usize> = (0..features.n_pixels()).collect();
    let mut ws = Workspace::new(weights.layout);
    let value = batch_loss_grad(weights, features, &y, &pixels, loss, &mut ws);
    Ok((value, ws.grad.flatten()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Pixels sampled per image per step.
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 4096,
            epochs: 1,
            loss: LossKind::BceSoftDice,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrainConfig(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidTrainConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidTrainConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A standardized case ready for training.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: FeatureStack,
    pub target: Vec<f64>,
}

impl TrainingExample {
    pub fn new(features: FeatureStack, target: &Mask) -> Result<Self> {
        if target.len() != features.n_pixels() {
            return Err(Error::ShapeMismatch(
                "target and features differ in size".into(),
            ));
        }
        Ok(Self {
            features,
            target: target.as_slice().iter().map(|&t| t as u8 as f64).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    pub weights: ModelWeights,
    /// Mean step loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Runs `config.epochs` epochs of SGD, one step per case per epoch, visiting
/// cases in a seeded shuffled order and sampling a seeded pixel mini-batch.
pub fn train_local(
    weights: &ModelWeights,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<LocalTrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in examples {
        weights.check_features(&ex.features)?;
    }
    let mut rng = seeding::rng_from_seed(config.seed);
    let mut w = weights.clone();
    let mut ws = Workspace::new(w.layout);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut pixels = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let ex = &examples[i];
            let n_pix = ex.features.n_pixels();
            pixels.clear();
            if config.batch_size >= n_pix {
                pixels.extend(0..n_pix);
            } else {
                pixels.extend(rand::seq::index::sample(&mut rng, n_pix, config.batch_size).iter());
                pixels.sort_unstable();
            }
            sum += batch_loss_grad(&w, &ex.features, &ex.target, &pixels, config.loss, &mut ws);
            let lr = config.learning_rate;
            let g = &ws.grad;
            w.w1.iter_mut().zip(&g.w1).for_each(|(x, d)| *x -= lr * d);
            w.b1.iter_mut().zip(&g.b1).for_each(|(x, d)| *x -= lr * d);
            w.w2.iter_mut().zip(&g.w2).for_each(|(x, d)| *x -= lr * d);
            w.b2 -= lr * g.b2;
            steps += 1;
        }
        epoch_losses.push(sum / examples.len() as f64);
    }
    if let Some(i) = w.flatten_unchecked().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(LocalTrainOutcome {
        weights: w,
        epoch_losses,
        steps,
    })
}

impl ModelWeights {
    fn flatten_unchecked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}

/// JSON sidecar written next to an FSPV checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layout: MlpLayout,
    pub layout_id: LayoutId,
    pub stats: FeatureStats,
    pub loss: LossKind,
    pub provenance: serde_json::Value,
}

pub fn save_checkpoint(
    stem: &Path,
    weights: &ModelWeights,
    stats: &FeatureStats,
    loss: LossKind,
    provenance: serde_json::Value,
) -> Result<()> {
    weights.flatten().write_fspv(&stem.with_extension("fspv"))?;
    let meta = CheckpointMeta {
        layout: weights.layout,
        layout_id: weights.layout.layout_id(),
        stats: stats.clone(),
        loss,
        provenance,
    };
    let path = stem.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(stem: &Path) -> Result<(ModelWeights, CheckpointMeta)> {
    let path = stem.with_extension("json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let params = ParamVector::read_fspv(&stem.with_extension("fspv"))?;
    Ok((ModelWeights::unflatten(meta.layout, &params)?, meta))
}
