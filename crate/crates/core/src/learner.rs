//! Small trainable regressor: a fixed hand-crafted feature extractor feeding
//! a multilayer perceptron with a sigmoid output, trained by plain
//! mini-batch SGD on squared error.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingExample;
use crate::error::{Error, Result};
use crate::image::{hsv_saturation, luminance, resize_for_model, RasterImage};
use crate::modelfile::{self, ModelFile, ModelKind};
use crate::nn::{relative_error, sgd_step, LayerSpec, Network};

pub const EXTRACTOR_VERSION: u32 = 1;
pub const LUMINANCE_EXTRACTOR_VERSION: u32 = 2;
pub const LUMINANCE_FEATURE_LEN: usize = 64;
pub const FEATURE_LEN: usize = 112;
const BINS: usize = 16;
const GRID: usize = 4;
/// Gradient magnitudes are binned on `sqrt(g / GRADIENT_RANGE)`.
const GRADIENT_RANGE: f64 = 0.5;

/// Extractor v1 layout: `[0, 48)` R/G/B histograms, `[48, 64)` HSV
/// saturation histogram, `[64, 80)` luminance gradient-magnitude histogram,
/// `[80, 112)` 4x4 grid of luminance (mean, standard deviation) pairs.
/// Histograms hold pixel fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

pub const RGB_HIST_OFFSET: usize = 0;
pub const SAT_HIST_OFFSET: usize = 3 * BINS;
pub const GRAD_HIST_OFFSET: usize = 4 * BINS;
/// Grid block `(bx, by)` stores its mean at `GRID_OFFSET + 2 * (by * 4 + bx)`
/// and its standard deviation right after.
pub const GRID_OFFSET: usize = 5 * BINS;

#[inline]
fn bin(v: f64) -> usize {
    ((v * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

pub fn extract_features(img: &RasterImage) -> Result<FeatureVector> {
    let (w, h) = square_dims(img)?;
    let n = (w * h) as f64;
    let mut f = vec![0.0; FEATURE_LEN];
    for &p in img.pixels() {
        for c in 0..3 {
            f[RGB_HIST_OFFSET + c * BINS + bin(p[c])] += 1.0 / n;
        }
        f[SAT_HIST_OFFSET + bin(hsv_saturation(p))] += 1.0 / n;
    }
    let lum = img.luminance_plane();
    gradient_histogram(&lum, w, h, &mut f[GRAD_HIST_OFFSET..GRAD_HIST_OFFSET + BINS]);
    grid_stats(&lum, w, h, &mut f[GRID_OFFSET..]);
    Ok(FeatureVector(f))
}

/// Luminance-only features: `[0, 16)` luminance histogram, `[16, 32)`
/// gradient-magnitude histogram, `[32, 64)` 4x4 grid (mean, std) pairs.
/// Blind to chroma, so color edits that keep luminance leave them unchanged.
pub fn extract_luminance_features(img: &RasterImage) -> Result<FeatureVector> {
    let (w, h) = square_dims(img)?;
    let n = (w * h) as f64;
    let lum = img.luminance_plane();
    let mut f = vec![0.0; LUMINANCE_FEATURE_LEN];
    for &l in &lum {
        f[bin(l)] += 1.0 / n;
    }
    gradient_histogram(&lum, w, h, &mut f[BINS..2 * BINS]);
    grid_stats(&lum, w, h, &mut f[2 * BINS..]);
    Ok(FeatureVector(f))
}

fn square_dims(img: &RasterImage) -> Result<(usize, usize)> {
    let (w, h) = img.dims();
    if w != h {
        return Err(Error::arg(format!("feature extraction needs a square image, got {w}x{h}")));
    }
    Ok((w, h))
}

fn gradient_histogram(lum: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let n = (w * h) as f64;
    for y in 0..h {
        for x in 0..w {
            let gx = (lum[y * w + (x + 1).min(w - 1)] - lum[y * w + x.saturating_sub(1)]) / 2.0;
            let gy = (lum[(y + 1).min(h - 1) * w + x] - lum[y.saturating_sub(1) * w + x]) / 2.0;
            let g = (gx * gx + gy * gy).sqrt();
            out[bin((g / GRADIENT_RANGE).sqrt())] += 1.0 / n;
        }
    }
}

fn grid_stats(lum: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for by in 0..GRID {
        for bx in 0..GRID {
            let (x0, x1) = (bx * w / GRID, (bx + 1) * w / GRID);
            let (y0, y1) = (by * h / GRID, (by + 1) * h / GRID);
            let count = ((x1 - x0) * (y1 - y0)).max(1) as f64;
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += lum[y * w + x];
                }
            }
            let mean = sum / count;
            let mut var = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = lum[y * w + x] - mean;
                    var += d * d;
                }
            }
            let k = 2 * (by * GRID + bx);
            out[k] = mean;
            out[k + 1] = (var / count).sqrt();
        }
    }
}

/// Feature extractors a model can be bound to, identified by the version
/// number stored in model files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// Color histograms, gradients and the luminance grid.
    #[default]
    Color,
    /// Luminance histogram, gradients and the luminance grid.
    Luminance,
}

impl Extractor {
    pub fn version(self) -> u32 {
        match self {
            Extractor::Color => EXTRACTOR_VERSION,
            Extractor::Luminance => LUMINANCE_EXTRACTOR_VERSION,
        }
    }

    pub fn from_version(v: u32) -> Result<Self> {
        match v {
            EXTRACTOR_VERSION => Ok(Extractor::Color),
            LUMINANCE_EXTRACTOR_VERSION => Ok(Extractor::Luminance),
            other => Err(Error::IncompatibleModel(format!(
                "model built for feature extractor v{other}, this build provides v{EXTRACTOR_VERSION} and v{LUMINANCE_EXTRACTOR_VERSION}"
            ))),
        }
    }

    pub fn len(self) -> usize {
        match self {
            Extractor::Color => FEATURE_LEN,
            Extractor::Luminance => LUMINANCE_FEATURE_LEN,
        }
    }

    pub fn extract(self, img: &RasterImage) -> Result<FeatureVector> {
        match self {
            Extractor::Color => extract_features(img),
            Extractor::Luminance => extract_luminance_features(img),
        }
    }
}

pub fn mean_luminance(img: &RasterImage) -> f64 {
    img.pixels().iter().map(|&p| luminance(p)).sum::<f64>() / img.pixels().len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Reshuffle example order every epoch.
    pub shuffle: bool,
    #[serde(default)]
    pub extractor: Extractor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            hidden: vec![64],
            shuffle: true,
            extractor: Extractor::Color,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::arg("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// MLP regressor with a sigmoid output and a fixed input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    network: Network,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    extractor_version: u32,
    input_size: usize,
}

fn mlp_layers(input_len: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = input_len;
    for &h in hidden {
        layers.push(LayerSpec::Dense { inputs: prev, outputs: h });
        layers.push(LayerSpec::Tanh { len: h });
        prev = h;
    }
    layers.push(LayerSpec::Dense { inputs: prev, outputs: 1 });
    layers.push(LayerSpec::Sigmoid { len: 1 });
    layers
}

impl MlpModel {
    /// All-zero weights: predicts exactly 0.5 everywhere.
    pub fn zeros(input_len: usize, hidden: &[usize], input_size: usize) -> Result<Self> {
        Ok(MlpModel {
            network: Network::zeros(mlp_layers(input_len, hidden))?,
            input_shift: vec![0.0; input_len],
            input_scale: vec![1.0; input_len],
            extractor_version: EXTRACTOR_VERSION,
            input_size,
        })
    }

    pub fn seeded(input_len: usize, hidden: &[usize], input_size: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(input_len, hidden, input_size)?;
        m.network.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(m)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn extractor_version(&self) -> u32 {
        self.extractor_version
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn input_len(&self) -> usize {
        self.network.input_len()
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn set_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        if shift.len() != self.input_len() || scale.len() != self.input_len() {
            return Err(Error::arg("normalization length does not match model input"));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features.iter().zip(self.input_shift.iter().zip(&self.input_scale)).map(|(v, (s, k))| (v - s) * k).collect()
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_len() {
            return Err(Error::IncompatibleModel(format!(
                "model expects {} features, got {}",
                self.input_len(),
                features.len()
            )));
        }
        Ok(self.network.forward(&self.normalize(features))[0])
    }

    /// Scores an image; non-square or differently sized inputs are first
    /// resampled to the model's training square.
    pub fn predict(&self, img: &RasterImage) -> Result<f64> {
        let extractor = Extractor::from_version(self.extractor_version)?;
        let s = self.input_size;
        let prepared;
        let img = if img.dims() != (s, s) {
            prepared = resize_for_model(img, s, s)?;
            &prepared
        } else {
            img
        };
        self.predict_features(&extractor.extract(img)?.0)
    }

    /// Squared-error loss and its gradient over all parameters.
    pub fn loss_gradient(&self, features: &[f64], target: f64) -> (f64, Vec<f64>) {
        let trace = self.network.forward_trace(&self.normalize(features));
        let y = trace.output()[0];
        let mut grads = vec![0.0; self.network.param_count()];
        self.network.backward(&trace, &[2.0 * (y - target)], &mut grads);
        ((y - target).powi(2), grads)
    }

    pub fn loss(&self, features: &[f64], target: f64) -> f64 {
        let y = self.network.forward(&self.normalize(features))[0];
        (y - target).powi(2)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            kind: ModelKind::Scorer,
            extractor_version: self.extractor_version,
            input_size: self.input_size as u32,
            input_shift: self.input_shift.clone(),
            input_scale: self.input_scale.clone(),
            network: self.network.clone(),
        }
    }

    pub fn from_model_file(mf: ModelFile) -> Result<Self> {
        if mf.kind != ModelKind::Scorer {
            return Err(Error::IncompatibleModel(format!("expected a scorer model, found {:?}", mf.kind)));
        }
        if mf.network.output_len() != 1 {
            return Err(Error::IncompatibleModel("scorer network must have one output".into()));
        }
        Ok(MlpModel {
            network: mf.network,
            input_shift: mf.input_shift,
            input_scale: mf.input_scale,
            extractor_version: mf.extractor_version,
            input_size: mf.input_size as usize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_model_file(ModelFile::load(path)?)
    }
}

/// Trained model plus the mean training loss after each epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub epoch_losses: Vec<f64>,
    pub dataset_hash: u64,
}

pub fn features_for(examples: &[TrainingExample], extractor: Extractor) -> Result<Vec<Vec<f64>>> {
    examples.par_iter().map(|e| extractor.extract(&e.image).map(|f| f.0)).collect()
}

/// Trains on image examples; the input size is taken from the first image.
pub fn train(data: &[TrainingExample], cfg: &TrainConfig) -> Result<MlpModel> {
    Ok(train_with_history(data, cfg)?.model)
}

pub fn train_with_history(data: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let first = data.first().ok_or_else(|| Error::arg("training data is empty"))?;
    let size = first.image.width();
    if data.iter().any(|e| e.image.dims() != (size, size)) {
        return Err(Error::arg("all training images must share one square size"));
    }
    let features = features_for(data, cfg.extractor)?;
    let targets: Vec<f64> = data.iter().map(|e| e.target.value()).collect();
    train_features(&features, &targets, size, cfg)
}

/// Per-feature mean and inverse standard deviation.
fn fit_normalization(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var.iter().map(|v| 1.0 / v.sqrt().max(1e-3)).collect();
    (mean, scale)
}

pub fn train_features(
    features: &[Vec<f64>],
    targets: &[f64],
    input_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::arg("features and targets must be nonempty and of equal length"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::arg("feature vectors differ in length"));
    }
    let mut model = MlpModel::seeded(dim, &cfg.hidden, input_size, cfg.seed)?;
    model.extractor_version = cfg.extractor.version();
    let (shift, scale) = fit_normalization(features);
    model.set_normalization(shift, scale)?;
    let normalized: Vec<Vec<f64>> = features.iter().map(|f| model.normalize(f)).collect();
    let dataset_hash = hash_dataset(features, targets);

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut grads = vec![0.0; model.network.param_count()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let trace = model.network.forward_trace(&normalized[i]);
                let y = trace.output()[0];
                model.network.backward(&trace, &[2.0 * (y - targets[i]) * scale], &mut grads);
            }
            sgd_step(model.network.params_mut(), &grads, cfg.learning_rate);
        }
        let loss = normalized.iter().zip(targets).map(|(x, t)| (model.network.forward(x)[0] - t).powi(2)).sum::<f64>()
            / targets.len() as f64;
        if !loss.is_finite() || model.network.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!(
                "loss became {loss} at epoch {epoch}; learning rate {} is too high",
                cfg.learning_rate
            )));
        }
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome { model, epoch_losses, dataset_hash })
}

// keeps the shuffle stream distinct from the weight-init stream
const SHUFFLE_STREAM: u64 = 0x5eed_0f5e_ed00_0001;

fn hash_dataset(features: &[Vec<f64>], targets: &[f64]) -> u64 {
    // FNV-1a over the raw bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (f, t) in features.iter().zip(targets) {
        for v in f {
            eat(v.to_le_bytes());
        }
        eat(t.to_le_bytes());
    }
    h
}

/// Compares the analytic loss gradient with central finite differences.
/// Checks every parameter, or a seeded random subset of 100 when the model
/// has more than 1000 parameters. Returns the worst relative error.
pub fn gradient_check(model: &MlpModel, features: &[f64], target: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let (_, analytic) = model.loss_gradient(features, target);
    let count = model.network.param_count();
    let indices: Vec<usize> = if count > 1000 {
        let mut all: Vec<usize> = (0..count).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(count as u64));
        all.truncate(100);
        all
    } else {
        (0..count).collect()
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        let orig = probe.network.params()[i];
        probe.network.params_mut()[i] = orig + epsilon;
        let lp = probe.loss(features, target);
        probe.network.params_mut()[i] = orig - epsilon;
        let lm = probe.loss(features, target);
        probe.network.params_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[i], (lp - lm) / (2.0 * epsilon)));
    }
    Ok(worst)
}

/// Writes the model and its JSON training sidecar.
pub fn save_with_metadata(model: &MlpModel, path: &Path, meta: serde_json::Value) -> Result<()> {
    model.save(path)?;
    modelfile::write_sidecar(path, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_length_and_gray_image() {
        let img = RasterImage::filled(64, 64, [0.5; 3]).unwrap();
        let f = extract_features(&img).unwrap().0;
        assert_eq!(f.len(), FEATURE_LEN);
        assert_eq!(f[SAT_HIST_OFFSET], 1.0);
        assert!(f[SAT_HIST_OFFSET + 1..SAT_HIST_OFFSET + BINS].iter().all(|v| *v == 0.0));
        for b in 0..16 {
            assert!((f[GRID_OFFSET + 2 * b] - 0.5).abs() < 1e-12);
            assert_eq!(f[GRID_OFFSET + 2 * b + 1], 0.0);
        }
    }

    #[test]
    fn non_square_rejected() {
        let img = RasterImage::filled(8, 4, [0.5; 3]).unwrap();
        assert!(extract_features(&img).is_err());
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = MlpModel::zeros(FEATURE_LEN, &[64], 32).unwrap();
        let img = RasterImage::from_fn(40, 20, |x, y| [x as f64 / 40.0, y as f64 / 20.0, 0.2]).unwrap();
        assert_eq!(m.predict(&img).unwrap(), 0.5);
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut m = MlpModel::zeros(FEATURE_LEN, &[4], 8).unwrap();
        m.extractor_version = 99;
        let img = RasterImage::filled(8, 8, [0.5; 3]).unwrap();
        assert!(matches!(m.predict(&img), Err(Error::IncompatibleModel(_))));
    }

    #[test]
    fn epochs_zero_returns_initial_weights() {
        let feats = vec![vec![0.1, 0.2], vec![0.3, 0.1]];
        let cfg = TrainConfig { epochs: 0, hidden: vec![3], seed: 9, ..TrainConfig::default() };
        let out = train_features(&feats, &[0.2, 0.8], 8, &cfg).unwrap();
        let init = MlpModel::seeded(2, &[3], 8, 9).unwrap();
        assert_eq!(out.model.network, init.network);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut feats: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        feats[3][1] = f64::INFINITY;
        let targets: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let cfg = TrainConfig { epochs: 5, hidden: vec![8], ..TrainConfig::default() };
        let err = train_features(&feats, &targets, 8, &cfg).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err}");
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train_features(&[vec![0.0]], &[0.0], 8, &cfg).is_err());
        assert!(train_features(&[], &[], 8, &TrainConfig::default()).is_err());
    }
}
