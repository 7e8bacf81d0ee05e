//! Learned dramatic lighting: a conditional generator predicts a coarse 8x8
//! mask that blends a photo toward a brightened copy of itself. Generators
//! are trained adversarially against a discriminator that sees good photos
//! as real and masked, degraded photos as fake. Snapshots from several runs
//! form an ensemble; at apply time every snapshot proposes a result and the
//! overall scorer picks one.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{splitmix, stream_seed, uniform};
use crate::error::{Error, Result};
use crate::filters::{brighten, negate_effect, FilterId, FilterParams, CURVE_LIMIT, CURVE_POINTS};
use crate::image::{bilinear_taps, resize_for_model, RasterImage, Rgb};
use crate::modelfile::{ModelFile, ModelKind};
use crate::nn::{log_sigmoid, sgd_step, sigmoid, LayerSpec, Network, Trace};
use crate::scoring::Scorer;

pub const MASK_SIDE: usize = 8;
pub const MASK_CELLS: usize = MASK_SIDE * MASK_SIDE;
/// Side of the square the networks see.
pub const GAN_INPUT_SIZE: usize = 32;
pub const DEFAULT_BRIGHTEN: f64 = 0.4;
pub const JBU_SIGMA_SPATIAL: f64 = 1.0;
pub const JBU_SIGMA_RANGE: f64 = 0.1;
/// Masks whose cell variance falls below this are treated as flat.
pub const DEGENERATE_VARIANCE: f64 = 1e-4;

const INPUT_LEN: usize = 3 * GAN_INPUT_SIZE * GAN_INPUT_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DramaticMask {
    cells: Vec<f64>,
}

impl DramaticMask {
    /// Row-major 8x8 cells, each in `[0, 1]`.
    pub fn new(cells: Vec<f64>) -> Result<Self> {
        if cells.len() != MASK_CELLS {
            return Err(Error::arg(format!("mask needs {MASK_CELLS} cells, got {}", cells.len())));
        }
        if !cells.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::arg("mask cells must lie in [0, 1]"));
        }
        Ok(DramaticMask { cells })
    }

    pub fn constant(v: f64) -> Result<Self> {
        Self::new(vec![v; MASK_CELLS])
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, cx: usize, cy: usize) -> f64 {
        self.cells[cy * MASK_SIDE + cx]
    }

    /// Population variance of the cells.
    pub fn variance(&self) -> f64 {
        let mean = self.cells.iter().sum::<f64>() / MASK_CELLS as f64;
        self.cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / MASK_CELLS as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Upsample {
    Bilinear,
    Jbu { sigma_s: f64, sigma_r: f64 },
}

impl Upsample {
    pub fn jbu() -> Self {
        Upsample::Jbu { sigma_s: JBU_SIGMA_SPATIAL, sigma_r: JBU_SIGMA_RANGE }
    }
}

/// Bilinear upsample of the mask to `w x h`, cell centers aligned with
/// pixel centers.
pub fn upsample_bilinear(mask: &DramaticMask, w: usize, h: usize) -> Vec<f64> {
    let tx = bilinear_taps(MASK_SIDE, w);
    let ty = bilinear_taps(MASK_SIDE, h);
    let mut out = vec![0.0; w * h];
    for (y, yt) in ty.iter().enumerate() {
        for (x, xt) in tx.iter().enumerate() {
            let mut acc = 0.0;
            for &(cy, wy) in yt {
                for &(cx, wx) in xt {
                    acc += wy * wx * mask.get(cx, cy);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Position of full-resolution pixel `p` in mask-cell coordinates.
#[inline]
fn to_cell(p: usize, full: usize) -> f64 {
    (p as f64 + 0.5) * MASK_SIDE as f64 / full as f64 - 0.5
}

fn check_sigmas(sigma_s: f64, sigma_r: f64) -> Result<()> {
    if !(sigma_s > 0.0 && sigma_r > 0.0 && sigma_s.is_finite() && sigma_r.is_finite()) {
        return Err(Error::arg(format!("JBU sigmas must be positive, got {sigma_s}, {sigma_r}")));
    }
    Ok(())
}

fn cell_upsample(
    mask: &DramaticMask,
    w: usize,
    h: usize,
    sigma_s: f64,
    range_weight: impl Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let inv_s = 1.0 / (2.0 * sigma_s * sigma_s);
    let last = (MASK_SIDE - 1) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let py = to_cell(y, h);
        let ny = (py.round() as isize).clamp(0, last);
        for x in 0..w {
            let px = to_cell(x, w);
            let nx = (px.round() as isize).clamp(0, last);
            let (mut num, mut den) = (0.0, 0.0);
            for cy in (ny - 1).max(0)..=(ny + 1).min(last) {
                for cx in (nx - 1).max(0)..=(nx + 1).min(last) {
                    let (cx, cy) = (cx as usize, cy as usize);
                    let d2 = (px - cx as f64).powi(2) + (py - cy as f64).powi(2);
                    let wgt = (-d2 * inv_s).exp() * range_weight(y * w + x, cx, cy);
                    num += wgt * mask.get(cx, cy);
                    den += wgt;
                }
            }
            out[y * w + x] = num / den;
        }
    }
    out
}

/// Spatial-only Gaussian upsample over the 3x3 cell neighborhood nearest
/// each pixel.
pub fn spatial_upsample(mask: &DramaticMask, w: usize, h: usize, sigma_s: f64) -> Result<Vec<f64>> {
    check_sigmas(sigma_s, 1.0)?;
    Ok(cell_upsample(mask, w, h, sigma_s, |_, _, _| 1.0))
}

/// Joint bilateral upsampling of the mask to the guide's resolution.
///
/// Each pixel averages the 3x3 cells around its nearest cell, weighted by a
/// spatial Gaussian in cell units and a range Gaussian on the difference
/// between the pixel's luminance and the cell's mean guide luminance.
pub fn jbu_upsample(mask: &DramaticMask, guide: &RasterImage, sigma_s: f64, sigma_r: f64) -> Result<Vec<f64>> {
    check_sigmas(sigma_s, sigma_r)?;
    let (w, h) = guide.dims();
    let lum = guide.luminance_plane();
    let low = resize_for_model(guide, MASK_SIDE, MASK_SIDE)?.luminance_plane();
    let inv_r = 1.0 / (2.0 * sigma_r * sigma_r);
    Ok(cell_upsample(mask, w, h, sigma_s, |p, cx, cy| {
        let d = lum[p] - low[cy * MASK_SIDE + cx];
        (-d * d * inv_r).exp()
    }))
}

/// `img + m * (brighten(img) - img)` with the mask upsampled to full size.
pub fn apply_mask(
    img: &RasterImage,
    mask: &DramaticMask,
    brighten_amount: f64,
    upsample: Upsample,
) -> Result<RasterImage> {
    let bright = brighten(img, brighten_amount)?;
    let (w, h) = img.dims();
    let m = match upsample {
        Upsample::Bilinear => upsample_bilinear(mask, w, h),
        Upsample::Jbu { sigma_s, sigma_r } => jbu_upsample(mask, img, sigma_s, sigma_r)?,
    };
    let pixels = img
        .pixels()
        .iter()
        .zip(bright.pixels())
        .zip(&m)
        .map(|((p, b), &k)| [p[0] + k * (b[0] - p[0]), p[1] + k * (b[1] - p[1]), p[2] + k * (b[2] - p[2])])
        .collect();
    RasterImage::from_unclamped(w, h, pixels)
}

/// CHW input vector in `[-1, 1]`; `img` must already be at network size.
fn encode(img: &RasterImage) -> Vec<f64> {
    let n = img.width() * img.height();
    let mut out = vec![0.0; 3 * n];
    for (i, p) in img.pixels().iter().enumerate() {
        for c in 0..3 {
            out[c * n + i] = 2.0 * p[c] - 1.0;
        }
    }
    out
}

fn to_network_size(img: &RasterImage) -> Result<RasterImage> {
    resize_for_model(img, GAN_INPUT_SIZE, GAN_INPUT_SIZE)
}

fn conv_trunk() -> Vec<LayerSpec> {
    let s = GAN_INPUT_SIZE;
    vec![
        LayerSpec::Conv3x3 { in_ch: 3, out_ch: 8, size: s, stride: 2 },
        LayerSpec::Tanh { len: 8 * (s / 2) * (s / 2) },
        LayerSpec::Conv3x3 { in_ch: 8, out_ch: 16, size: s / 2, stride: 2 },
        LayerSpec::Tanh { len: 16 * (s / 4) * (s / 4) },
        LayerSpec::Conv3x3 { in_ch: 16, out_ch: 16, size: s / 4, stride: 2 },
        LayerSpec::Tanh { len: 16 * (s / 8) * (s / 8) },
    ]
}

const TRUNK_OUT: usize = 16 * (GAN_INPUT_SIZE / 8) * (GAN_INPUT_SIZE / 8);

pub fn generator_layers() -> Vec<LayerSpec> {
    let mut l = conv_trunk();
    l.push(LayerSpec::Dense { inputs: TRUNK_OUT, outputs: MASK_CELLS });
    l.push(LayerSpec::Sigmoid { len: MASK_CELLS });
    l
}

pub fn discriminator_layers() -> Vec<LayerSpec> {
    let mut l = conv_trunk();
    l.push(LayerSpec::Dense { inputs: TRUNK_OUT, outputs: 1 });
    l
}

fn seeded_network(layers: Vec<LayerSpec>, seed: u64) -> Result<Network> {
    let mut net = Network::zeros(layers)?;
    net.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(net)
}

fn network_file(kind: ModelKind, network: &Network) -> ModelFile {
    ModelFile {
        kind,
        extractor_version: 0,
        input_size: GAN_INPUT_SIZE as u32,
        input_shift: vec![0.0; INPUT_LEN],
        input_scale: vec![1.0; INPUT_LEN],
        network: network.clone(),
    }
}

fn network_from_file(path: &Path, kind: ModelKind, layers: Vec<LayerSpec>) -> Result<Network> {
    let mf = ModelFile::load(path)?;
    if mf.kind != kind {
        return Err(Error::IncompatibleModel(format!("{} holds a {:?}, expected {kind:?}", path.display(), mf.kind)));
    }
    if mf.network.layers() != layers.as_slice() {
        return Err(Error::IncompatibleModel(format!("{} has an unexpected architecture", path.display())));
    }
    Ok(mf.network)
}

/// Maps a 32x32 RGB image to an 8x8 sigmoid mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGenerator {
    pub network: Network,
    pub seed: u64,
    pub step: u64,
}

impl MaskGenerator {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(MaskGenerator { network: seeded_network(generator_layers(), seed)?, seed, step: 0 })
    }

    pub fn mask_for(&self, img: &RasterImage) -> Result<DramaticMask> {
        let small = to_network_size(img)?;
        DramaticMask::new(self.network.forward(&encode(&small)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        network_file(ModelKind::Generator, &self.network).save(path)
    }

    pub fn load(path: impl AsRef<Path>, seed: u64, step: u64) -> Result<Self> {
        let network = network_from_file(path.as_ref(), ModelKind::Generator, generator_layers())?;
        Ok(MaskGenerator { network, seed, step })
    }
}

/// Maps a 32x32 RGB image to the logit of it being a real good photo.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub network: Network,
    pub seed: u64,
    pub step: u64,
}

impl Discriminator {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Discriminator { network: seeded_network(discriminator_layers(), seed)?, seed, step: 0 })
    }

    pub fn logit(&self, img: &RasterImage) -> Result<f64> {
        Ok(self.network.forward(&encode(&to_network_size(img)?))[0])
    }

    /// Probability in `(0, 1)` that `img` is real.
    pub fn probability(&self, img: &RasterImage) -> Result<f64> {
        Ok(sigmoid(self.logit(img)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        network_file(ModelKind::Discriminator, &self.network).save(path)
    }

    pub fn load(path: impl AsRef<Path>, seed: u64, step: u64) -> Result<Self> {
        let network = network_from_file(path.as_ref(), ModelKind::Discriminator, discriminator_layers())?;
        Ok(Discriminator { network, seed, step })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub lr_g: f64,
    /// Discriminator learning rate as a multiple of `lr_g`.
    pub d_lr_factor: f64,
    pub batch_size: usize,
    pub brighten_amount: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig { lr_g: 0.02, d_lr_factor: 2.0, batch_size: 8, brighten_amount: DEFAULT_BRIGHTEN }
    }
}

impl GanConfig {
    pub fn lr_d(&self) -> f64 {
        self.lr_g * self.d_lr_factor
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr_g > 0.0 && self.d_lr_factor > 0.0 && self.lr_g.is_finite()) {
            return Err(Error::arg("GAN learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("GAN batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.brighten_amount) {
            return Err(Error::arg("brighten amount must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A degraded input at network size, with its brightened copy.
struct Conditioned {
    encoded: Vec<f64>,
    base: Vec<Rgb>,
    bright: Vec<Rgb>,
}

fn condition(img: &RasterImage, amount: f64) -> Result<Conditioned> {
    check_network_size(img)?;
    let bright = brighten(img, amount)?;
    Ok(Conditioned { encoded: encode(img), base: img.pixels().to_vec(), bright: bright.pixels().to_vec() })
}

fn check_network_size(img: &RasterImage) -> Result<()> {
    if img.dims() != (GAN_INPUT_SIZE, GAN_INPUT_SIZE) {
        return Err(Error::arg(format!(
            "GAN batches must be {GAN_INPUT_SIZE}x{GAN_INPUT_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

struct UpsampleTaps {
    tx: Vec<crate::image::Taps>,
    ty: Vec<crate::image::Taps>,
}

impl UpsampleTaps {
    fn new() -> Self {
        UpsampleTaps { tx: bilinear_taps(MASK_SIDE, GAN_INPUT_SIZE), ty: bilinear_taps(MASK_SIDE, GAN_INPUT_SIZE) }
    }

    fn up(&self, m: &[f64]) -> Vec<f64> {
        let n = GAN_INPUT_SIZE;
        let mut out = vec![0.0; n * n];
        for (y, yt) in self.ty.iter().enumerate() {
            for (x, xt) in self.tx.iter().enumerate() {
                let mut acc = 0.0;
                for &(cy, wy) in yt {
                    for &(cx, wx) in xt {
                        acc += wy * wx * m[cy * MASK_SIDE + cx];
                    }
                }
                out[y * n + x] = acc;
            }
        }
        out
    }

    /// Transpose of [`Self::up`].
    fn down(&self, g: &[f64]) -> Vec<f64> {
        let n = GAN_INPUT_SIZE;
        let mut out = vec![0.0; MASK_CELLS];
        for (y, yt) in self.ty.iter().enumerate() {
            for (x, xt) in self.tx.iter().enumerate() {
                let gv = g[y * n + x];
                for &(cy, wy) in yt {
                    for &(cx, wx) in xt {
                        out[cy * MASK_SIDE + cx] += wy * wx * gv;
                    }
                }
            }
        }
        out
    }
}

/// Encoded fake image for a conditioned input and a mask.
fn fake_encoded(c: &Conditioned, mask: &[f64], taps: &UpsampleTaps) -> Vec<f64> {
    let n = GAN_INPUT_SIZE * GAN_INPUT_SIZE;
    let up = taps.up(mask);
    let mut out = vec![0.0; 3 * n];
    for p in 0..n {
        for ch in 0..3 {
            let v = c.base[p][ch] + up[p] * (c.bright[p][ch] - c.base[p][ch]);
            out[ch * n + p] = 2.0 * v - 1.0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

fn d_loss_grads(
    d: &Network,
    g: &Network,
    reals: &[Vec<f64>],
    negs: &[Conditioned],
    taps: &UpsampleTaps,
) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; d.param_count()];
    let mut loss = 0.0;
    let nr = reals.len() as f64;
    for r in reals {
        let t = d.forward_trace(r);
        let l = t.output()[0];
        loss -= log_sigmoid(l) / nr;
        d.backward(&t, &[(sigmoid(l) - 1.0) / nr], &mut grads);
    }
    let nf = negs.len() as f64;
    for c in negs {
        let mask = g.forward(&c.encoded);
        let t = d.forward_trace(&fake_encoded(c, &mask, taps));
        let l = t.output()[0];
        loss -= log_sigmoid(-l) / nf;
        d.backward(&t, &[sigmoid(l) / nf], &mut grads);
    }
    (loss, grads)
}

fn g_loss_grads(g: &Network, d: &Network, negs: &[Conditioned], taps: &UpsampleTaps) -> (f64, Vec<f64>) {
    let n = GAN_INPUT_SIZE * GAN_INPUT_SIZE;
    let mut grads = vec![0.0; g.param_count()];
    let mut scratch = vec![0.0; d.param_count()];
    let mut loss = 0.0;
    let nf = negs.len() as f64;
    for c in negs {
        let gt: Trace = g.forward_trace(&c.encoded);
        let mask = gt.output();
        let dt = d.forward_trace(&fake_encoded(c, mask, taps));
        let l = dt.output()[0];
        loss -= log_sigmoid(l) / nf;
        let g_in = d.backward(&dt, &[(sigmoid(l) - 1.0) / nf], &mut scratch);
        let mut g_up = vec![0.0; n];
        for p in 0..n {
            for ch in 0..3 {
                g_up[p] += 2.0 * g_in[ch * n + p] * (c.bright[p][ch] - c.base[p][ch]);
            }
        }
        g.backward(&gt, &taps.down(&g_up), &mut grads);
    }
    (loss, grads)
}

fn prepare(
    reals: &[RasterImage],
    negatives: &[RasterImage],
    cfg: &GanConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Conditioned>)> {
    if reals.is_empty() || negatives.is_empty() {
        return Err(Error::arg("GAN batches must be nonempty"));
    }
    let r = reals.iter().map(|im| check_network_size(im).map(|_| encode(im))).collect::<Result<Vec<_>>>()?;
    let n = negatives.iter().map(|im| condition(im, cfg.brighten_amount)).collect::<Result<Vec<_>>>()?;
    Ok((r, n))
}

fn check_finite(what: &str, loss: f64, step: u64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Training(format!("{what} loss became {loss} at step {step}")));
    }
    Ok(())
}

/// Discriminator loss `-mean log D(real) - mean log(1 - D(fake))`.
pub fn discriminator_loss(
    d: &Discriminator,
    g: &MaskGenerator,
    reals: &[RasterImage],
    negatives: &[RasterImage],
    cfg: &GanConfig,
) -> Result<f64> {
    let (r, n) = prepare(reals, negatives, cfg)?;
    Ok(d_loss_grads(&d.network, &g.network, &r, &n, &UpsampleTaps::new()).0)
}

/// Non-saturating generator loss `-mean log D(fake)`.
pub fn generator_loss(g: &MaskGenerator, d: &Discriminator, negatives: &[RasterImage], cfg: &GanConfig) -> Result<f64> {
    let (_, n) = prepare(negatives, negatives, cfg)?;
    Ok(g_loss_grads(&g.network, &d.network, &n, &UpsampleTaps::new()).0)
}

/// Updates only the discriminator.
pub fn discriminator_step(
    d: &mut Discriminator,
    g: &MaskGenerator,
    reals: &[RasterImage],
    negatives: &[RasterImage],
    cfg: &GanConfig,
) -> Result<f64> {
    cfg.validate()?;
    let (r, n) = prepare(reals, negatives, cfg)?;
    let (loss, grads) = d_loss_grads(&d.network, &g.network, &r, &n, &UpsampleTaps::new());
    check_finite("discriminator", loss, d.step)?;
    sgd_step(d.network.params_mut(), &grads, cfg.lr_d());
    d.step += 1;
    Ok(loss)
}

/// One adversarial step: the discriminator learns to separate `reals` from
/// masked `negatives`, then the generator learns to fool the updated
/// discriminator. There is no pixel reconstruction term.
pub fn gan_train_step(
    g: &mut MaskGenerator,
    d: &mut Discriminator,
    reals: &[RasterImage],
    negatives: &[RasterImage],
    cfg: &GanConfig,
) -> Result<GanLosses> {
    cfg.validate()?;
    let (r, n) = prepare(reals, negatives, cfg)?;
    let taps = UpsampleTaps::new();
    let (d_loss, d_grads) = d_loss_grads(&d.network, &g.network, &r, &n, &taps);
    check_finite("discriminator", d_loss, d.step)?;
    sgd_step(d.network.params_mut(), &d_grads, cfg.lr_d());
    d.step += 1;
    let (g_loss, g_grads) = g_loss_grads(&g.network, &d.network, &n, &taps);
    check_finite("generator", g_loss, g.step)?;
    sgd_step(g.network.params_mut(), &g_grads, cfg.lr_g);
    g.step += 1;
    Ok(GanLosses { d_loss, g_loss })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanGradientCheck {
    pub generator: f64,
    pub discriminator: f64,
}

/// Worst relative error between analytic and central-difference gradients
/// of both losses, over `samples` random parameters of each network.
pub fn gan_gradient_check(
    g: &MaskGenerator,
    d: &Discriminator,
    reals: &[RasterImage],
    negatives: &[RasterImage],
    cfg: &GanConfig,
    samples: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GanGradientCheck> {
    let (r, n) = prepare(reals, negatives, cfg)?;
    let taps = UpsampleTaps::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (_, dg) = d_loss_grads(&d.network, &g.network, &r, &n, &taps);
    let mut dn = d.network.clone();
    let mut d_worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..dn.param_count());
        let orig = dn.params()[i];
        dn.params_mut()[i] = orig + epsilon;
        let lp = d_loss_grads(&dn, &g.network, &r, &n, &taps).0;
        dn.params_mut()[i] = orig - epsilon;
        let lm = d_loss_grads(&dn, &g.network, &r, &n, &taps).0;
        dn.params_mut()[i] = orig;
        d_worst = d_worst.max(crate::nn::relative_error(dg[i], (lp - lm) / (2.0 * epsilon)));
    }

    let (_, gg) = g_loss_grads(&g.network, &d.network, &n, &taps);
    let mut gn = g.network.clone();
    let mut g_worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..gn.param_count());
        let orig = gn.params()[i];
        gn.params_mut()[i] = orig + epsilon;
        let lp = g_loss_grads(&gn, &d.network, &n, &taps).0;
        gn.params_mut()[i] = orig - epsilon;
        let lm = g_loss_grads(&gn, &d.network, &n, &taps).0;
        gn.params_mut()[i] = orig;
        g_worst = g_worst.max(crate::nn::relative_error(gg[i], (lp - lm) / (2.0 * epsilon)));
    }
    Ok(GanGradientCheck { generator: g_worst, discriminator: d_worst })
}

/// The filters used to degrade good photos into GAN inputs.
pub const NEGATIVE_FILTERS: [FilterId; 6] = [
    FilterId::TuneBrightness,
    FilterId::TuneContrast,
    FilterId::Hdr,
    FilterId::Vignette,
    FilterId::Curve,
    FilterId::FlattenBrightness,
];

/// Sub-ranges each negative filter samples from. Signed filters list the
/// magnitude range; the sign is drawn separately.
pub fn negative_ranges(filter: FilterId) -> &'static [(f64, f64)] {
    match filter {
        FilterId::TuneBrightness | FilterId::TuneContrast => &[(0.10, 0.45), (0.55, 0.90)],
        FilterId::Hdr | FilterId::FlattenBrightness => &[(0.10, 1.0)],
        FilterId::Vignette => &[(0.0, 0.35), (0.60, 0.70)],
        FilterId::Curve => &[(-CURVE_LIMIT, CURVE_LIMIT)],
        FilterId::Saturation | FilterId::Brighten => &[],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub params: FilterParams,
    /// Applied through `2M - F(s)M`.
    pub negated: bool,
    pub seed: u64,
}

impl NegativeSample {
    /// Parameter as a signed strength (negative when negated).
    pub fn signed_value(&self) -> f64 {
        let v = self.params.params()[0];
        if self.negated {
            -v
        } else {
            v
        }
    }
}

/// Uniform over a union of intervals.
fn uniform_union(rng: &mut impl Rng, ranges: &[(f64, f64)]) -> f64 {
    let total: f64 = ranges.iter().map(|(a, b)| b - a).sum();
    let mut t = rng.random::<f64>() * total;
    for &(a, b) in ranges {
        if t <= b - a {
            return a + t;
        }
        t -= b - a;
    }
    ranges.last().map(|r| r.1).unwrap_or(0.0)
}

/// Draws the filter and parameters for one negative.
pub fn sample_negative_params(seed: u64) -> Result<NegativeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filter = NEGATIVE_FILTERS[rng.random_range(0..NEGATIVE_FILTERS.len())];
    let ranges = negative_ranges(filter);
    let (params, negated) = match filter {
        FilterId::Curve => {
            let (lo, hi) = ranges[0];
            ((0..CURVE_POINTS).map(|_| uniform(&mut rng, lo, hi)).collect(), false)
        }
        FilterId::Hdr | FilterId::FlattenBrightness => {
            let negated = rng.random::<bool>();
            (vec![uniform_union(&mut rng, ranges)], negated)
        }
        _ => (vec![uniform_union(&mut rng, ranges)], false),
    };
    Ok(NegativeSample { params: FilterParams::new(filter, params)?, negated, seed })
}

/// Degrades `img` with one filter drawn uniformly from the negative bank.
pub fn sample_negative(img: &RasterImage, seed: u64) -> Result<(RasterImage, NegativeSample)> {
    let s = sample_negative_params(seed)?;
    let out = if s.negated { negate_effect(&s.params, img)? } else { s.params.apply(img)? };
    Ok((out, s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub steps: u64,
    pub snapshot_interval: u64,
    pub keep_top: usize,
    pub seed: u64,
    pub gan: GanConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_models: 3,
            steps: 400,
            snapshot_interval: 100,
            keep_top: 5,
            seed: 0,
            gan: GanConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub generator: MaskGenerator,
    pub model_id: usize,
    pub step: u64,
    pub contribution: usize,
    /// Mean mask variance over the validation images.
    pub mask_variance: f64,
}

impl EnsembleMember {
    pub fn id(&self) -> String {
        format!("m{}s{}", self.model_id, self.step)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MaskEnsemble {
    pub members: Vec<EnsembleMember>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub model_id: usize,
    pub step: u64,
    pub contribution: usize,
    pub seed: u64,
    pub mask_variance: f64,
}

impl MaskEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Writes one generator file per member plus `ensemble.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let name = PathBuf::from(format!("generator_{}.crtm", m.id()));
            m.generator.save(dir.join(&name))?;
            entries.push(ManifestEntry {
                path: name,
                model_id: m.model_id,
                step: m.step,
                contribution: m.contribution,
                seed: m.generator.seed,
                mask_variance: m.mask_variance,
            });
        }
        let manifest = dir.join("ensemble.json");
        std::fs::write(&manifest, serde_json::to_string_pretty(&entries)? + "\n")?;
        Ok(manifest)
    }

    /// Loads from an `ensemble.json` path or the directory holding it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut manifest = path.as_ref().to_path_buf();
        if manifest.is_dir() {
            manifest = manifest.join("ensemble.json");
        }
        if !manifest.exists() {
            return Err(Error::MissingArtifact(manifest));
        }
        let entries: Vec<ManifestEntry> = serde_json::from_str(&std::fs::read_to_string(&manifest)?)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let members = entries
            .into_iter()
            .map(|e| {
                Ok(EnsembleMember {
                    generator: MaskGenerator::load(base.join(&e.path), e.seed, e.step)?,
                    model_id: e.model_id,
                    step: e.step,
                    contribution: e.contribution,
                    mask_variance: e.mask_variance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskEnsemble { members })
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub ensemble: MaskEnsemble,
    /// Final discriminator of each model run.
    pub discriminators: Vec<Discriminator>,
    /// Per model, per step losses.
    pub losses: Vec<Vec<GanLosses>>,
    /// Snapshots collected before pruning.
    pub snapshot_count: usize,
    /// All snapshots were flat and the ensemble holds the best available.
    pub degenerate: bool,
}

struct RunOutput {
    snapshots: Vec<MaskGenerator>,
    discriminator: Discriminator,
    losses: Vec<GanLosses>,
}

fn train_run(model_id: usize, reals: &[RasterImage], cfg: &EnsembleConfig) -> Result<RunOutput> {
    let seed = stream_seed(cfg.seed, model_id, 0, 0);
    let mut g = MaskGenerator::new(splitmix(seed ^ 1))?;
    let mut d = Discriminator::new(splitmix(seed ^ 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 3));
    let bs = cfg.gan.batch_size;
    let mut snapshots = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let real_batch: Vec<RasterImage> = (0..bs).map(|_| reals[rng.random_range(0..reals.len())].clone()).collect();
        let neg_batch = (0..bs)
            .map(|i| {
                let src = &reals[rng.random_range(0..reals.len())];
                sample_negative(src, stream_seed(seed, step as usize, i, 1)).map(|(img, _)| img)
            })
            .collect::<Result<Vec<_>>>()?;
        losses.push(gan_train_step(&mut g, &mut d, &real_batch, &neg_batch, &cfg.gan)?);
        if step % cfg.snapshot_interval == 0 {
            snapshots.push(g.clone());
        }
    }
    Ok(RunOutput { snapshots, discriminator: d, losses })
}

/// Trains `n_models` generators from distinct seeds, snapshots each every
/// `snapshot_interval` steps, drops flat snapshots, and keeps the `keep_top`
/// snapshots that most often produce the best-scoring output on `validation`.
pub fn train_ensemble(
    reals: &[RasterImage],
    validation: &[RasterImage],
    overall: &dyn Scorer,
    cfg: &EnsembleConfig,
) -> Result<TrainedEnsemble> {
    cfg.gan.validate()?;
    if reals.is_empty() || validation.is_empty() {
        return Err(Error::arg("ensemble training needs real and validation images"));
    }
    if cfg.n_models == 0 || cfg.keep_top == 0 || cfg.snapshot_interval == 0 || cfg.snapshot_interval > cfg.steps {
        return Err(Error::arg("need n_models, keep_top >= 1 and 1 <= snapshot_interval <= steps"));
    }
    let small = reals.par_iter().map(to_network_size).collect::<Result<Vec<_>>>()?;
    let runs = (0..cfg.n_models).into_par_iter().map(|m| train_run(m, &small, cfg)).collect::<Result<Vec<_>>>()?;

    let mut members = Vec::new();
    for (model_id, run) in runs.iter().enumerate() {
        for snap in &run.snapshots {
            let masks = validation.iter().map(|v| snap.mask_for(v)).collect::<Result<Vec<_>>>()?;
            let mask_variance = masks.iter().map(DramaticMask::variance).sum::<f64>() / masks.len() as f64;
            members.push(EnsembleMember {
                generator: snap.clone(),
                model_id,
                step: snap.step,
                contribution: 0,
                mask_variance,
            });
        }
    }
    let snapshot_count = members.len();
    let live: Vec<EnsembleMember> =
        members.iter().filter(|m| m.mask_variance >= DEGENERATE_VARIANCE).cloned().collect();
    let degenerate = live.is_empty();
    let mut pool = if degenerate {
        log::warn!("every dramatic-mask snapshot is flat; keeping the best available");
        members
    } else {
        live
    };

    let pool_ensemble = MaskEnsemble { members: pool.clone() };
    let votes = validation
        .par_iter()
        .map(|v| best_dramatic(v, &pool_ensemble, overall, cfg.gan.brighten_amount).map(|c| c.index))
        .collect::<Result<Vec<_>>>()?;
    for idx in votes {
        pool[idx].contribution += 1;
    }
    // stable: equal counts keep training order
    pool.sort_by(|a, b| b.contribution.cmp(&a.contribution));
    pool.truncate(cfg.keep_top);

    let mut discriminators = Vec::with_capacity(runs.len());
    let mut losses = Vec::with_capacity(runs.len());
    for run in runs {
        discriminators.push(run.discriminator);
        losses.push(run.losses);
    }
    Ok(TrainedEnsemble { ensemble: MaskEnsemble { members: pool }, discriminators, losses, snapshot_count, degenerate })
}

#[derive(Clone, Debug)]
pub struct DramaticChoice {
    pub image: RasterImage,
    /// Position of the chosen member in the ensemble.
    pub index: usize,
    pub member_id: String,
    pub score: f64,
    /// Overall score of every member's output, in ensemble order.
    pub scores: Vec<f64>,
}

/// Applies every member's mask (JBU-upsampled) and returns the output the
/// overall scorer likes best; ties go to the earliest member.
pub fn best_dramatic(
    img: &RasterImage,
    ensemble: &MaskEnsemble,
    overall: &dyn Scorer,
    brighten_amount: f64,
) -> Result<DramaticChoice> {
    if ensemble.is_empty() {
        return Err(Error::InvalidState("dramatic-mask ensemble is empty".into()));
    }
    let outputs = ensemble
        .members
        .par_iter()
        .map(|m| {
            let out = apply_mask(img, &m.generator.mask_for(img)?, brighten_amount, Upsample::jbu())?;
            let s = overall.score(&out)?;
            Ok((out, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = outputs.iter().map(|o| o.1).collect();
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    let (image, score) = outputs.into_iter().nth(best).expect("nonempty");
    Ok(DramaticChoice { image, index: best, member_id: ensemble.members[best].id(), score, scores })
}
