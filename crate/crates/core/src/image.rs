//! RGB float rasters and the pixel arithmetic shared by every other module.
//!
//! Channels are stored interleaved in RGB order as `f64` in `[0, 1]`. Every
//! public constructor and operation clamps as its final step, so a
//! [`RasterImage`] is always valid once built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: Rgb = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

#[inline]
pub fn luminance(p: Rgb) -> f64 {
    LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]
}

/// HSV saturation: `(max - min) / max`, zero for black.
#[inline]
pub fn hsv_saturation(p: Rgb) -> f64 {
    let max = p[0].max(p[1]).max(p[2]);
    let min = p[0].min(p[1]).min(p[2]);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

impl RasterImage {
    /// Builds an image from already-valid pixels. Rejects non-finite or
    /// out-of-range channels instead of silently clamping them.
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::arg(format!(
                "pixel buffer holds {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().flatten().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::arg("channel values must be finite and within [0, 1]"));
        }
        Ok(RasterImage { width, height, pixels })
    }

    /// Builds an image from arbitrary reals, clamping each channel into
    /// `[0, 1]` (NaN maps to 0).
    pub fn from_unclamped(width: usize, height: usize, mut pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::arg("pixel buffer length does not match dimensions"));
        }
        for p in &mut pixels {
            for c in p.iter_mut() {
                *c = clamp_unit(*c);
            }
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Result<Self> {
        Self::from_unclamped(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_unclamped(width, height, pixels)
    }

    /// Interleaved 8-bit RGB, `/255` per channel.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_dims(width, height)?;
        if bytes.len() != width * height * 3 {
            return Err(Error::arg("rgb8 buffer length does not match dimensions"));
        }
        let pixels =
            bytes.chunks_exact(3).map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]).collect();
        Ok(RasterImage { width, height, pixels })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(|c| (c * 255.0).round() as u8)).collect()
    }

    /// Reads a PNG or JPEG file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Internal("rgb buffer size mismatch".into()))?;
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn luminance_plane(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| luminance(p)).collect()
    }

    pub fn mean_saturation(&self) -> f64 {
        self.pixels.iter().map(|&p| hsv_saturation(p)).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        check_dims(w, h)?;
        if x + w > self.width || y + h > self.height {
            return Err(Error::arg(format!("crop {w}x{h}+{x}+{y} exceeds {}x{} source", self.width, self.height)));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(RasterImage { width: w, height: h, pixels })
    }

    /// Rotates 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut pixels = vec![[0.0; 3]; w * h];
        // output is h wide, w tall; out(x', y') = in(y', h - 1 - x')
        for yo in 0..w {
            for xo in 0..h {
                pixels[yo * h + xo] = self.get(yo, h - 1 - xo);
            }
        }
        RasterImage { width: h, height: w, pixels }
    }

    /// Per-pixel map followed by the usual clamp.
    pub fn map(&self, mut f: impl FnMut(Rgb) -> Rgb) -> Self {
        let pixels = self.pixels.iter().map(|&p| f(p).map(clamp_unit)).collect();
        RasterImage { width: self.width, height: self.height, pixels }
    }
}

fn check_dims(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::arg(format!("image dimensions must be positive, got {w}x{h}")));
    }
    Ok(())
}

/// Similarity in `[0, 1]`; 1 means identical under the generating metric.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const IDENTICAL: SimilarityScore = SimilarityScore(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::arg(format!("similarity {value} outside [0, 1]")));
        }
        Ok(SimilarityScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Mean over pixels and channels of `|a - b|`.
pub fn mean_abs_diff(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::arg(format!("dimension mismatch: {}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs())
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// `max(0, 1 - delta / cap)`.
pub fn perturbation_score(delta: f64, cap: f64) -> Result<SimilarityScore> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::arg(format!("cap must be positive, got {cap}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::arg(format!("delta must be non-negative, got {delta}")));
    }
    Ok(SimilarityScore((1.0 - delta / cap).max(0.0)))
}

pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    img.map(|p| {
        let y = luminance(p);
        [y, y, y]
    })
}

/// One output sample as a list of `(source index, weight)` taps.
pub(crate) type Taps = Vec<(usize, f64)>;

pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            let t = s - i0 as f64;
            if i1 == i0 || t == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - t), (i1, t)]
            }
        })
        .collect()
}

/// Box-filter taps: each output cell averages the source cells it covers.
fn area_taps(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = lo + scale;
            let mut taps = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((j, overlap / scale));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

fn resample_separable(img: &RasterImage, xt: &[Taps], yt: &[Taps]) -> RasterImage {
    let (w, h) = img.dims();
    let ow = xt.len();
    let oh = yt.len();
    let mut tmp = vec![[0.0; 3]; ow * h];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        for (x, taps) in xt.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(sx, wt) in taps {
                for c in 0..3 {
                    acc[c] += wt * row[sx][c];
                }
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![[0.0; 3]; ow * oh];
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..ow {
            let mut acc = [0.0; 3];
            for &(sy, wt) in taps {
                for c in 0..3 {
                    acc[c] += wt * tmp[sy * ow + x][c];
                }
            }
            out[y * ow + x] = acc.map(clamp_unit);
        }
    }
    RasterImage { width: ow, height: oh, pixels: out }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage> {
    check_dims(out_w, out_h)?;
    if img.dims() == (out_w, out_h) {
        return Ok(img.clone());
    }
    Ok(resample_separable(img, &bilinear_taps(img.width, out_w), &bilinear_taps(img.height, out_h)))
}

/// Resampling used before scoring: area averaging along axes that shrink,
/// bilinear along axes that grow. Avoids aliasing when large views are
/// reduced to the training square.
pub fn resize_for_model(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage> {
    check_dims(out_w, out_h)?;
    if img.dims() == (out_w, out_h) {
        return Ok(img.clone());
    }
    let taps = |src: usize, dst: usize| {
        if dst < src {
            area_taps(src, dst)
        } else {
            bilinear_taps(src, dst)
        }
    };
    Ok(resample_separable(img, &taps(img.width, out_w), &taps(img.height, out_h)))
}

/// Discrete Gaussian truncated at `ceil(3 sigma)` and renormalized to sum 1.
/// Index `radius` is the center tap.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur of a single plane with clamp-to-edge borders.
pub fn gaussian_blur_plane(plane: &[f64], w: usize, h: usize, sigma: f64) -> Result<Vec<f64>> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Unclamped per-channel Gaussian blur over raw pixels.
pub(crate) fn blur_pixels(pixels: &[Rgb], w: usize, h: usize, sigma: f64) -> Result<Vec<Rgb>> {
    let mut out = vec![[0.0; 3]; w * h];
    for c in 0..3 {
        let plane: Vec<f64> = pixels.iter().map(|p| p[c]).collect();
        let blurred = gaussian_blur_plane(&plane, w, h, sigma)?;
        for (o, v) in out.iter_mut().zip(blurred) {
            o[c] = v;
        }
    }
    Ok(out)
}

pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage> {
    let blurred = blur_pixels(&img.pixels, img.width, img.height, sigma)?;
    RasterImage::from_unclamped(img.width, img.height, blurred)
}
