//! Parameterized image filters.
//!
//! Each filter computes in unclamped reals and clamps once on exit; the
//! unclamped intermediate is what [`negate_effect`] consumes. Every formula
//! is written as `input + k * term` so the neutral parameter (k = 0) returns
//! the input bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{blur_pixels, gaussian_blur_plane, luminance, RasterImage, Rgb};

/// Detail gain applied by [`hdr`] at full strength.
pub const HDR_GAIN: f64 = 1.5;
/// HDR base-layer sigma as a fraction of `width + height`.
pub const HDR_SIGMA_FRACTION: f64 = 0.03;
/// Flatten-brightness neighborhood sigma as a fraction of `width + height`.
pub const FLATTEN_SIGMA_FRACTION: f64 = 0.05;
pub const BRIGHTNESS_RANGE: f64 = 0.5;
pub const CONTRAST_RANGE: f64 = 1.0;
/// Slope of the vignette corner gain around its neutral point.
pub const VIGNETTE_SLOPE: f64 = 1.2;
pub const CURVE_LIMIT: f64 = 0.15;
pub const CURVE_POINTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterId {
    Saturation,
    Hdr,
    Brighten,
    Vignette,
    TuneBrightness,
    TuneContrast,
    Curve,
    FlattenBrightness,
}

impl FilterId {
    pub const ALL: [FilterId; 8] = [
        FilterId::Saturation,
        FilterId::Hdr,
        FilterId::Brighten,
        FilterId::Vignette,
        FilterId::TuneBrightness,
        FilterId::TuneContrast,
        FilterId::Curve,
        FilterId::FlattenBrightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterId::Saturation => "saturation",
            FilterId::Hdr => "hdr",
            FilterId::Brighten => "brighten",
            FilterId::Vignette => "vignette",
            FilterId::TuneBrightness => "tune_brightness",
            FilterId::TuneContrast => "tune_contrast",
            FilterId::Curve => "curve",
            FilterId::FlattenBrightness => "flatten_brightness",
        }
    }

    pub fn domain(self) -> ParamDomain {
        parameter_domain(self)
    }
}

impl fmt::Display for FilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        FilterId::ALL.into_iter().find(|f| f.name() == norm).ok_or_else(|| Error::arg(format!("unknown filter '{s}'")))
    }
}

/// Box domain of a filter's parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    pub bounds: Vec<(f64, f64)>,
    pub neutral: Vec<f64>,
}

impl ParamDomain {
    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.bounds.len()
            && params.iter().zip(&self.bounds).all(|(v, (lo, hi))| v.is_finite() && *v >= *lo && *v <= *hi)
    }
}

pub fn parameter_domain(filter: FilterId) -> ParamDomain {
    let unit = |neutral: f64| ParamDomain { bounds: vec![(0.0, 1.0)], neutral: vec![neutral] };
    match filter {
        FilterId::Saturation => unit(0.5),
        FilterId::Hdr => unit(0.0),
        FilterId::Brighten => unit(0.0),
        FilterId::Vignette => unit(0.5),
        FilterId::TuneBrightness => unit(0.5),
        FilterId::TuneContrast => unit(0.5),
        FilterId::FlattenBrightness => unit(0.0),
        FilterId::Curve => {
            ParamDomain { bounds: vec![(-CURVE_LIMIT, CURVE_LIMIT); CURVE_POINTS], neutral: vec![0.0; CURVE_POINTS] }
        }
    }
}

/// A filter together with an in-domain parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    filter: FilterId,
    params: Vec<f64>,
}

impl FilterParams {
    pub fn new(filter: FilterId, params: Vec<f64>) -> Result<Self> {
        let domain = parameter_domain(filter);
        if params.len() != domain.dims() {
            return Err(Error::arg(format!("{filter} takes {} parameter(s), got {}", domain.dims(), params.len())));
        }
        if !domain.contains(&params) {
            return Err(Error::arg(format!("{filter} parameters {params:?} outside domain {:?}", domain.bounds)));
        }
        Ok(FilterParams { filter, params })
    }

    pub fn scalar(filter: FilterId, value: f64) -> Result<Self> {
        Self::new(filter, vec![value])
    }

    pub fn neutral(filter: FilterId) -> Self {
        FilterParams { filter, params: parameter_domain(filter).neutral }
    }

    pub fn filter(&self) -> FilterId {
        self.filter
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn apply(&self, img: &RasterImage) -> Result<RasterImage> {
        finish(img, apply_unclamped(self, img)?)
    }
}

/// `filter=name;p=v1,v2,...`
impl fmt::Display for FilterParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values: Vec<String> = self.params.iter().map(|v| format!("{v}")).collect();
        write!(f, "filter={};p={}", self.filter, values.join(","))
    }
}

impl FromStr for FilterParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut filter = None;
        let mut params = None;
        for part in s.split(';') {
            let (key, value) =
                part.split_once('=').ok_or_else(|| Error::arg(format!("malformed filter spec '{s}'")))?;
            match key.trim() {
                "filter" => filter = Some(value.parse::<FilterId>()?),
                "p" => {
                    let values = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::arg(format!("bad parameter in '{s}': {e}")))?;
                    params = Some(values);
                }
                other => return Err(Error::arg(format!("unknown key '{other}' in filter spec"))),
            }
        }
        match (filter, params) {
            (Some(f), Some(p)) => FilterParams::new(f, p),
            _ => Err(Error::arg(format!("filter spec '{s}' needs both filter= and p="))),
        }
    }
}

fn finish(img: &RasterImage, pixels: Vec<Rgb>) -> Result<RasterImage> {
    RasterImage::from_unclamped(img.width(), img.height(), pixels)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::arg(format!("{name} parameter {v} outside [0, 1]")));
    }
    Ok(())
}

/// Unclamped filter output. Parameters must already be validated.
pub(crate) fn apply_unclamped(params: &FilterParams, img: &RasterImage) -> Result<Vec<Rgb>> {
    let p = params.params();
    let px = img.pixels();
    Ok(match params.filter() {
        FilterId::Saturation => {
            let k = 2.0 * p[0] - 1.0;
            px.iter()
                .map(|&c| {
                    let g = luminance(c);
                    c.map(|v| v + k * (v - g))
                })
                .collect()
        }
        FilterId::Hdr => {
            let s = p[0];
            let (w, h) = img.dims();
            let base = blur_pixels(px, w, h, HDR_SIGMA_FRACTION * (w + h) as f64)?;
            px.iter().zip(base).map(|(&c, b)| [0, 1, 2].map(|i| c[i] + s * HDR_GAIN * (c[i] - b[i]))).collect()
        }
        FilterId::Brighten => {
            let a = p[0];
            px.iter().map(|&c| c.map(|v| v + a * (1.0 - v))).collect()
        }
        FilterId::Vignette => {
            let (w, h) = img.dims();
            let loss = 1.0 - vignette_corner_gain(p[0]);
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            let corner = (cx * cx + cy * cy).sqrt();
            let mut out = Vec::with_capacity(px.len());
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let rho = ((dx * dx + dy * dy).sqrt() / corner).min(1.0);
                    let s = (std::f64::consts::FRAC_PI_2 * rho).sin();
                    let factor = 1.0 - loss * s * s;
                    out.push(px[y * w + x].map(|v| v * factor));
                }
            }
            out
        }
        FilterId::TuneBrightness => {
            let d = (p[0] - 0.5) * BRIGHTNESS_RANGE;
            px.iter().map(|&c| c.map(|v| v + d)).collect()
        }
        FilterId::TuneContrast => {
            let k = (p[0] - 0.5) * CONTRAST_RANGE;
            px.iter().map(|&c| c.map(|v| v + k * (v - 0.5))).collect()
        }
        FilterId::Curve => px.iter().map(|&c| c.map(|v| v + curve_offset(p, v))).collect(),
        FilterId::FlattenBrightness => {
            let s = p[0];
            let (w, h) = img.dims();
            let lum = img.luminance_plane();
            let avg = gaussian_blur_plane(&lum, w, h, FLATTEN_SIGMA_FRACTION * (w + h) as f64)?;
            px.iter()
                .zip(lum.iter().zip(avg))
                .map(|(&c, (&b, bbar))| {
                    let shift = s * (bbar - b);
                    c.map(|v| v + shift)
                })
                .collect()
        }
    })
}

/// Brightness multiplier reached at the image corners.
pub fn vignette_corner_gain(outer: f64) -> f64 {
    1.0 + (outer - 0.5) * VIGNETTE_SLOPE
}

/// Piecewise-linear offset through control points at brightness
/// `0, 0.2, ..., 1.0`.
fn curve_offset(offsets: &[f64], v: f64) -> f64 {
    let segments = (CURVE_POINTS - 1) as f64;
    let pos = (v.clamp(0.0, 1.0) * segments).min(segments);
    let i = (pos.floor() as usize).min(CURVE_POINTS - 2);
    let t = pos - i as f64;
    offsets[i] + (offsets[i + 1] - offsets[i]) * t
}

pub fn saturation(img: &RasterImage, p: f64) -> Result<RasterImage> {
    check_unit("saturation", p)?;
    FilterParams::scalar(FilterId::Saturation, p)?.apply(img)
}

pub fn hdr(img: &RasterImage, strength: f64) -> Result<RasterImage> {
    check_unit("hdr", strength)?;
    FilterParams::scalar(FilterId::Hdr, strength)?.apply(img)
}

pub fn brighten(img: &RasterImage, amount: f64) -> Result<RasterImage> {
    check_unit("brighten", amount)?;
    FilterParams::scalar(FilterId::Brighten, amount)?.apply(img)
}

pub fn vignette(img: &RasterImage, outer: f64) -> Result<RasterImage> {
    check_unit("vignette", outer)?;
    FilterParams::scalar(FilterId::Vignette, outer)?.apply(img)
}

pub fn tune_brightness(img: &RasterImage, p: f64) -> Result<RasterImage> {
    check_unit("tune_brightness", p)?;
    FilterParams::scalar(FilterId::TuneBrightness, p)?.apply(img)
}

pub fn tune_contrast(img: &RasterImage, p: f64) -> Result<RasterImage> {
    check_unit("tune_contrast", p)?;
    FilterParams::scalar(FilterId::TuneContrast, p)?.apply(img)
}

pub fn curve_filter(img: &RasterImage, offsets: &[f64]) -> Result<RasterImage> {
    FilterParams::new(FilterId::Curve, offsets.to_vec())?.apply(img)
}

pub fn flatten_brightness(img: &RasterImage, strength: f64) -> Result<RasterImage> {
    check_unit("flatten_brightness", strength)?;
    FilterParams::scalar(FilterId::FlattenBrightness, strength)?.apply(img)
}

/// Synthesizes the opposite effect of a filter: `clamp(2M - F(s) M)`, with
/// `F(s) M` taken before clamping.
pub fn negate_effect(params: &FilterParams, img: &RasterImage) -> Result<RasterImage> {
    let filtered = apply_unclamped(params, img)?;
    let out = img.pixels().iter().zip(filtered).map(|(&m, f)| [0, 1, 2].map(|i| 2.0 * m[i] - f[i])).collect();
    finish(img, out)
}

/// Applies a scalar filter at a signed strength: negative values run the
/// filter at `|strength|` through [`negate_effect`]. Only filters whose
/// neutral point is 0 have a signed range.
pub fn apply_signed(filter: FilterId, strength: f64, img: &RasterImage) -> Result<RasterImage> {
    let domain = parameter_domain(filter);
    if domain.dims() != 1 || domain.neutral[0] != 0.0 {
        return Err(Error::arg(format!("{filter} has no signed strength range")));
    }
    if !(-1.0..=1.0).contains(&strength) {
        return Err(Error::arg(format!("signed strength {strength} outside [-1, 1]")));
    }
    let params = FilterParams::scalar(filter, strength.abs())?;
    if strength < 0.0 {
        negate_effect(&params, img)
    } else {
        params.apply(img)
    }
}
