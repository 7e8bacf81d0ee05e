//! Crop-candidate search: a sliding window over sizes and aspect ratios,
//! scored by a blend of the composition scorer and the overall scorer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_for_model, RasterImage};
use crate::scoring::Scorer;

pub const MIN_CROP_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub source_w: usize,
    pub source_h: usize,
}

impl CropWindow {
    pub fn new(x: usize, y: usize, w: usize, h: usize, source_w: usize, source_h: usize) -> Result<Self> {
        if w < MIN_CROP_SIDE || h < MIN_CROP_SIDE {
            return Err(Error::arg(format!("crop {w}x{h} smaller than {MIN_CROP_SIDE}px")));
        }
        if x + w > source_w || y + h > source_h {
            return Err(Error::arg(format!("crop {w}x{h}+{x}+{y} not contained in {source_w}x{source_h}")));
        }
        Ok(CropWindow { x, y, w, h, source_w, source_h })
    }

    pub fn full(source_w: usize, source_h: usize) -> Result<Self> {
        Self::new(0, 0, source_w, source_h, source_w, source_h)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn iou(&self, other: &CropWindow) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w).saturating_sub(self.x.max(other.x));
        let iy = (self.y + self.h).min(other.y + other.h).saturating_sub(self.y.max(other.y));
        let inter = (ix * iy) as f64;
        inter / ((self.area() + other.area()) as f64 - inter).max(f64::MIN_POSITIVE)
    }

    pub fn extract(&self, img: &RasterImage) -> Result<RasterImage> {
        if img.dims() != (self.source_w, self.source_h) {
            return Err(Error::arg("window was built for a different source size"));
        }
        img.crop(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCrop {
    pub window: CropWindow,
    /// Composition weight.
    pub c: f64,
    pub hybrid: f64,
    pub crop_score: f64,
    pub overall_score: f64,
}

fn check_weight(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::arg(format!("composition weight {c} outside [0, 1]")));
    }
    Ok(())
}

#[inline]
pub fn blend(c: f64, crop_score: f64, overall_score: f64) -> f64 {
    c * crop_score + (1.0 - c) * overall_score
}

/// `c * composition(img) + (1 - c) * overall(img)`.
pub fn hybrid_crop_score(
    crop_img: &RasterImage,
    c: f64,
    crop_scorer: &dyn Scorer,
    overall_scorer: &dyn Scorer,
) -> Result<f64> {
    check_weight(c)?;
    Ok(blend(c, crop_scorer.score(crop_img)?, overall_scorer.score(crop_img)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropGrid {
    /// Window widths as fractions of the source width, largest first.
    pub width_fractions: Vec<f64>,
    /// Window aspect ratios (w / h).
    pub aspects: Vec<f64>,
    /// Stride as a fraction of the window's own size.
    pub stride_fraction: f64,
    /// Windows overlapping a better kept window above this IoU are dropped.
    pub max_iou: f64,
    /// Side of the square each crop is resampled to before scoring.
    pub score_size: usize,
}

impl Default for CropGrid {
    fn default() -> Self {
        CropGrid {
            width_fractions: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
            aspects: vec![0.75, 1.0, 1.33, 1.78],
            stride_fraction: 0.125,
            max_iou: 0.8,
            score_size: crate::dataset::DEFAULT_TRAINING_SIZE,
        }
    }
}

impl CropGrid {
    /// Every window in scan order: larger widths first, then the aspect list
    /// order, then top-to-bottom, then left-to-right.
    pub fn windows(&self, w: usize, h: usize) -> Result<Vec<CropWindow>> {
        if !(self.stride_fraction > 0.0) {
            return Err(Error::arg("stride fraction must be positive"));
        }
        let mut fractions = self.width_fractions.clone();
        fractions.sort_by(|a, b| b.total_cmp(a));
        let mut out = Vec::new();
        for &frac in &fractions {
            for &aspect in &self.aspects {
                if !(frac > 0.0 && frac <= 1.0 && aspect > 0.0) {
                    return Err(Error::arg(format!("bad grid entry frac={frac} aspect={aspect}")));
                }
                let cw = (frac * w as f64).round() as usize;
                let ch = (cw as f64 / aspect).round() as usize;
                if cw < MIN_CROP_SIDE || ch < MIN_CROP_SIDE || cw > w || ch > h {
                    continue;
                }
                let sx = ((cw as f64 * self.stride_fraction).round() as usize).max(1);
                let sy = ((ch as f64 * self.stride_fraction).round() as usize).max(1);
                let mut y = 0;
                while y + ch <= h {
                    let mut x = 0;
                    while x + cw <= w {
                        out.push(CropWindow { x, y, w: cw, h: ch, source_w: w, source_h: h });
                        x += sx;
                    }
                    y += sy;
                }
            }
        }
        Ok(out)
    }
}

/// Component scores of one window, independent of the blend weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScores {
    pub window: CropWindow,
    pub crop_score: f64,
    pub overall_score: f64,
}

pub fn score_windows(
    img: &RasterImage,
    grid: &CropGrid,
    crop_scorer: &dyn Scorer,
    overall_scorer: &dyn Scorer,
) -> Result<Vec<WindowScores>> {
    let windows = grid.windows(img.width(), img.height())?;
    if windows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no feasible crop window in a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    windows
        .par_iter()
        .map(|win| {
            let crop = resize_for_model(&win.extract(img)?, grid.score_size, grid.score_size)?;
            Ok(WindowScores {
                window: *win,
                crop_score: crop_scorer.score(&crop)?,
                overall_score: overall_scorer.score(&crop)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropSearch {
    pub crops: Vec<ScoredCrop>,
    /// Fewer than `k` windows survived duplicate suppression.
    pub short: bool,
}

/// Ranks pre-scored windows by the blend at weight `c` and keeps the best
/// `k` that do not overlap an already kept window by more than `max_iou`.
/// Ties keep scan order.
pub fn select_top_k(scored: &[WindowScores], c: f64, k: usize, max_iou: f64) -> Result<CropSearch> {
    check_weight(c)?;
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let mut ranked: Vec<ScoredCrop> = scored
        .iter()
        .map(|s| ScoredCrop {
            window: s.window,
            c,
            hybrid: blend(c, s.crop_score, s.overall_score),
            crop_score: s.crop_score,
            overall_score: s.overall_score,
        })
        .collect();
    // stable sort: equal scores stay in scan order
    ranked.sort_by(|a, b| b.hybrid.total_cmp(&a.hybrid));
    let mut kept: Vec<ScoredCrop> = Vec::with_capacity(k);
    for cand in ranked {
        if kept.iter().all(|kc| kc.window.iou(&cand.window) <= max_iou) {
            kept.push(cand);
            if kept.len() == k {
                break;
            }
        }
    }
    let short = kept.len() < k;
    Ok(CropSearch { crops: kept, short })
}

pub fn search_crops(
    img: &RasterImage,
    c: f64,
    k: usize,
    grid: &CropGrid,
    crop_scorer: &dyn Scorer,
    overall_scorer: &dyn Scorer,
) -> Result<CropSearch> {
    check_weight(c)?;
    let scored = score_windows(img, grid, crop_scorer, overall_scorer)?;
    select_top_k(&scored, c, k, grid.max_iou)
}

pub const SWEEP_WIDTH_FRACTION: f64 = 0.5;
pub const SWEEP_ASPECT: f64 = 1.8;

#[derive(Clone, Debug, PartialEq)]
pub struct VerticalSweep {
    pub windows: Vec<CropWindow>,
    /// `scores[s][i]`: scorer `s` at window `i`.
    pub scores: Vec<Vec<f64>>,
}

/// Slides a half-width, 1.8:1 window from top to bottom along the
/// horizontal center and scores every position with each scorer.
pub fn vertical_sweep_diagnostic(
    img: &RasterImage,
    positions: usize,
    score_size: usize,
    scorers: &[&dyn Scorer],
) -> Result<VerticalSweep> {
    let (w, h) = img.dims();
    let cw = (w as f64 * SWEEP_WIDTH_FRACTION).round() as usize;
    let ch = (cw as f64 / SWEEP_ASPECT).round() as usize;
    if cw == 0 || ch == 0 || ch > h {
        return Err(Error::arg(format!("sweep window {cw}x{ch} does not fit {w}x{h}")));
    }
    let x = (w - cw) / 2;
    let travel = h - ch;
    let n = positions.max(1);
    let windows: Vec<CropWindow> = (0..n)
        .map(|i| {
            let y = if n == 1 { travel / 2 } else { (travel as f64 * i as f64 / (n - 1) as f64).round() as usize };
            CropWindow { x, y, w: cw, h: ch, source_w: w, source_h: h }
        })
        .collect();
    let crops = windows
        .par_iter()
        .map(|win| resize_for_model(&win.extract(img)?, score_size, score_size))
        .collect::<Result<Vec<_>>>()?;
    let scores = scorers
        .iter()
        .map(|s| crops.iter().map(|c| s.score(c)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(VerticalSweep { windows, scores })
}
