//! Aspect scorers and the aesthetic scale: percentile ranks, the four
//! quality levels, the affine map from overall score to level, and rater
//! consensus statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::learner::MlpModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Composition,
    Saturation,
    Hdr,
    Overall,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Composition, Aspect::Saturation, Aspect::Hdr, Aspect::Overall];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Composition => "composition",
            Aspect::Saturation => "saturation",
            Aspect::Hdr => "hdr",
            Aspect::Overall => "overall",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "composition" | "crop" => Ok(Aspect::Composition),
            "saturation" => Ok(Aspect::Saturation),
            "hdr" => Ok(Aspect::Hdr),
            "overall" => Ok(Aspect::Overall),
            other => Err(Error::arg(format!("unknown aspect '{other}'"))),
        }
    }
}

/// Anything that maps an image to a score for one aspect.
pub trait Scorer: Send + Sync {
    fn aspect(&self) -> Aspect;
    fn score(&self, img: &RasterImage) -> Result<f64>;
}

/// A trained model bound to the aspect it measures.
#[derive(Clone, Debug)]
pub struct AspectScorer {
    aspect: Aspect,
    model: MlpModel,
}

impl AspectScorer {
    pub fn new(aspect: Aspect, model: MlpModel) -> Self {
        AspectScorer { aspect, model }
    }

    pub fn load(aspect: Aspect, path: impl AsRef<Path>) -> Result<Self> {
        Ok(AspectScorer { aspect, model: MlpModel::load(path)? })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }
}

impl Scorer for AspectScorer {
    fn aspect(&self) -> Aspect {
        self.aspect
    }

    fn score(&self, img: &RasterImage) -> Result<f64> {
        self.model.predict(img)
    }
}

/// Returns the same value for every image.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer {
    pub aspect: Aspect,
    pub value: f64,
}

impl Scorer for ConstantScorer {
    fn aspect(&self) -> Aspect {
        self.aspect
    }

    fn score(&self, _img: &RasterImage) -> Result<f64> {
        Ok(self.value)
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F> {
    aspect: Aspect,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&RasterImage) -> f64 + Send + Sync,
{
    pub fn new(aspect: Aspect, f: F) -> Self {
        FnScorer { aspect, f }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&RasterImage) -> f64 + Send + Sync,
{
    fn aspect(&self) -> Aspect {
        self.aspect
    }

    fn score(&self, img: &RasterImage) -> Result<f64> {
        Ok((self.f)(img))
    }
}

/// Ascending-rank percentiles `rank / N`; tied scores share the mean of
/// their positions' percentiles.
pub fn rank_to_percentile(raw_scores: &[f64]) -> Result<Vec<f64>> {
    if raw_scores.is_empty() {
        return Err(Error::arg("cannot rank an empty score list"));
    }
    if raw_scores.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("scores must not be NaN"));
    }
    let n = raw_scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw_scores[a].total_cmp(&raw_scores[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && raw_scores[order[end]] == raw_scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = mean_rank / n as f64;
        }
        start = end;
    }
    Ok(out)
}

pub const LEVEL_THRESHOLDS: [f64; 3] = [0.15, 0.7, 0.85];

/// Maps a percentile to quality level 1..=4; a percentile equal to a
/// threshold belongs to the higher level.
pub fn percentile_to_level(r: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::arg(format!("percentile {r} outside [0, 1]")));
    }
    Ok(1 + LEVEL_THRESHOLDS.iter().filter(|&&t| r >= t).count() as u8)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleMapping {
    pub a: f64,
    pub b: f64,
}

impl Default for ScaleMapping {
    /// Spreads `[0, 1]` linearly over the four levels.
    fn default() -> Self {
        ScaleMapping { a: 3.0, b: 1.0 }
    }
}

impl ScaleMapping {
    /// `a * overall + b`, unclamped.
    pub fn predicted_level(&self, overall: f64) -> f64 {
        self.a * overall + self.b
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleFit {
    pub mapping: ScaleMapping,
    /// All inputs were equal; the slope was forced to zero.
    pub degenerate: bool,
}

/// Ordinary least squares of human level on overall score.
pub fn fit_scale_mapping(pairs: &[(f64, f64)]) -> Result<ScaleFit> {
    if pairs.is_empty() {
        return Err(Error::arg("no pairs to fit"));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::arg("pairs must be finite"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Ok(ScaleFit { mapping: ScaleMapping { a: 0.0, b: my }, degenerate: true });
    }
    let a = sxy / sxx;
    Ok(ScaleFit { mapping: ScaleMapping { a, b: my - a * mx }, degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub image_id: String,
    pub rater_id: String,
    pub score: f64,
}

impl RatingRecord {
    pub fn new(image_id: impl Into<String>, rater_id: impl Into<String>, score: f64) -> Result<Self> {
        if !(1.0..=4.0).contains(&score) {
            return Err(Error::arg(format!("rating {score} outside the 1-4 scale")));
        }
        Ok(RatingRecord { image_id: image_id.into(), rater_id: rater_id.into(), score })
    }
}

/// Reads `image_id,rater_id,score` rows (header required).
pub fn read_ratings_csv(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<RatingRecord>()
        .map(|row| {
            let row = row?;
            RatingRecord::new(row.image_id, row.rater_id, row.score)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageConsensus {
    pub mean: f64,
    /// Population standard deviation of the raters around `mean`.
    pub sd: f64,
    pub raters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Consensus {
    pub per_image: BTreeMap<String, ImageConsensus>,
    /// Per-image standard deviation averaged over images.
    pub dispersion: f64,
}

pub fn consensus(records: &[RatingRecord]) -> Result<Consensus> {
    if records.is_empty() {
        return Err(Error::arg("no rating records"));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.image_id.as_str()).or_default().push(r.score);
    }
    let per_image: BTreeMap<String, ImageConsensus> = groups
        .into_iter()
        .map(|(id, scores)| {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
            (id.to_string(), ImageConsensus { mean, sd, raters: scores.len() })
        })
        .collect();
    let dispersion = per_image.values().map(|c| c.sd).sum::<f64>() / per_image.len() as f64;
    Ok(Consensus { per_image, dispersion })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_basic_and_ties() {
        assert_eq!(rank_to_percentile(&[5.0, 6.0]).unwrap(), vec![0.5, 1.0]);
        let tied = rank_to_percentile(&[3.0, 3.0, 3.0]).unwrap();
        assert!(tied.iter().all(|v| (v - 2.0 / 3.0).abs() < 1e-15));
        assert!(rank_to_percentile(&[]).is_err());
    }

    #[test]
    fn top_thirty_percent() {
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        let p = rank_to_percentile(&scores).unwrap();
        // score 6 has ranks 7/10 and exactly 3 of 10 strictly above it
        assert!((p[6] - 0.7).abs() < 1e-15);
        assert_eq!(scores.iter().filter(|&&s| s > scores[6]).count(), 3);
    }

    #[test]
    fn levels() {
        assert_eq!(percentile_to_level(0.10).unwrap(), 1);
        assert_eq!(percentile_to_level(0.15).unwrap(), 2);
        assert_eq!(percentile_to_level(0.70).unwrap(), 3);
        assert_eq!(percentile_to_level(0.85).unwrap(), 4);
        assert_eq!(percentile_to_level(1.0).unwrap(), 4);
        assert_eq!(percentile_to_level(0.0).unwrap(), 1);
        assert!(percentile_to_level(1.01).is_err());
    }

    #[test]
    fn scale_fit_cases() {
        let exact: Vec<(f64, f64)> = [0.1, 0.4, 0.9].iter().map(|&x| (x, 2.0 * x + 1.0)).collect();
        let fit = fit_scale_mapping(&exact).unwrap();
        assert!((fit.mapping.a - 2.0).abs() < 1e-9 && (fit.mapping.b - 1.0).abs() < 1e-9);
        assert!(!fit.degenerate);

        let flat = fit_scale_mapping(&[(0.2, 2.5), (0.7, 2.5), (0.9, 2.5)]).unwrap();
        assert!(flat.mapping.a.abs() < 1e-12 && (flat.mapping.b - 2.5).abs() < 1e-12);

        let degenerate = fit_scale_mapping(&[(0.5, 1.0), (0.5, 3.0)]).unwrap();
        assert!(degenerate.degenerate);
        assert_eq!(degenerate.mapping, ScaleMapping { a: 0.0, b: 2.0 });

        assert_eq!(ScaleMapping { a: 2.0, b: 1.0 }.predicted_level(0.75), 2.5);
        assert_eq!(ScaleMapping { a: 0.0, b: 1.7 }.predicted_level(0.3), 1.7);
    }

    #[test]
    fn consensus_cases() {
        let single =
            consensus(&[RatingRecord::new("a", "r1", 2.0).unwrap(), RatingRecord::new("b", "r1", 3.0).unwrap()])
                .unwrap();
        assert_eq!(single.dispersion, 0.0);

        let pair = consensus(&[RatingRecord::new("a", "r1", 2.0).unwrap(), RatingRecord::new("a", "r2", 3.0).unwrap()])
            .unwrap();
        assert_eq!(pair.per_image["a"].mean, 2.5);
        assert_eq!(pair.per_image["a"].sd, 0.5);
        assert!(consensus(&[]).is_err());
        assert!(RatingRecord::new("a", "r", 4.5).is_err());
    }

    #[test]
    fn zero_model_scores_half() {
        let scorer =
            AspectScorer::new(Aspect::Saturation, MlpModel::zeros(crate::learner::FEATURE_LEN, &[8], 16).unwrap());
        let img = RasterImage::filled(20, 20, [0.3, 0.6, 0.1]).unwrap();
        assert_eq!(scorer.score(&img).unwrap(), 0.5);
        assert_eq!(scorer.score(&img).unwrap(), scorer.score(&img).unwrap());
    }
}
