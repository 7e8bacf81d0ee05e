//! One-dimensional parameter search: apply a filter at each grid value,
//! score with the matching aspect scorer, keep the argmax.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{parameter_domain, FilterId, FilterParams};
use crate::image::RasterImage;
use crate::scoring::{Aspect, Scorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    filter: FilterId,
    values: Vec<f64>,
}

impl SearchGrid {
    pub fn new(filter: FilterId, values: Vec<f64>) -> Result<Self> {
        let domain = parameter_domain(filter);
        if domain.dims() != 1 {
            return Err(Error::arg(format!("{filter} is not a one-parameter filter")));
        }
        if values.is_empty() {
            return Err(Error::arg("search grid is empty"));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("search grid must be strictly ascending"));
        }
        if !values.iter().all(|&v| domain.contains(&[v])) {
            return Err(Error::arg(format!("search grid leaves the {filter} domain")));
        }
        Ok(SearchGrid { filter, values })
    }

    /// 0.4 to 0.9 in steps of 0.1; brackets the identity point 0.5.
    pub fn saturation() -> Self {
        SearchGrid { filter: FilterId::Saturation, values: (4..=9).map(|i| i as f64 / 10.0).collect() }
    }

    /// 0 to 0.7 of full strength in steps of 0.1.
    pub fn hdr() -> Self {
        SearchGrid { filter: FilterId::Hdr, values: (0..=7).map(|i| i as f64 / 10.0).collect() }
    }

    pub fn filter(&self) -> FilterId {
        self.filter
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Spacing between the two closest grid values, if there are two.
    pub fn step(&self) -> Option<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).min_by(|a, b| a.total_cmp(b))
    }
}

/// The aspect a filter is optimized against.
pub fn paired_aspect(filter: FilterId) -> Option<Aspect> {
    match filter {
        FilterId::Saturation => Some(Aspect::Saturation),
        FilterId::Hdr => Some(Aspect::Hdr),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct Optimized {
    pub param: f64,
    pub image: RasterImage,
    pub score: f64,
    /// `(value, score)` for every grid value, in grid order.
    pub trace: Vec<(f64, f64)>,
}

impl Optimized {
    pub fn params(&self, filter: FilterId) -> Result<FilterParams> {
        FilterParams::scalar(filter, self.param)
    }
}

/// Scores the filtered image at every grid value and returns the best.
/// Ties go to the lowest parameter value.
pub fn optimize_filter_1d(img: &RasterImage, grid: &SearchGrid, scorer: &dyn Scorer) -> Result<Optimized> {
    if paired_aspect(grid.filter) != Some(scorer.aspect()) {
        return Err(Error::InvalidPairing { filter: grid.filter.to_string(), aspect: scorer.aspect().to_string() });
    }
    let evaluated = grid
        .values
        .par_iter()
        .map(|&v| {
            let out = FilterParams::scalar(grid.filter, v)?.apply(img)?;
            let s = scorer.score(&out)?;
            Ok((v, s, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, e) in evaluated.iter().enumerate() {
        if e.1 > evaluated[best].1 {
            best = i;
        }
    }
    let trace = evaluated.iter().map(|e| (e.0, e.1)).collect();
    let (param, score, image) = evaluated.into_iter().nth(best).expect("grid is nonempty");
    Ok(Optimized { param, image, score, trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub filter: FilterId,
    pub values: Vec<f64>,
    pub aspects: Vec<Aspect>,
    /// `scores[s][i]`: scorer `s` at value `i`.
    pub scores: Vec<Vec<f64>>,
}

impl Sweep {
    /// Largest minus smallest score of scorer `s` along the sweep.
    pub fn peak_to_peak(&self, s: usize) -> f64 {
        let col = &self.scores[s];
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Grid value with the highest score for scorer `s`; ties go low.
    pub fn argmax(&self, s: usize) -> f64 {
        let col = &self.scores[s];
        let mut best = 0;
        for i in 1..col.len() {
            if col[i] > col[best] {
                best = i;
            }
        }
        self.values[best]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["param".to_string()];
        header.extend(self.aspects.iter().map(|a| format!("score_{a}")));
        out.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row = vec![v.to_string()];
            row.extend(self.scores.iter().map(|col| col[i].to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Scores the filtered image at each value with every scorer.
pub fn sweep_values(img: &RasterImage, filter: FilterId, values: &[f64], scorers: &[&dyn Scorer]) -> Result<Sweep> {
    let domain = parameter_domain(filter);
    if domain.dims() != 1 {
        return Err(Error::arg(format!("{filter} is not a one-parameter filter")));
    }
    let per_value = values
        .par_iter()
        .map(|&v| {
            let out = FilterParams::scalar(filter, v)?.apply(img)?;
            scorers.iter().map(|s| s.score(&out)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = (0..scorers.len()).map(|s| per_value.iter().map(|row| row[s]).collect()).collect();
    Ok(Sweep { filter, values: values.to_vec(), aspects: scorers.iter().map(|s| s.aspect()).collect(), scores })
}

/// Evenly spaced sweep over the whole filter domain.
pub fn sweep_diagnostic(
    img: &RasterImage,
    filter: FilterId,
    n_points: usize,
    scorers: &[&dyn Scorer],
) -> Result<Sweep> {
    if n_points < 2 {
        return Err(Error::arg("a sweep needs at least two points"));
    }
    let domain = parameter_domain(filter);
    if domain.dims() != 1 {
        return Err(Error::arg(format!("{filter} is not a one-parameter filter")));
    }
    let (lo, hi) = domain.bounds[0];
    let values: Vec<f64> = (0..n_points).map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64).collect();
    sweep_values(img, filter, &values, scorers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ConstantScorer, FnScorer};

    fn img() -> RasterImage {
        RasterImage::from_fn(16, 16, |x, y| [x as f64 / 15.0, 0.3, y as f64 / 15.0]).unwrap()
    }

    #[test]
    fn presets() {
        assert_eq!(SearchGrid::saturation().values(), &[0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!(SearchGrid::hdr().values(), &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert!(SearchGrid::new(FilterId::Saturation, vec![0.5, 0.4]).is_err());
        assert!(SearchGrid::new(FilterId::Saturation, vec![1.2]).is_err());
        assert!(SearchGrid::new(FilterId::Curve, vec![0.0]).is_err());
    }

    #[test]
    fn constant_scorer_picks_lowest() {
        let s = ConstantScorer { aspect: Aspect::Saturation, value: 0.3 };
        let r = optimize_filter_1d(&img(), &SearchGrid::saturation(), &s).unwrap();
        assert_eq!(r.param, 0.4);
        assert_eq!(r.trace.len(), 6);
    }

    #[test]
    fn pairing_is_checked() {
        let s = ConstantScorer { aspect: Aspect::Hdr, value: 0.3 };
        let err = optimize_filter_1d(&img(), &SearchGrid::saturation(), &s).unwrap_err();
        assert!(matches!(err, Error::InvalidPairing { .. }));
    }

    #[test]
    fn peaked_scorer_finds_peak() {
        let s = FnScorer::new(Aspect::Saturation, |im: &RasterImage| -(im.mean_saturation() - 0.55).abs());
        let grid = SearchGrid::saturation();
        let r = optimize_filter_1d(&img(), &grid, &s).unwrap();
        let best = r.trace.iter().cloned().fold(f64::NEG_INFINITY, |m, t| m.max(t.1));
        assert_eq!(r.score, best);
        let direct = FilterParams::scalar(FilterId::Saturation, r.param).unwrap().apply(&img()).unwrap();
        assert_eq!(s.score(&direct).unwrap(), r.score);
    }

    #[test]
    fn sweep_csv_layout() {
        let a = ConstantScorer { aspect: Aspect::Saturation, value: 0.25 };
        let b = ConstantScorer { aspect: Aspect::Composition, value: 0.5 };
        let sw = sweep_diagnostic(&img(), FilterId::Saturation, 3, &[&a, &b]).unwrap();
        let mut buf = Vec::new();
        sw.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "param,score_saturation,score_composition\n0,0.25,0.5\n0.5,0.25,0.5\n1,0.25,0.5\n");
        assert_eq!(sw.peak_to_peak(0), 0.0);
    }
}
