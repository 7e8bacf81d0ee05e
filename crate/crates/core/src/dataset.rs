//! Training-set generation from an unlabeled corpus of good photos.
//!
//! Every corpus image enters the set with target 1.0; perturbed copies are
//! scored by how far the perturbation moved them. Crop datasets score by
//! retained area instead.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{negate_effect, parameter_domain, FilterId, FilterParams};
use crate::image::{mean_abs_diff, perturbation_score, resize_for_model, RasterImage, SimilarityScore};

pub const DEFAULT_TRAINING_SIZE: usize = 64;
/// Corpus images are kept at this multiple of the training size so crops
/// are taken from real detail rather than upsampled.
pub const DEFAULT_SOURCE_FACTOR: usize = 2;
pub const SATURATION_DELTA_CAP: f64 = 0.06;
pub const HDR_DELTA_CAP: f64 = 0.20;
pub const CROP_MAX_RETRIES: usize = 20;

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub id: String,
    pub image: RasterImage,
}

/// A set of square photos sharing one source resolution.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest_id: String,
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new(manifest_id: impl Into<String>, entries: Vec<CorpusEntry>) -> Result<Self> {
        if let Some(first) = entries.first() {
            let dims = first.image.dims();
            if dims.0 != dims.1 {
                return Err(Error::arg("corpus images must be square"));
            }
            if entries.iter().any(|e| e.image.dims() != dims) {
                return Err(Error::arg("corpus images must share one size"));
            }
        }
        Ok(Corpus { manifest_id: manifest_id.into(), entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_size(&self) -> Option<usize> {
        self.entries.first().map(|e| e.image.width())
    }

    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.entries.len());
        let (a, b) = self.entries.split_at(n);
        (
            Corpus { manifest_id: format!("{}[..{n}]", self.manifest_id), entries: a.to_vec() },
            Corpus { manifest_id: format!("{}[{n}..]", self.manifest_id), entries: b.to_vec() },
        )
    }

    /// Loads images listed in a manifest (one path per line, `#` comments),
    /// center-cropping each to a square and resampling to `source_size`.
    pub fn load_manifest(path: impl AsRef<Path>, source_size: usize) -> Result<Self> {
        let path = path.as_ref();
        let files = crate::panorama::read_manifest(path)?;
        let entries = files
            .par_iter()
            .map(|f| {
                let img = RasterImage::open(f)?;
                Ok(CorpusEntry { id: f.display().to_string(), image: square_resample(&img, source_size)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(path.display().to_string(), entries)
    }
}

/// Center square crop followed by resampling to `size`.
pub fn square_resample(img: &RasterImage, size: usize) -> Result<RasterImage> {
    let (w, h) = img.dims();
    let side = w.min(h);
    let sq = img.crop((w - side) / 2, (h - side) / 2, side, side)?;
    resize_for_model(&sq, size, size)
}

/// Keeps images whose mean HSV saturation reaches `min_avg_sat`.
pub fn filter_corpus_by_saturation(corpus: &Corpus, min_avg_sat: f64) -> Corpus {
    let entries: Vec<CorpusEntry> =
        corpus.entries.iter().filter(|e| e.image.mean_saturation() >= min_avg_sat).cloned().collect();
    if entries.is_empty() {
        log::warn!("saturation gate {min_avg_sat} removed every image from {}", corpus.manifest_id);
    }
    Corpus { manifest_id: corpus.manifest_id.clone(), entries }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBatch {
    /// Per-dimension sampling interval inside the filter domain.
    pub ranges: Vec<(f64, f64)>,
    pub count: usize,
    /// Apply the sampled parameters through the negation identity
    /// `2M - F(s)M`, producing the opposite effect.
    pub negate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub filter: FilterId,
    pub batches: Vec<SamplingBatch>,
    pub delta_cap: f64,
}

impl PerturbationSpec {
    /// Saturation in `(0, 0.8)`, six copies per image, 6% cap.
    pub fn saturation() -> Self {
        PerturbationSpec {
            filter: FilterId::Saturation,
            batches: vec![SamplingBatch { ranges: vec![(0.0, 0.8)], count: 6, negate: false }],
            delta_cap: SATURATION_DELTA_CAP,
        }
    }

    /// Six under-processed copies at signed strength `(-1, -0.5)` plus three
    /// over-processed ones at `(0.5, 1)`, 20% cap.
    pub fn hdr() -> Self {
        PerturbationSpec {
            filter: FilterId::Hdr,
            batches: vec![
                SamplingBatch { ranges: vec![(0.5, 1.0)], count: 6, negate: true },
                SamplingBatch { ranges: vec![(0.5, 1.0)], count: 3, negate: false },
            ],
            delta_cap: HDR_DELTA_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_cap > 0.0) {
            return Err(Error::arg("delta cap must be positive"));
        }
        let domain = parameter_domain(self.filter);
        for (i, b) in self.batches.iter().enumerate() {
            if b.count == 0 {
                return Err(Error::arg(format!("batch {i} has zero count")));
            }
            if b.ranges.len() != domain.dims() {
                return Err(Error::arg(format!(
                    "batch {i} has {} ranges, {} needs {}",
                    b.ranges.len(),
                    self.filter,
                    domain.dims()
                )));
            }
            for ((lo, hi), (dlo, dhi)) in b.ranges.iter().zip(&domain.bounds) {
                if !(lo <= hi && lo >= dlo && hi <= dhi) {
                    return Err(Error::arg(format!(
                        "batch {i} range ({lo}, {hi}) outside {} domain ({dlo}, {dhi})",
                        self.filter
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn examples_per_image(&self) -> usize {
        1 + self.batches.iter().map(|b| b.count).sum::<usize>()
    }
}

/// Where a training example came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// `None` for the unmodified original.
    pub operation: Option<String>,
    pub batch: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub image: RasterImage,
    pub target: SimilarityScore,
    pub provenance: Provenance,
}

/// Seed of the RNG stream for one sample.
pub fn stream_seed(seed: u64, image: usize, batch: usize, sample: usize) -> u64 {
    let mut h = splitmix(seed);
    for v in [image as u64, batch as u64, sample as u64] {
        h = splitmix(h ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform sample in `[lo, hi]`; degenerate intervals return `lo`.
pub(crate) fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn generate_aspect_dataset(
    corpus: &Corpus,
    spec: &PerturbationSpec,
    seed: u64,
    training_size: usize,
) -> Result<Vec<TrainingExample>> {
    spec.validate()?;
    let per_image = corpus
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let base = resize_for_model(&entry.image, training_size, training_size)?;
            let mut out = Vec::with_capacity(spec.examples_per_image());
            out.push(TrainingExample {
                image: base.clone(),
                target: SimilarityScore::IDENTICAL,
                provenance: Provenance { source: entry.id.clone(), operation: None, batch: None, seed },
            });
            for (b, batch) in spec.batches.iter().enumerate() {
                for s in 0..batch.count {
                    let sample_seed = stream_seed(seed, i, b, s);
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                    let values: Vec<f64> = batch.ranges.iter().map(|&(lo, hi)| uniform(&mut rng, lo, hi)).collect();
                    let params = FilterParams::new(spec.filter, values)
                        .map_err(|e| Error::Internal(format!("sampled parameter left the filter domain: {e}")))?;
                    let perturbed = if batch.negate { negate_effect(&params, &base)? } else { params.apply(&base)? };
                    let delta = mean_abs_diff(&base, &perturbed)?;
                    let operation = if batch.negate { format!("negate({params})") } else { params.to_string() };
                    out.push(TrainingExample {
                        image: perturbed,
                        target: perturbation_score(delta, spec.delta_cap)?,
                        provenance: Provenance {
                            source: entry.id.clone(),
                            operation: Some(operation),
                            batch: Some(b),
                            seed: sample_seed,
                        },
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropDatasetConfig {
    pub training_size: usize,
    /// Crops per image in the near-full batch (width 90-100%).
    pub near_count: usize,
    /// Crops per image in the far batch (width 50-90%).
    pub far_count: usize,
}

impl Default for CropDatasetConfig {
    fn default() -> Self {
        CropDatasetConfig { training_size: DEFAULT_TRAINING_SIZE, near_count: 3, far_count: 3 }
    }
}

pub const NEAR_WIDTH_RANGE: (f64, f64) = (0.9, 1.0);
pub const FAR_WIDTH_RANGE: (f64, f64) = (0.5, 0.9);
pub const CROP_ASPECT_RANGE: (f64, f64) = (0.5, 2.0);

/// Samples one crop window: width fraction, then aspect ratio (w/h), then a
/// uniformly random contained offset. Retries on infeasible geometry.
pub fn sample_crop(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    width_range: (f64, f64),
) -> Option<(usize, usize, usize, usize)> {
    for _ in 0..CROP_MAX_RETRIES {
        let frac = uniform(rng, width_range.0, width_range.1);
        let aspect = uniform(rng, CROP_ASPECT_RANGE.0, CROP_ASPECT_RANGE.1);
        let cw = ((frac * w as f64).round() as usize).clamp(1, w);
        let ch = (cw as f64 / aspect).round() as usize;
        if ch == 0 || ch > h {
            continue;
        }
        let x = rng.random_range(0..=w - cw);
        let y = rng.random_range(0..=h - ch);
        return Some((x, y, cw, ch));
    }
    None
}

pub fn generate_crop_dataset(corpus: &Corpus, seed: u64, cfg: &CropDatasetConfig) -> Result<Vec<TrainingExample>> {
    let s = cfg.training_size;
    let per_image = corpus
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let (w, h) = entry.image.dims();
            let mut out = vec![TrainingExample {
                image: resize_for_model(&entry.image, s, s)?,
                target: SimilarityScore::IDENTICAL,
                provenance: Provenance { source: entry.id.clone(), operation: None, batch: None, seed },
            }];
            for (b, (range, count)) in
                [(NEAR_WIDTH_RANGE, cfg.near_count), (FAR_WIDTH_RANGE, cfg.far_count)].into_iter().enumerate()
            {
                for k in 0..count {
                    let sample_seed = stream_seed(seed, i, b, k);
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                    let Some((x, y, cw, ch)) = sample_crop(&mut rng, w, h, range) else {
                        log::warn!("no feasible crop for {} after {CROP_MAX_RETRIES} tries", entry.id);
                        continue;
                    };
                    let crop = entry.image.crop(x, y, cw, ch)?;
                    let area = (cw * ch) as f64 / (w * h) as f64;
                    out.push(TrainingExample {
                        image: resize_for_model(&crop, s, s)?,
                        target: SimilarityScore::new(area)?,
                        provenance: Provenance {
                            source: entry.id.clone(),
                            operation: Some(format!("crop={x},{y},{cw},{ch}")),
                            batch: Some(b),
                            seed: sample_seed,
                        },
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    path: String,
    target: f64,
    source: String,
    operation: String,
    batch: String,
    seed: u64,
}

/// Writes `NNNNN.png` files plus `index.csv`.
pub fn save_dataset(examples: &[TrainingExample], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    examples.par_iter().enumerate().try_for_each(|(i, e)| e.image.save_png(dir.join(format!("{i:05}.png"))))?;
    let index = dir.join("index.csv");
    let mut w = csv::Writer::from_path(&index)?;
    for (i, e) in examples.iter().enumerate() {
        w.serialize(IndexRow {
            path: format!("{i:05}.png"),
            target: e.target.value(),
            source: e.provenance.source.clone(),
            operation: e.provenance.operation.clone().unwrap_or_default(),
            batch: e.provenance.batch.map(|b| b.to_string()).unwrap_or_default(),
            seed: e.provenance.seed,
        })?;
    }
    w.flush()?;
    Ok(index)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let dir = dir.as_ref();
    let index = dir.join("index.csv");
    if !index.exists() {
        return Err(Error::MissingArtifact(index));
    }
    let mut r = csv::Reader::from_path(&index)?;
    let rows: Vec<IndexRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.into_par_iter()
        .map(|row| {
            Ok(TrainingExample {
                image: RasterImage::open(dir.join(&row.path))?,
                target: SimilarityScore::new(row.target)?,
                provenance: Provenance {
                    source: row.source,
                    operation: (!row.operation.is_empty()).then_some(row.operation),
                    batch: row.batch.parse().ok(),
                    seed: row.seed,
                },
            })
        })
        .collect()
}
