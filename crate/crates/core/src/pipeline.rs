//! End-to-end run: panoramas to ranked, enhanced photographs.
//!
//! For every panorama the standard views are projected, crop candidates are
//! picked per composition weight, each candidate is pushed through the HDR
//! search, the saturation search and the dramatic-mask ensemble, then only
//! the best candidate per view survives and survivors are ranked by the
//! overall score.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{score_windows, select_top_k, CropGrid, ScoredCrop};
use crate::dramatic::{best_dramatic, MaskEnsemble, DEFAULT_BRIGHTEN};
use crate::enhance::{optimize_filter_1d, sweep_diagnostic, Optimized, SearchGrid};
use crate::error::{Error, Result};
use crate::filters::{parameter_domain, FilterId};
use crate::image::RasterImage;
use crate::panorama::{standard_views, Panorama};
use crate::scoring::{Aspect, AspectScorer, ScaleMapping, Scorer};

/// Which image the dramatic-mask stage starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DramaticInput {
    /// The saturation-stage output, so every stage builds on the previous one.
    #[default]
    Latest,
    /// The HDR-stage output; the saturation result is discarded.
    HdrOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub composition: PathBuf,
    pub saturation: PathBuf,
    pub hdr: PathBuf,
    pub overall: PathBuf,
    /// `ensemble.json` or the directory holding it.
    pub ensemble: PathBuf,
}

impl Default for ModelPaths {
    fn default() -> Self {
        ModelPaths {
            composition: "models/composition.crtm".into(),
            saturation: "models/saturation.crtm".into(),
            hdr: "models/hdr.crtm".into(),
            overall: "models/overall.crtm".into(),
            ensemble: "models/ensemble".into(),
        }
    }
}

impl ModelPaths {
    /// Anchors relative paths at `base`.
    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.composition, &mut self.saturation, &mut self.hdr, &mut self.overall, &mut self.ensemble] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Side of each projected view.
    pub view_size: usize,
    pub crop_grid: CropGrid,
    pub composition_weights: Vec<f64>,
    pub crops_per_weight: usize,
    pub hdr_values: Vec<f64>,
    pub saturation_values: Vec<f64>,
    pub brighten_amount: f64,
    pub dramatic_input: DramaticInput,
    pub scale: ScaleMapping,
    pub models: ModelPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            view_size: 256,
            crop_grid: CropGrid::default(),
            composition_weights: vec![0.0, 0.5, 1.0],
            crops_per_weight: 3,
            hdr_values: SearchGrid::hdr().values().to_vec(),
            saturation_values: SearchGrid::saturation().values().to_vec(),
            brighten_amount: DEFAULT_BRIGHTEN,
            dramatic_input: DramaticInput::default(),
            scale: ScaleMapping::default(),
            models: ModelPaths::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative model paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut cfg: PipelineConfig = toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::arg(format!("{}: {e}", path.display())))?;
        cfg.models.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn hdr_grid(&self) -> Result<SearchGrid> {
        SearchGrid::new(FilterId::Hdr, self.hdr_values.clone())
    }

    pub fn saturation_grid(&self) -> Result<SearchGrid> {
        SearchGrid::new(FilterId::Saturation, self.saturation_values.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_size < crate::composition::MIN_CROP_SIDE {
            return Err(Error::arg(format!("view size {} is too small", self.view_size)));
        }
        if self.composition_weights.is_empty() {
            return Err(Error::arg("no composition weights"));
        }
        if let Some(c) = self.composition_weights.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::arg(format!("composition weight {c} outside [0, 1]")));
        }
        if self.crops_per_weight == 0 {
            return Err(Error::arg("crops_per_weight must be at least 1"));
        }
        if !parameter_domain(FilterId::Brighten).contains(&[self.brighten_amount]) {
            return Err(Error::arg(format!("brighten amount {} outside its domain", self.brighten_amount)));
        }
        if !(self.scale.a.is_finite() && self.scale.b.is_finite()) {
            return Err(Error::arg("scale mapping must be finite"));
        }
        self.hdr_grid()?;
        self.saturation_grid()?;
        Ok(())
    }
}

pub struct PipelineModels {
    pub composition: Box<dyn Scorer>,
    pub saturation: Box<dyn Scorer>,
    pub hdr: Box<dyn Scorer>,
    pub overall: Box<dyn Scorer>,
    pub ensemble: MaskEnsemble,
}

impl PipelineModels {
    /// Loads every model up front so a missing artifact stops the run before
    /// any work is done.
    pub fn load(paths: &ModelPaths) -> Result<Self> {
        for p in [&paths.composition, &paths.saturation, &paths.hdr, &paths.overall, &paths.ensemble] {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.clone()));
            }
        }
        let models = PipelineModels {
            composition: Box::new(AspectScorer::load(Aspect::Composition, &paths.composition)?),
            saturation: Box::new(AspectScorer::load(Aspect::Saturation, &paths.saturation)?),
            hdr: Box::new(AspectScorer::load(Aspect::Hdr, &paths.hdr)?),
            overall: Box::new(AspectScorer::load(Aspect::Overall, &paths.overall)?),
            ensemble: MaskEnsemble::load(&paths.ensemble)?,
        };
        if models.ensemble.is_empty() {
            return Err(Error::IncompatibleModel(format!("{}: ensemble has no members", paths.ensemble.display())));
        }
        Ok(models)
    }

    fn check(&self) -> Result<()> {
        let pairs: [(&dyn Scorer, Aspect); 4] = [
            (self.composition.as_ref(), Aspect::Composition),
            (self.saturation.as_ref(), Aspect::Saturation),
            (self.hdr.as_ref(), Aspect::Hdr),
            (self.overall.as_ref(), Aspect::Overall),
        ];
        for (s, want) in pairs {
            if s.aspect() != want {
                return Err(Error::IncompatibleModel(format!("{} scorer supplied for {want}", s.aspect())));
            }
        }
        if self.ensemble.is_empty() {
            return Err(Error::InvalidState("dramatic-mask ensemble is empty".into()));
        }
        Ok(())
    }
}

/// Decodes panoramas, skipping (with a warning) any that fail.
pub fn load_panoramas(paths: &[PathBuf]) -> (Vec<Panorama>, Vec<Skipped>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match Panorama::open(p) {
            Ok(pano) => ok.push(pano),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push(Skipped { path: p.display().to_string(), reason: e.to_string() });
            }
        }
    }
    (ok, skipped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub filter: FilterId,
    pub value: f64,
    pub score: f64,
    /// Score at the identity parameter, when the grid contains it.
    pub neutral_score: Option<f64>,
    pub trace: Vec<(f64, f64)>,
}

impl StageRecord {
    fn from_search(filter: FilterId, r: &Optimized) -> Self {
        let neutral = parameter_domain(filter).neutral[0];
        let neutral_score = r.trace.iter().find(|t| t.0 == neutral).map(|t| t.1);
        StageRecord { filter, value: r.param, score: r.score, neutral_score, trace: r.trace.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DramaticRecord {
    pub member: String,
    pub index: usize,
    pub input: DramaticInput,
    pub score: f64,
    pub member_scores: Vec<f64>,
}

/// Aspect scores of the final image plus its predicted rating level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrail {
    pub composition: f64,
    pub saturation: f64,
    pub hdr: f64,
    pub overall: f64,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub panorama: String,
    pub view: usize,
    /// Position of the crop in its weight's top-k list.
    pub crop_rank: usize,
    pub crop: ScoredCrop,
    pub hdr: StageRecord,
    pub saturation: StageRecord,
    pub dramatic: DramaticRecord,
    pub scores: ScoreTrail,
    /// File name of the rendered result.
    pub image: String,
}

impl Candidate {
    pub fn image_name(panorama: &str, view: usize) -> String {
        format!("{panorama}-v{view}.png")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub panoramas: usize,
    pub views: usize,
    pub candidates: usize,
    pub survivors: usize,
    /// Searches that returned fewer than `crops_per_weight` crops.
    pub short_searches: usize,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Survivors ranked by overall score, best first.
    pub ranked: Vec<Candidate>,
    /// Final image of each ranked candidate.
    pub images: Vec<RasterImage>,
    /// Unenhanced crop of each ranked candidate.
    pub crops: Vec<RasterImage>,
    pub summary: RunSummary,
}

struct Pending {
    candidate: Candidate,
    image: RasterImage,
    crop: RasterImage,
}

fn enhance_candidate(
    pano: &Panorama,
    view_index: usize,
    view: &RasterImage,
    crop_rank: usize,
    crop: ScoredCrop,
    models: &PipelineModels,
    grids: (&SearchGrid, &SearchGrid),
    cfg: &PipelineConfig,
) -> Result<Pending> {
    let p1 = crop.window.extract(view)?;
    let p2 = optimize_filter_1d(&p1, grids.0, models.hdr.as_ref())?;
    let p3 = optimize_filter_1d(&p2.image, grids.1, models.saturation.as_ref())?;
    let input = match cfg.dramatic_input {
        DramaticInput::Latest => &p3.image,
        DramaticInput::HdrOutput => &p2.image,
    };
    let d = best_dramatic(input, &models.ensemble, models.overall.as_ref(), cfg.brighten_amount)?;
    let hdr = StageRecord::from_search(FilterId::Hdr, &p2);
    let saturation = StageRecord::from_search(FilterId::Saturation, &p3);
    for st in [&hdr, &saturation] {
        if let Some(n) = st.neutral_score {
            if st.score < n {
                log::warn!("{} v{view_index}: {} stage scored below identity", pano.id(), st.filter);
            }
        }
    }
    let scores = ScoreTrail {
        composition: models.composition.score(&d.image)?,
        saturation: models.saturation.score(&d.image)?,
        hdr: models.hdr.score(&d.image)?,
        overall: d.score,
        level: cfg.scale.predicted_level(d.score),
    };
    let candidate = Candidate {
        panorama: pano.id().to_string(),
        view: view_index,
        crop_rank,
        crop,
        hdr,
        saturation,
        dramatic: DramaticRecord {
            member: d.member_id,
            index: d.index,
            input: cfg.dramatic_input,
            score: d.score,
            member_scores: d.scores,
        },
        scores,
        image: Candidate::image_name(pano.id(), view_index),
    };
    Ok(Pending { candidate, image: d.image, crop: p1 })
}

/// Runs the whole pipeline. Output is independent of thread count.
pub fn run_pipeline(panoramas: &[Panorama], models: &PipelineModels, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    models.check()?;
    let hdr_grid = cfg.hdr_grid()?;
    let sat_grid = cfg.saturation_grid()?;

    let mut summary = RunSummary { seed: cfg.seed, panoramas: panoramas.len(), ..Default::default() };
    let mut survivors: Vec<Pending> = Vec::new();

    for pano in panoramas {
        let views = standard_views(pano, cfg.view_size)?;
        summary.views += views.len();
        let per_view = views
            .par_iter()
            .map(|view| -> Result<(Vec<(usize, ScoredCrop)>, usize)> {
                let scored = score_windows(view, &cfg.crop_grid, models.composition.as_ref(), models.overall.as_ref())?;
                let mut crops = Vec::new();
                let mut short = 0;
                for &c in &cfg.composition_weights {
                    let s = select_top_k(&scored, c, cfg.crops_per_weight, cfg.crop_grid.max_iou)?;
                    short += s.short as usize;
                    crops.extend(s.crops.into_iter().enumerate());
                }
                Ok((crops, short))
            })
            .collect::<Result<Vec<_>>>()?;

        for (vi, (crops, short)) in per_view.into_iter().enumerate() {
            summary.short_searches += short;
            summary.candidates += crops.len();
            let enhanced = crops
                .into_par_iter()
                .map(|(rank, crop)| {
                    enhance_candidate(pano, vi, &views[vi], rank, crop, models, (&hdr_grid, &sat_grid), cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            // ties keep generation order
            let best = enhanced
                .into_iter()
                .reduce(|a, b| if b.candidate.scores.overall > a.candidate.scores.overall { b } else { a })
                .ok_or_else(|| Error::Internal("view produced no candidates".into()))?;
            survivors.push(best);
        }
    }

    survivors.sort_by(|a, b| b.candidate.scores.overall.total_cmp(&a.candidate.scores.overall));
    summary.survivors = survivors.len();
    let mut out = RunOutput { ranked: Vec::new(), images: Vec::new(), crops: Vec::new(), summary };
    for p in survivors {
        out.ranked.push(p.candidate);
        out.images.push(p.image);
        out.crops.push(p.crop);
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GALLERY_FILE: &str = "index.html";
pub const IMAGE_DIR: &str = "images";

pub fn write_manifest(ranked: &[Candidate], w: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    for c in ranked {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Candidate>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

/// HTML index of a ranked manifest, best predicted level first. Depends only
/// on the manifest, so it can be rebuilt from a saved one.
pub fn render_gallery(ranked: &[Candidate]) -> String {
    let mut order: Vec<&Candidate> = ranked.iter().collect();
    order.sort_by(|a, b| b.scores.level.total_cmp(&a.scores.level));
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>vphoto gallery</title>\n");
    h.push_str(
        "<style>body{font-family:sans-serif}td{padding:4px 8px;vertical-align:top}img{max-width:320px}</style>\n",
    );
    h.push_str("</head>\n<body>\n<h1>Ranked results</h1>\n<table>\n");
    h.push_str("<tr><th>#</th><th>image</th><th>level</th><th>overall</th><th>provenance</th></tr>\n");
    for (i, c) in order.iter().enumerate() {
        let w = &c.crop.window;
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td><img src=\"{}/{}\" alt=\"{}\"></td><td class=\"level\">{:.4}</td><td class=\"overall\">{:.4}</td>\
             <td>panorama {} view {}<br>crop {}x{}+{}+{} (c={}, rank {})<br>hdr {} / saturation {}<br>mask {}<br>\
             composition {:.4}, saturation {:.4}, hdr {:.4}</td></tr>",
            i + 1,
            IMAGE_DIR,
            escape(&c.image),
            escape(&c.image),
            c.scores.level,
            c.scores.overall,
            escape(&c.panorama),
            c.view,
            w.w,
            w.h,
            w.x,
            w.y,
            c.crop.c,
            c.crop_rank,
            c.hdr.value,
            c.saturation.value,
            escape(&c.dramatic.member),
            c.scores.composition,
            c.scores.saturation,
            c.scores.hdr,
        );
    }
    h.push_str("</table>\n</body>\n</html>\n");
    h
}

pub fn emit_gallery(ranked: &[Candidate], out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(GALLERY_FILE);
    std::fs::write(&path, render_gallery(ranked))?;
    Ok(path)
}

/// Writes images, manifest, summary and gallery into `out_dir`.
pub fn write_run(out: &RunOutput, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let img_dir = out_dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir)?;
    out.ranked.par_iter().zip(out.images.par_iter()).try_for_each(|(c, im)| im.save_png(img_dir.join(&c.image)))?;
    write_manifest(&out.ranked, std::fs::File::create(out_dir.join(MANIFEST_FILE))?)?;
    std::fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    emit_gallery(&out.ranked, out_dir)?;
    Ok(())
}

/// Saturation and HDR sweeps of each survivor's crop, scored by every model.
pub fn write_sweeps(out: &RunOutput, models: &PipelineModels, n_points: usize, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let scorers: [&dyn Scorer; 4] =
        [models.composition.as_ref(), models.saturation.as_ref(), models.hdr.as_ref(), models.overall.as_ref()];
    for (c, crop) in out.ranked.iter().zip(&out.crops) {
        let stem = c.image.trim_end_matches(".png");
        for f in [FilterId::Saturation, FilterId::Hdr] {
            sweep_diagnostic(crop, f, n_points, &scorers)?.save_csv(dir.join(format!("{stem}-{f}.csv")))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig = toml::from_str("view_size = 96\ndramatic_input = \"hdr_output\"\n").unwrap();
        assert_eq!(cfg.view_size, 96);
        assert_eq!(cfg.dramatic_input, DramaticInput::HdrOutput);
        assert_eq!(cfg.crops_per_weight, 3);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn bad_grids_rejected() {
        let cfg = PipelineConfig { saturation_values: vec![0.6, 0.5], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { composition_weights: vec![1.5], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn escape_html() {
        assert_eq!(escape("a<b>&\"'"), "a&lt;b&gt;&amp;&quot;&#39;");
    }
}
