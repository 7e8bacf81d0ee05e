use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vphoto::composition::{search_crops, CropGrid};
use vphoto::dataset::{
    generate_aspect_dataset, generate_crop_dataset, load_dataset, save_dataset, Corpus, CropDatasetConfig,
    PerturbationSpec, DEFAULT_SOURCE_FACTOR, DEFAULT_TRAINING_SIZE,
};
use vphoto::dramatic::{best_dramatic, train_ensemble, EnsembleConfig, MaskEnsemble, DEFAULT_BRIGHTEN};
use vphoto::enhance::{optimize_filter_1d, sweep_diagnostic, sweep_values, SearchGrid};
use vphoto::filters::FilterId;
use vphoto::learner::{save_with_metadata, train_with_history, Extractor, TrainConfig};
use vphoto::panorama::read_manifest;
use vphoto::pipeline::{
    emit_gallery, load_panoramas, read_manifest as read_run_manifest, run_pipeline, write_run, write_sweeps,
    DramaticInput, PipelineConfig, PipelineModels,
};
use vphoto::scoring::{consensus, fit_scale_mapping, read_ratings_csv, Aspect, AspectScorer, ScaleMapping, Scorer};
use vphoto::synth::{proxy_corpus, ranked_dataset, synthetic_panorama};
use vphoto::{Error, RasterImage, Result};

#[derive(Parser)]
#[command(name = "vphoto", version, about = "Virtual photographer: find, enhance and rank photos inside panoramas")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a corpus manifest from a directory, dropping dull images.
    Ingest(IngestArgs),
    /// Generate a training set for one aspect.
    GenData(GenDataArgs),
    /// Train an aspect scorer from a generated dataset.
    Train(TrainArgs),
    /// Train the dramatic-mask ensemble.
    TrainMask(TrainMaskArgs),
    /// Top crops of one image.
    Crop(CropArgs),
    /// One-parameter filter search on one image.
    Enhance(EnhanceArgs),
    /// Apply the best dramatic mask to one image.
    Dramatic(DramaticArgs),
    /// Full pipeline over a set of panoramas.
    Run(RunArgs),
    /// Rank images by overall score.
    Rank(RankArgs),
    /// Score a filter sweep with several scorers and write a CSV.
    Sweep(SweepArgs),
    /// Fit the level mapping from human ratings.
    FitScale(FitScaleArgs),
    /// Rebuild the gallery page from a saved manifest.
    Report(ReportArgs),
    /// Write synthetic corpora or panoramas.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of images or a manifest file.
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Minimum mean HSV saturation.
    #[arg(long, default_value_t = 0.2)]
    min_saturation: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AspectArg {
    Composition,
    Saturation,
    Hdr,
    Overall,
}

impl From<AspectArg> for Aspect {
    fn from(a: AspectArg) -> Self {
        match a {
            AspectArg::Composition => Aspect::Composition,
            AspectArg::Saturation => Aspect::Saturation,
            AspectArg::Hdr => Aspect::Hdr,
            AspectArg::Overall => Aspect::Overall,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    aspect: AspectArg,
    /// Corpus manifest.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAINING_SIZE)]
    size: usize,
    /// Graded copies per image for the overall dataset.
    #[arg(long, default_value_t = 6)]
    per_image: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    aspect: AspectArg,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainMaskArgs {
    /// Manifest of good photos.
    #[arg(long)]
    corpus: PathBuf,
    /// Overall scorer used to rank snapshots.
    #[arg(long)]
    overall: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    models: usize,
    #[arg(long, default_value_t = 400)]
    steps: u64,
    #[arg(long, default_value_t = 100)]
    snapshot_interval: u64,
    #[arg(long, default_value_t = 5)]
    keep_top: usize,
    /// Images held out from the end of the corpus to rank snapshots.
    #[arg(long, default_value_t = 10)]
    validation: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CropArgs {
    image: PathBuf,
    #[arg(long)]
    composition: PathBuf,
    #[arg(long)]
    overall: PathBuf,
    /// Composition weight in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Directory for the cropped PNGs.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchFilter {
    Saturation,
    Hdr,
}

impl From<SearchFilter> for FilterId {
    fn from(f: SearchFilter) -> Self {
        match f {
            SearchFilter::Saturation => FilterId::Saturation,
            SearchFilter::Hdr => FilterId::Hdr,
        }
    }
}

fn default_grid(f: FilterId) -> SearchGrid {
    match f {
        FilterId::Hdr => SearchGrid::hdr(),
        _ => SearchGrid::saturation(),
    }
}

#[derive(Args)]
struct EnhanceArgs {
    image: PathBuf,
    #[arg(long, value_enum)]
    filter: SearchFilter,
    /// Scorer for the filter's aspect.
    #[arg(long)]
    model: PathBuf,
    /// Grid values (default: the filter's preset grid).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DramaticArgs {
    image: PathBuf,
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    overall: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BRIGHTEN)]
    brighten: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Panorama manifest or directory.
    panoramas: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    view_size: Option<usize>,
    #[arg(long)]
    ensemble: Option<PathBuf>,
    #[arg(long, value_enum)]
    dramatic_input: Option<DramaticInputArg>,
    /// Also write filter sweeps of every survivor's crop.
    #[arg(long)]
    sweeps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DramaticInputArg {
    Latest,
    HdrOutput,
}

#[derive(Args)]
struct RankArgs {
    images: Vec<PathBuf>,
    #[arg(long)]
    overall: PathBuf,
    /// JSON scale mapping written by `fit-scale`.
    #[arg(long)]
    scale: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    image: PathBuf,
    #[arg(long, value_enum)]
    filter: SearchFilter,
    /// `aspect=path`, repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// Explicit grid values (default: the filter's preset grid).
    #[arg(long, value_delimiter = ',', conflicts_with = "points")]
    values: Vec<f64>,
    /// Evenly spaced points over the whole domain instead of a grid.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct FitScaleArgs {
    /// `image_id,rater_id,score` ratings.
    #[arg(long)]
    ratings: PathBuf,
    /// `image_id,overall` predicted scores.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    manifest: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Side of corpus images, or height of panoramas.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Corpus,
    Panoramas,
}

fn load_scorer(aspect: Aspect, path: &Path) -> Result<AspectScorer> {
    AspectScorer::load(aspect, path)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files of a directory in name order, or the entries of a manifest.
fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.exists() {
        return Err(Error::MissingArtifact(input.to_path_buf()));
    }
    if input.is_dir() {
        let mut files: Vec<PathBuf> =
            std::fs::read_dir(input)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image(p)).collect();
        files.sort();
        Ok(files)
    } else {
        read_manifest(input)
    }
}

fn write_list(path: &Path, files: &[PathBuf]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in files {
        writeln!(f, "{}", p.display())?;
    }
    f.flush()?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let files = list_inputs(&a.input)?;
    let mut kept = Vec::new();
    for f in &files {
        match RasterImage::open(f) {
            Ok(img) if img.mean_saturation() >= a.min_saturation => kept.push(std::fs::canonicalize(f)?),
            Ok(_) => {}
            Err(e) => log::warn!("skipping {}: {e}", f.display()),
        }
    }
    write_list(&a.out, &kept)?;
    println!("kept {} of {} images", kept.len(), files.len());
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let corpus = Corpus::load_manifest(&a.corpus, a.size * DEFAULT_SOURCE_FACTOR)?;
    let examples = match a.aspect {
        AspectArg::Saturation => generate_aspect_dataset(&corpus, &PerturbationSpec::saturation(), a.seed, a.size)?,
        AspectArg::Hdr => generate_aspect_dataset(&corpus, &PerturbationSpec::hdr(), a.seed, a.size)?,
        AspectArg::Composition => {
            generate_crop_dataset(&corpus, a.seed, &CropDatasetConfig { training_size: a.size, ..Default::default() })?
        }
        AspectArg::Overall => ranked_dataset(&corpus, a.per_image, a.seed, a.size)?,
    };
    save_dataset(&examples, &a.out)?;
    println!("{} examples from {} images", examples.len(), corpus.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        seed: a.seed,
        extractor: match a.aspect {
            AspectArg::Composition => Extractor::Luminance,
            _ => Extractor::Color,
        },
        ..defaults
    };
    let outcome = train_with_history(&data, &cfg)?;
    let aspect: Aspect = a.aspect.into();
    let meta = json!({
        "aspect": aspect.name(),
        "config": cfg,
        "examples": data.len(),
        "dataset_hash": outcome.dataset_hash,
        "final_loss": outcome.epoch_losses.last(),
    });
    if let Some(dir) = a.out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_with_metadata(&outcome.model, &a.out, meta)?;
    println!("final loss {:.6}", outcome.epoch_losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn train_mask(a: TrainMaskArgs) -> Result<()> {
    let corpus = Corpus::load_manifest(&a.corpus, DEFAULT_TRAINING_SIZE)?;
    if corpus.len() <= a.validation {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} images; need more than the {} held out",
            corpus.len(),
            a.validation
        )));
    }
    let (train_c, val_c) = corpus.split_at(corpus.len() - a.validation);
    let reals: Vec<RasterImage> = train_c.entries().iter().map(|e| e.image.clone()).collect();
    let val: Vec<RasterImage> = val_c.entries().iter().map(|e| e.image.clone()).collect();
    let overall = load_scorer(Aspect::Overall, &a.overall)?;
    let cfg = EnsembleConfig {
        n_models: a.models,
        steps: a.steps,
        snapshot_interval: a.snapshot_interval,
        keep_top: a.keep_top,
        seed: a.seed,
        ..Default::default()
    };
    let trained = train_ensemble(&reals, &val, &overall, &cfg)?;
    let manifest = trained.ensemble.save(&a.out)?;
    if trained.degenerate {
        log::warn!("all snapshots were flat");
    }
    println!("kept {} of {} snapshots -> {}", trained.ensemble.len(), trained.snapshot_count, manifest.display());
    Ok(())
}

fn crop_cmd(a: CropArgs) -> Result<()> {
    let img = RasterImage::open(&a.image)?;
    let comp = load_scorer(Aspect::Composition, &a.composition)?;
    let overall = load_scorer(Aspect::Overall, &a.overall)?;
    let search = search_crops(&img, a.c, a.k, &CropGrid::default(), &comp, &overall)?;
    if search.short {
        log::warn!("only {} crops survived overlap suppression", search.crops.len());
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
    }
    for (i, c) in search.crops.iter().enumerate() {
        println!("{}", serde_json::to_string(c)?);
        if let Some(dir) = &a.out {
            c.window.extract(&img)?.save_png(dir.join(format!("crop{i}.png")))?;
        }
    }
    Ok(())
}

fn grid_from(filter: FilterId, values: Vec<f64>) -> Result<SearchGrid> {
    if values.is_empty() {
        Ok(default_grid(filter))
    } else {
        SearchGrid::new(filter, values)
    }
}

fn enhance_cmd(a: EnhanceArgs) -> Result<()> {
    let filter: FilterId = a.filter.into();
    let grid = grid_from(filter, a.values)?;
    let img = RasterImage::open(&a.image)?;
    let aspect = vphoto::enhance::paired_aspect(filter).expect("search filters have an aspect");
    let scorer = load_scorer(aspect, &a.model)?;
    let r = optimize_filter_1d(&img, &grid, &scorer)?;
    if let Some(out) = &a.out {
        r.image.save_png(out)?;
    }
    println!("{}", json!({ "filter": filter, "param": r.param, "score": r.score, "trace": r.trace }));
    Ok(())
}

fn dramatic_cmd(a: DramaticArgs) -> Result<()> {
    let img = RasterImage::open(&a.image)?;
    let ensemble = MaskEnsemble::load(&a.ensemble)?;
    let overall = load_scorer(Aspect::Overall, &a.overall)?;
    let d = best_dramatic(&img, &ensemble, &overall, a.brighten)?;
    d.image.save_png(&a.out)?;
    println!("{}", json!({ "member": d.member_id, "score": d.score, "scores": d.scores }));
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.view_size {
        cfg.view_size = v;
    }
    if let Some(e) = a.ensemble {
        cfg.models.ensemble = e;
    }
    if let Some(d) = a.dramatic_input {
        cfg.dramatic_input = match d {
            DramaticInputArg::Latest => DramaticInput::Latest,
            DramaticInputArg::HdrOutput => DramaticInput::HdrOutput,
        };
    }
    cfg.validate()?;
    let models = PipelineModels::load(&cfg.models)?;
    let files = list_inputs(&a.panoramas)?;
    let (panoramas, skipped) = load_panoramas(&files);
    if panoramas.is_empty() {
        return Err(Error::InvalidInput("no readable panoramas".into()));
    }
    let mut out = run_pipeline(&panoramas, &models, &cfg)?;
    out.summary.skipped = skipped;
    write_run(&out, &a.out)?;
    if a.sweeps {
        write_sweeps(&out, &models, 11, a.out.join("sweeps"))?;
    }
    println!(
        "{} panoramas, {} candidates, {} survivors -> {}",
        out.summary.panoramas,
        out.summary.candidates,
        out.summary.survivors,
        a.out.display()
    );
    Ok(())
}

fn load_scale(path: &Option<PathBuf>) -> Result<ScaleMapping> {
    match path {
        None => Ok(ScaleMapping::default()),
        Some(p) if !p.exists() => Err(Error::MissingArtifact(p.clone())),
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
    }
}

fn rank_cmd(a: RankArgs) -> Result<()> {
    if a.images.is_empty() {
        return Err(Error::InvalidArgument("no images to rank".into()));
    }
    let overall = load_scorer(Aspect::Overall, &a.overall)?;
    let scale = load_scale(&a.scale)?;
    let mut scored =
        a.images.iter().map(|p| Ok((p, overall.score(&RasterImage::open(p)?)?))).collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    for (p, s) in scored {
        println!("{}", json!({ "image": p, "overall": s, "level": scale.predicted_level(s) }));
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let filter: FilterId = a.filter.into();
    let img = RasterImage::open(&a.image)?;
    let mut scorers = Vec::new();
    for spec in &a.models {
        let (aspect, path) =
            spec.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("expected aspect=path, got {spec}")))?;
        scorers.push(load_scorer(aspect.parse()?, Path::new(path))?);
    }
    let refs: Vec<&dyn Scorer> = scorers.iter().map(|s| s as &dyn Scorer).collect();
    let sweep = match a.points {
        Some(n) => sweep_diagnostic(&img, filter, n, &refs)?,
        None => sweep_values(&img, filter, grid_from(filter, a.values)?.values(), &refs)?,
    };
    sweep.save_csv(&a.out)?;
    for (i, asp) in sweep.aspects.iter().enumerate() {
        println!("{asp}: argmax {} peak-to-peak {:.6}", sweep.argmax(i), sweep.peak_to_peak(i));
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct ScoreRow {
    image_id: String,
    overall: f64,
}

fn fit_scale_cmd(a: FitScaleArgs) -> Result<()> {
    for p in [&a.ratings, &a.scores] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let cons = consensus(&read_ratings_csv(&a.ratings)?)?;
    let mut predicted = BTreeMap::new();
    for row in csv::Reader::from_path(&a.scores)?.deserialize::<ScoreRow>() {
        let row = row?;
        predicted.insert(row.image_id, row.overall);
    }
    let pairs: Vec<(f64, f64)> =
        cons.per_image.iter().filter_map(|(id, c)| predicted.get(id).map(|&s| (s, c.mean))).collect();
    let fit = fit_scale_mapping(&pairs)?;
    if fit.degenerate {
        log::warn!("all predicted scores are equal; slope forced to zero");
    }
    std::fs::write(&a.out, serde_json::to_string_pretty(&fit.mapping)? + "\n")?;
    println!(
        "a={} b={} from {} images (rater dispersion {:.4})",
        fit.mapping.a,
        fit.mapping.b,
        pairs.len(),
        cons.dispersion
    );
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let ranked = read_run_manifest(&a.manifest)?;
    if ranked.is_empty() {
        return Err(Error::InvalidInput("manifest has no candidates".into()));
    }
    let path = emit_gallery(&ranked, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut files = Vec::with_capacity(a.count);
    match a.kind {
        SynthKind::Corpus => {
            let corpus = proxy_corpus(a.count, a.size, a.seed)?;
            for e in corpus.entries() {
                let p = a.out.join(format!("{}.png", e.id));
                e.image.save_png(&p)?;
                files.push(p);
            }
        }
        SynthKind::Panoramas => {
            for i in 0..a.count {
                let pano = synthetic_panorama(a.size, a.seed + i as u64)?;
                let p = a.out.join(format!("{}.png", pano.id()));
                pano.image().save_png(&p)?;
                files.push(p);
            }
        }
    }
    let names: Vec<PathBuf> = files.iter().map(|p| PathBuf::from(p.file_name().expect("file name"))).collect();
    write_list(&a.out.join("manifest.txt"), &names)?;
    println!("wrote {} images to {}", files.len(), a.out.display());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest(a) => ingest(a),
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::TrainMask(a) => train_mask(a),
        Cmd::Crop(a) => crop_cmd(a),
        Cmd::Enhance(a) => enhance_cmd(a),
        Cmd::Dramatic(a) => dramatic_cmd(a),
        Cmd::Run(a) => run_cmd(a),
        Cmd::Rank(a) => rank_cmd(a),
        Cmd::Sweep(a) => sweep_cmd(a),
        Cmd::FitScale(a) => fit_scale_cmd(a),
        Cmd::Report(a) => report_cmd(a),
        Cmd::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("vphoto: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vphoto: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 1 })
        }
    }
}
