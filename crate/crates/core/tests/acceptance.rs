//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vphoto::composition::CropWindow;
use vphoto::dataset::*;
use vphoto::dramatic::*;
use vphoto::enhance::*;
use vphoto::filters::*;
use vphoto::image::{perturbation_score, resize_for_model};
use vphoto::learner::*;
use vphoto::panorama::*;
use vphoto::scoring::*;
use vphoto::synth::*;
use vphoto::RasterImage;

const SIZE: usize = 64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    RasterImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

/// Held-out split plus the four trained desk scorers, shared by several
/// criteria.
struct Desk {
    test: Corpus,
    saturation: AspectScorer,
    hdr: AspectScorer,
    composition: AspectScorer,
    overall: AspectScorer,
    train_time: [Duration; 4],
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let corpus = proxy_corpus(250, 2 * SIZE, 42).unwrap();
        let (train_c, test) = corpus.split_at(200);
        let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };
        let timed = |f: &dyn Fn() -> MlpModel| {
            let t = Instant::now();
            let m = f();
            (m, t.elapsed())
        };
        let (sat, t0) = timed(&|| {
            train(&generate_aspect_dataset(&train_c, &PerturbationSpec::saturation(), 7, SIZE).unwrap(), &cfg).unwrap()
        });
        let (hdr, t1) = timed(&|| {
            train(&generate_aspect_dataset(&train_c, &PerturbationSpec::hdr(), 7, SIZE).unwrap(), &cfg).unwrap()
        });
        let (crop, t2) = timed(&|| {
            let data = generate_crop_dataset(&train_c, 7, &CropDatasetConfig::default()).unwrap();
            train(&data, &TrainConfig { extractor: Extractor::Luminance, ..cfg.clone() }).unwrap()
        });
        let (overall, t3) = timed(&|| train(&ranked_dataset(&train_c, 6, 7, SIZE).unwrap(), &cfg).unwrap());
        Desk {
            test,
            saturation: AspectScorer::new(Aspect::Saturation, sat),
            hdr: AspectScorer::new(Aspect::Hdr, hdr),
            composition: AspectScorer::new(Aspect::Composition, crop),
            overall: AspectScorer::new(Aspect::Overall, overall),
            train_time: [t0, t1, t2, t3],
        }
    })
}

fn held_out(i: usize) -> RasterImage {
    resize_for_model(&desk().test.entries()[i].image, SIZE, SIZE).unwrap()
}

fn negation_identity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let filters = FilterId::ALL;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let img = random_image(&mut rng, 24, 16);
        let neutral = FilterParams::neutral(filters[i % filters.len()]);
        let out = negate_effect(&neutral, &img).unwrap();
        for (p, q) in img.pixels().iter().zip(out.pixels()) {
            for c in 0..3 {
                worst = worst.max((p[c] - q[c]).abs());
            }
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-6 && el < Duration::from_secs(5),
        format!("max deviation {worst:.2e} (<= 1e-6), {el:.2?} (< 5 s)"),
    )
}

fn perturbation_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let delta: f64 = rng.random();
        let cap: f64 = rng.random_range(1e-3..1.0);
        if perturbation_score(delta, cap).unwrap().value() != (1.0 - delta / cap).max(0.0) {
            mismatches += 1;
        }
    }
    let anchors = [0.01, 0.06, 0.5, 1.0].iter().all(|&cap| {
        perturbation_score(cap, cap).unwrap().value() == 0.0 && perturbation_score(0.0, cap).unwrap().value() == 1.0
    });
    outcome(mismatches == 0 && anchors, format!("{mismatches}/1000 mismatches, anchors exact: {anchors}"))
}

fn restoration() -> Outcome {
    let d = desk();
    let t = Instant::now();
    let grid = SearchGrid::saturation();
    let step = grid.step().unwrap();
    let mut hits = 0;
    for i in 0..50 {
        // desaturate at p, then p' with (2p)(2p') = 1 restores the original
        let p = 0.3 + 0.15 * (i as f64 / 49.0);
        let washed = saturation(&held_out(i), p).unwrap();
        let restore = 1.0 / (4.0 * p);
        let r = optimize_filter_1d(&washed, &grid, &d.saturation).unwrap();
        if (r.param - restore).abs() <= step + 1e-9 {
            hits += 1;
        }
    }
    let el = t.elapsed() + d.train_time[0];
    let rate = hits as f64 / 50.0;
    outcome(
        rate >= 0.7 && el < Duration::from_secs(600),
        format!("{hits}/50 = {:.0}% within one grid step (>= 70%), {el:.2?} incl. training (< 10 min)", 100.0 * rate),
    )
}

fn hdr_ordering() -> Outcome {
    let d = desk();
    let t = Instant::now();
    let mut above = 0;
    for i in 0..50 {
        let img = held_out(i);
        let neg = negate_effect(&FilterParams::scalar(FilterId::Hdr, 0.8).unwrap(), &img).unwrap();
        if d.hdr.score(&img).unwrap() > d.hdr.score(&neg).unwrap() {
            above += 1;
        }
    }
    let el = t.elapsed() + d.train_time[1];
    let rate = above as f64 / 50.0;
    outcome(
        rate >= 0.75 && el < Duration::from_secs(600),
        format!(
            "{above}/50 = {:.0}% original above negated (>= 75%), {el:.2?} incl. training (< 10 min)",
            100.0 * rate
        ),
    )
}

fn crop_ordering() -> Outcome {
    let d = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut above = 0;
    for i in 0..50 {
        let src = &d.test.entries()[i].image;
        let (w, h) = src.dims();
        let area: f64 = rng.random_range(0.5..0.7);
        let cw = ((area * (w * h) as f64).sqrt()).round() as usize;
        let ch = cw.min(h);
        let win = CropWindow::new(rng.random_range(0..=w - cw), rng.random_range(0..=h - ch), cw, ch, w, h).unwrap();
        let crop = resize_for_model(&win.extract(src).unwrap(), SIZE, SIZE).unwrap();
        if d.composition.score(&held_out(i)).unwrap() > d.composition.score(&crop).unwrap() {
            above += 1;
        }
    }
    let rate = above as f64 / 50.0;
    outcome(rate >= 0.75, format!("{above}/50 = {:.0}% full frame above 50-70% crop (>= 75%)", 100.0 * rate))
}

fn semi_orthogonality(csv_dir: &Path) -> Outcome {
    let d = desk();
    std::fs::create_dir_all(csv_dir).unwrap();
    let (mut sat, mut crop) = (0.0, 0.0);
    for i in 0..20 {
        let sweep = sweep_diagnostic(&held_out(i), FilterId::Saturation, 21, &[&d.saturation, &d.composition]).unwrap();
        sat += sweep.peak_to_peak(0) / 20.0;
        crop += sweep.peak_to_peak(1) / 20.0;
        sweep.save_csv(csv_dir.join(format!("saturation-sweep-{i:02}.csv"))).unwrap();
    }
    outcome(
        sat >= 2.0 * crop,
        format!(
            "mean peak-to-peak saturation {sat:.4} vs composition {crop:.4} (ratio {:.1}, >= 2); CSVs in {}",
            sat / crop,
            csv_dir.display()
        ),
    )
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = MlpModel::seeded(FEATURE_LEN, &[64], SIZE, 3).unwrap();
    let mut mlp = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..FEATURE_LEN).map(|_| rng.random()).collect();
        mlp = mlp.max(gradient_check(&model, &x, rng.random(), 1e-5).unwrap());
    }
    let reals: Vec<RasterImage> = (0..10).map(|_| random_image(&mut rng, GAN_INPUT_SIZE, GAN_INPUT_SIZE)).collect();
    let negs: Vec<RasterImage> = (0..10).map(|_| random_image(&mut rng, GAN_INPUT_SIZE, GAN_INPUT_SIZE)).collect();
    let gan = gan_gradient_check(
        &MaskGenerator::new(8).unwrap(),
        &Discriminator::new(9).unwrap(),
        &reals,
        &negs,
        &GanConfig::default(),
        100,
        1e-5,
        10,
    )
    .unwrap();
    let el = t.elapsed();
    let worst = mlp.max(gan.generator).max(gan.discriminator);
    outcome(
        worst < 1e-3 && el < Duration::from_secs(60),
        format!(
            "max relative error mlp {mlp:.1e}, generator {:.1e}, discriminator {:.1e} (< 1e-3), {el:.2?} (< 1 min)",
            gan.generator, gan.discriminator
        ),
    )
}

/// Brute-force joint bilateral upsampling: every pixel visits every cell and
/// keeps the 3x3 block around its nearest cell.
fn jbu_reference(mask: &DramaticMask, guide: &RasterImage) -> Vec<f64> {
    let luma = |p: [f64; 3]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    let (w, h) = guide.dims();
    let (bw, bh) = (w / 8, h / 8);
    let mut low = [0.0; 64];
    for y in 0..h {
        for x in 0..w {
            low[(y / bh) * 8 + x / bw] += luma(guide.get(x, y)) / (bw * bh) as f64;
        }
    }
    let (ss, sr) = (JBU_SIGMA_SPATIAL, JBU_SIGMA_RANGE);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let px = (x as f64 + 0.5) * 8.0 / w as f64 - 0.5;
            let py = (y as f64 + 0.5) * 8.0 / h as f64 - 0.5;
            let (nx, ny) = (px.round().clamp(0.0, 7.0) as i64, py.round().clamp(0.0, 7.0) as i64);
            let (mut num, mut den) = (0.0, 0.0);
            for cy in 0..8i64 {
                for cx in 0..8i64 {
                    if (cx - nx).abs() <= 1 && (cy - ny).abs() <= 1 {
                        let d2 = (px - cx as f64).powi(2) + (py - cy as f64).powi(2);
                        let dl = luma(guide.get(x, y)) - low[(cy * 8 + cx) as usize];
                        let wt = (-d2 / (2.0 * ss * ss)).exp() * (-dl * dl / (2.0 * sr * sr)).exp();
                        num += wt * mask.get(cx as usize, cy as usize);
                        den += wt;
                    }
                }
            }
            out.push(num / den);
        }
    }
    out
}

fn jbu_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mask = DramaticMask::new((0..MASK_CELLS).map(|_| rng.random()).collect()).unwrap();
    let guide = proxy_photo(64, 3).unwrap();
    let fast = jbu_upsample(&mask, &guide, JBU_SIGMA_SPATIAL, JBU_SIGMA_RANGE).unwrap();
    let slow = jbu_reference(&mask, &guide);
    let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let flat = RasterImage::filled(64, 64, [0.4, 0.5, 0.6]).unwrap();
    let j = jbu_upsample(&mask, &flat, JBU_SIGMA_SPATIAL, JBU_SIGMA_RANGE).unwrap();
    let s = spatial_upsample(&mask, 64, 64, JBU_SIGMA_SPATIAL).unwrap();
    let flat_err = j.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let in_range = fast.iter().chain(&j).all(|v| (0.0..=1.0).contains(v));
    outcome(
        err < 1e-6 && flat_err < 1e-6 && in_range,
        format!("vs brute force {err:.1e} (< 1e-6), constant guide vs spatial {flat_err:.1e} (< 1e-6), in [0,1]: {in_range}"),
    )
}

fn projection_geometry() -> Outcome {
    let spec = ViewSpec::new(60.0, 10.0, 90.0, 256).unwrap();
    let mut worst = 0.0f64;
    for y in 0..256 {
        for x in 0..256 {
            let (u, v) = ((x as f64 + 0.5) / 256.0, (y as f64 + 0.5) / 256.0);
            let (eu, ev) = ray_to_equirect(pixel_to_ray(&spec, u, v));
            let (pu, pv) = spec.ray_to_pixel(equirect_to_ray(eu, ev)).unwrap();
            worst = worst.max(((pu - u) * 256.0).abs()).max(((pv - v) * 256.0).abs());
        }
    }
    let specs = standard_view_specs(256).unwrap();
    let layout = specs.iter().enumerate().all(|(k, s)| {
        let (u, v) = ray_to_equirect(pixel_to_ray(s, 0.5, 0.5));
        let dyaw = ((u - 0.5) * 360.0 - 60.0 * k as f64).rem_euclid(360.0);
        dyaw.min(360.0 - dyaw) < 1e-9 && ((0.5 - v) * 180.0 - 10.0).abs() < 1e-9
    });
    let mut uncovered = 0;
    for yi in 0..3600 {
        for pi in 0..=40 {
            let dir = equirect_to_ray(yi as f64 / 3600.0, 0.5 - (pi as f64 * 0.5) / 180.0);
            if !specs.iter().any(|s| s.contains(dir)) {
                uncovered += 1;
            }
        }
    }
    outcome(
        worst < 1e-4 && uncovered == 0 && layout,
        format!("round trip {worst:.1e} px (< 1e-4); {uncovered} of 147600 rays uncovered at pitch 0-20 deg; view layout ok: {layout}"),
    )
}

struct GanRun {
    trained: TrainedEnsemble,
    elapsed: Duration,
}

fn gan_run() -> &'static GanRun {
    static RUN: OnceLock<GanRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let d = desk();
        let reals: Vec<RasterImage> = (0..40).map(|i| held_out(i % 50)).collect();
        let validation: Vec<RasterImage> = (40..50).map(held_out).collect();
        let cfg = EnsembleConfig {
            n_models: 1,
            steps: 500,
            snapshot_interval: 100,
            keep_top: 5,
            seed: 3,
            ..Default::default()
        };
        let t = Instant::now();
        let trained = train_ensemble(&reals, &validation, &d.overall, &cfg).unwrap();
        GanRun { trained, elapsed: t.elapsed() }
    })
}

fn gan_smoke() -> Outcome {
    let d = desk();
    let run = gan_run();
    let tr = &run.trained;
    let finite = tr.losses.iter().flatten().all(|l| l.d_loss.is_finite() && l.g_loss.is_finite());
    let steps: usize = tr.losses.iter().map(Vec::len).sum();
    let probes: Vec<RasterImage> = (40..50).map(held_out).collect();
    let masks_ok = tr.ensemble.members.iter().all(|m| {
        probes.iter().all(|p| m.generator.mask_for(p).unwrap().cells().iter().all(|v| (0.0..=1.0).contains(v)))
    });
    let best_var = tr.ensemble.members.iter().map(|m| m.mask_variance).fold(0.0, f64::max);
    let mut confirmed = true;
    for p in &probes {
        let choice = best_dramatic(p, &tr.ensemble, &d.overall, DEFAULT_BRIGHTEN).unwrap();
        let rescored: Vec<f64> = tr
            .ensemble
            .members
            .iter()
            .map(|m| {
                let out = apply_mask(p, &m.generator.mask_for(p).unwrap(), DEFAULT_BRIGHTEN, Upsample::jbu()).unwrap();
                d.overall.score(&out).unwrap()
            })
            .collect();
        let max = rescored.iter().cloned().fold(f64::MIN, f64::max);
        confirmed &= choice.score == max
            && rescored[choice.index] == max
            && rescored.iter().position(|&s| s == max) == Some(choice.index);
    }
    let el = run.elapsed;
    outcome(
        finite && steps == 500 && masks_ok && !tr.degenerate && best_var >= 1e-4 && confirmed && el < Duration::from_secs(600),
        format!(
            "{steps} steps, finite losses: {finite}, masks in [0,1]: {masks_ok}, best snapshot variance {best_var:.2e} (>= 1e-4), \
             choice confirmed on {} images: {confirmed}, {el:.2?} (< 10 min)",
            probes.len()
        ),
    )
}

fn scale_machinery() -> Outcome {
    let pairs: Vec<(f64, f64)> = (0..25).map(|i| i as f64 / 24.0).map(|x| (x, 2.8 * x + 0.9)).collect();
    let m = fit_scale_mapping(&pairs).unwrap().mapping;
    let fit_ok = (m.a - 2.8).abs() < 1e-9 && (m.b - 0.9).abs() < 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        counts[percentile_to_level(rng.random::<f64>()).unwrap() as usize - 1] += 1;
    }
    let shares = counts.map(|c| c as f64 / 10_000.0);
    let want = [0.15, 0.55, 0.15, 0.15];
    let split_ok = shares.iter().zip(&want).all(|(s, w)| (s - w).abs() <= 0.01);
    let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let top30 = rank_to_percentile(&scores).unwrap()[6];
    let rank_ok = (top30 - 0.7).abs() < 1e-12;
    outcome(
        fit_ok && split_ok && rank_ok,
        format!(
            "fit a={:.12} b={:.12}; level shares {:.3}/{:.3}/{:.3}/{:.3}; top-30% percentile {top30}",
            m.a, m.b, shares[0], shares[1], shares[2], shares[3]
        ),
    )
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/panoramas")
}

fn end_to_end(work: &Path) -> Outcome {
    let d = desk();
    let models = work.join("models");
    std::fs::create_dir_all(&models).unwrap();
    for (name, s) in
        [("composition", &d.composition), ("saturation", &d.saturation), ("hdr", &d.hdr), ("overall", &d.overall)]
    {
        s.model().save(models.join(format!("{name}.crtm"))).unwrap();
    }
    gan_run().trained.ensemble.save(models.join("ensemble")).unwrap();
    let config = work.join("run.toml");
    std::fs::write(&config, "seed = 7\n").unwrap();
    let manifest = fixture_dir().join("manifest.txt");
    let n_panos = read_manifest(&manifest).unwrap().len();

    let t = Instant::now();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = work.join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_vphoto"))
            .args(["--threads", threads, "run"])
            .arg(&manifest)
            .arg("--config")
            .arg(&config)
            .arg("-o")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("run {i} exited with {status}"));
        }
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        runs.push((std::fs::read(out.join("manifest.jsonl")).unwrap(), summary));
    }
    let el = t.elapsed();
    let identical = runs[0].0 == runs[1].0 && runs[0].1 == runs[1].1;
    let s = &runs[0].1;
    let candidates = s["candidates"].as_u64().unwrap() as usize;
    let survivors = s["survivors"].as_u64().unwrap() as usize;
    let lines = runs[0].0.iter().filter(|&&b| b == b'\n').count();
    let expected = n_panos * 6 * 3 * 3;
    outcome(
        identical && candidates == expected && survivors <= n_panos * 6 && lines == survivors && el < Duration::from_secs(900),
        format!(
            "manifests byte-identical: {identical}; {candidates} candidates (expected {expected}), {survivors} survivors \
             (<= {}), two runs in {el:.2?} (< 15 min)",
            n_panos * 6
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let sweeps = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-sweeps");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("negation identity", Box::new(negation_identity)),
        ("perturbation score formula", Box::new(perturbation_formula)),
        ("saturation restoration", Box::new(restoration)),
        ("hdr ordering", Box::new(hdr_ordering)),
        ("crop scorer ordering", Box::new(crop_ordering)),
        ("semi-orthogonality", Box::new(move || semi_orthogonality(&sweeps))),
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("jbu correctness", Box::new(jbu_correctness)),
        ("projection geometry", Box::new(projection_geometry)),
        ("gan smoke and mask validity", Box::new(gan_smoke)),
        ("scale machinery", Box::new(scale_machinery)),
        ("end-to-end determinism", Box::new(|| end_to_end(work.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.pass as usize;
        println!("criterion {:2} {name}: {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
