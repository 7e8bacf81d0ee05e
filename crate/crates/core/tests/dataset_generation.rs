use vphoto::dataset::*;
use vphoto::filters::{FilterId, FilterParams};
use vphoto::image::{mean_abs_diff, resize_for_model};
use vphoto::synth::proxy_corpus;
use vphoto::RasterImage;

fn small_corpus(n: usize) -> Corpus {
    proxy_corpus(n, 64, 9).unwrap()
}

#[test]
fn saturation_set_has_seven_examples_per_image() {
    let corpus = small_corpus(10);
    let data = generate_aspect_dataset(&corpus, &PerturbationSpec::saturation(), 3, 32).unwrap();
    assert_eq!(data.len(), 70);
    assert_eq!(data.iter().filter(|e| e.provenance.operation.is_none()).count(), 10);
    for e in &data {
        assert_eq!(e.image.dims(), (32, 32));
        if let Some(op) = &e.provenance.operation {
            let p: FilterParams = op.parse().unwrap();
            assert_eq!(p.filter(), FilterId::Saturation);
            assert!((0.0..=0.8).contains(&p.params()[0]));
        } else {
            assert_eq!(e.target.value(), 1.0);
        }
    }
}

#[test]
fn hdr_set_has_six_negatives_and_three_positives() {
    let corpus = small_corpus(10);
    let data = generate_aspect_dataset(&corpus, &PerturbationSpec::hdr(), 3, 32).unwrap();
    assert_eq!(data.len(), 100);
    let negated =
        data.iter().filter(|e| e.provenance.operation.as_deref().is_some_and(|o| o.starts_with("negate("))).count();
    let plain =
        data.iter().filter(|e| e.provenance.operation.as_deref().is_some_and(|o| o.starts_with("filter="))).count();
    assert_eq!((negated, plain), (60, 30));
}

#[test]
fn targets_follow_the_capped_distance() {
    let corpus = small_corpus(3);
    let spec = PerturbationSpec::saturation();
    let data = generate_aspect_dataset(&corpus, &spec, 5, 32).unwrap();
    for chunk in data.chunks(spec.examples_per_image()) {
        let base = &chunk[0].image;
        for e in &chunk[1..] {
            let delta = mean_abs_diff(base, &e.image).unwrap();
            assert!((e.target.value() - (1.0 - delta / 0.06).max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_range_gives_perfect_targets() {
    let spec = PerturbationSpec {
        filter: FilterId::Saturation,
        batches: vec![SamplingBatch { ranges: vec![(0.5, 0.5)], count: 4, negate: false }],
        delta_cap: 0.06,
    };
    let data = generate_aspect_dataset(&small_corpus(2), &spec, 0, 32).unwrap();
    assert!(data.iter().all(|e| e.target.value() == 1.0));
}

#[test]
fn invalid_specs_rejected() {
    let mut spec = PerturbationSpec::saturation();
    spec.batches[0].ranges = vec![(0.2, 1.4)];
    assert!(generate_aspect_dataset(&small_corpus(1), &spec, 0, 32).is_err());
    spec.batches[0] = SamplingBatch { ranges: vec![(0.1, 0.2)], count: 0, negate: false };
    assert!(spec.validate().is_err());
    assert!(PerturbationSpec { delta_cap: 0.0, ..PerturbationSpec::hdr() }.validate().is_err());
}

#[test]
fn generation_is_seeded() {
    let corpus = small_corpus(4);
    let a = generate_aspect_dataset(&corpus, &PerturbationSpec::hdr(), 11, 32).unwrap();
    let b = generate_aspect_dataset(&corpus, &PerturbationSpec::hdr(), 11, 32).unwrap();
    let c = generate_aspect_dataset(&corpus, &PerturbationSpec::hdr(), 12, 32).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.image == y.image && x.target == y.target && x.provenance == y.provenance));
    assert!(a.iter().zip(&c).any(|(x, y)| x.target != y.target));
}

fn parse_crop(op: &str) -> (usize, usize, usize, usize) {
    let v: Vec<usize> = op.trim_start_matches("crop=").split(',').map(|s| s.parse().unwrap()).collect();
    (v[0], v[1], v[2], v[3])
}

#[test]
fn crop_targets_are_area_ratios() {
    let corpus = small_corpus(8);
    let data =
        generate_crop_dataset(&corpus, 2, &CropDatasetConfig { training_size: 32, ..Default::default() }).unwrap();
    assert_eq!(data.len(), 8 * 7);
    let (w, h) = (64usize, 64usize);
    // width >= round(0.9 w) and height >= round(width / 2) bound the near batch
    let near_w = (0.9 * w as f64).round() as usize;
    let min_near = (near_w * (near_w as f64 / 2.0).round() as usize) as f64 / (w * h) as f64;
    for e in &data {
        match e.provenance.batch {
            None => assert_eq!(e.target.value(), 1.0),
            Some(b) => {
                let (x, y, cw, ch) = parse_crop(e.provenance.operation.as_deref().unwrap());
                assert!(x + cw <= w && y + ch <= h);
                assert_eq!(e.target.value(), (cw * ch) as f64 / (w * h) as f64);
                let aspect = cw as f64 / ch as f64;
                assert!(aspect > 0.45 && aspect < 2.1);
                if b == 0 {
                    assert!(e.target.value() >= min_near - 1e-12, "{}", e.target.value());
                    assert!(e.target.value() >= 0.405 - 2.0 / w as f64);
                } else {
                    assert!(cw as f64 <= 0.9 * w as f64 + 0.5);
                }
            }
        }
    }
}

#[test]
fn crop_target_is_exact_pixel_fraction() {
    let img = RasterImage::filled(40, 40, [0.5; 3]).unwrap();
    let corpus = Corpus::new("c", vec![CorpusEntry { id: "a".into(), image: img }]).unwrap();
    let data =
        generate_crop_dataset(&corpus, 0, &CropDatasetConfig { training_size: 16, ..Default::default() }).unwrap();
    for e in data.iter().skip(1) {
        let (_, _, cw, ch) = parse_crop(e.provenance.operation.as_deref().unwrap());
        assert_eq!(e.target.value(), (cw * ch) as f64 / 1600.0);
    }
}

#[test]
fn saturation_gate() {
    let gray = RasterImage::filled(8, 8, [0.5; 3]).unwrap();
    let red = RasterImage::filled(8, 8, [1.0, 0.0, 0.0]).unwrap();
    let half = RasterImage::from_fn(8, 8, |x, _| if x < 4 { [1.0, 0.0, 0.0] } else { [0.4; 3] }).unwrap();
    assert!((half.mean_saturation() - 0.5).abs() < 1e-15);
    let corpus = Corpus::new(
        "g",
        vec![
            CorpusEntry { id: "gray".into(), image: gray },
            CorpusEntry { id: "red".into(), image: red },
            CorpusEntry { id: "half".into(), image: half },
        ],
    )
    .unwrap();
    let kept = filter_corpus_by_saturation(&corpus, 0.55);
    let ids: Vec<&str> = kept.entries().iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, vec!["red"]);
}

#[test]
fn corpus_rejects_mixed_sizes() {
    let a = CorpusEntry { id: "a".into(), image: RasterImage::filled(8, 8, [0.5; 3]).unwrap() };
    let b = CorpusEntry { id: "b".into(), image: RasterImage::filled(9, 9, [0.5; 3]).unwrap() };
    let c = CorpusEntry { id: "c".into(), image: RasterImage::filled(9, 4, [0.5; 3]).unwrap() };
    assert!(Corpus::new("x", vec![a.clone(), b]).is_err());
    assert!(Corpus::new("x", vec![c]).is_err());
    assert_eq!(Corpus::new("x", vec![a]).unwrap().source_size(), Some(8));
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_aspect_dataset(&small_corpus(2), &PerturbationSpec::saturation(), 1, 16).unwrap();
    save_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.target, b.target);
        assert_eq!(a.provenance, b.provenance);
        assert!(mean_abs_diff(&a.image, &b.image).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
    assert!(matches!(load_dataset(dir.path().join("missing")), Err(vphoto::Error::MissingArtifact(_))));
}

#[test]
fn manifest_corpus_is_square_resampled() {
    let dir = tempfile::tempdir().unwrap();
    let wide = RasterImage::from_fn(40, 20, |x, _| [x as f64 / 39.0, 0.5, 0.5]).unwrap();
    wide.save_png(dir.path().join("w.png")).unwrap();
    std::fs::write(dir.path().join("m.txt"), "w.png\n").unwrap();
    let corpus = Corpus::load_manifest(dir.path().join("m.txt"), 10).unwrap();
    assert_eq!(corpus.entries()[0].image.dims(), (10, 10));
    let centered = resize_for_model(&wide.crop(10, 0, 20, 20).unwrap(), 10, 10).unwrap();
    assert!(mean_abs_diff(&corpus.entries()[0].image, &centered).unwrap() < 0.01);
}
