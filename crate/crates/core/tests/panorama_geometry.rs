use proptest::prelude::*;
use vphoto::panorama::*;
use vphoto::RasterImage;

fn constant_pano(rgb: [f64; 3]) -> Panorama {
    Panorama::new("c", RasterImage::filled(64, 32, rgb).unwrap()).unwrap()
}

#[test]
fn rejects_non_2to1() {
    assert!(Panorama::new("x", RasterImage::filled(30, 20, [0.5; 3]).unwrap()).is_err());
}

#[test]
fn left_edge_ray_is_45_degrees_left() {
    let spec = ViewSpec::new(0.0, 0.0, 90.0, 64).unwrap();
    let r = pixel_to_ray(&spec, 0.0, 0.5);
    // tan(45 deg) on the image plane at unit distance
    let want = [-(0.5f64.sqrt()), 0.0, 0.5f64.sqrt()];
    for c in 0..3 {
        assert!((r[c] - want[c]).abs() < 1e-12);
    }
    let (u, _) = ray_to_equirect(r);
    assert!(((u - 0.5) * 360.0 + 45.0).abs() < 1e-9);
}

#[test]
fn constant_panorama_gives_constant_views() {
    let views = standard_views(&constant_pano([0.2, 0.4, 0.6]), 32).unwrap();
    assert_eq!(views.len(), 6);
    for v in &views {
        assert_eq!(v.dims(), (32, 32));
        assert!(v.pixels().iter().all(|p| (p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.6).abs() < 1e-12));
    }
}

#[test]
fn bright_meridian_lands_in_view_center() {
    // equirect column holding longitude 0 sits at u = 0.5; make the two
    // columns straddling it bright
    let (w, h) = (256, 128);
    let img =
        RasterImage::from_fn(w, h, |x, _| if x == w / 2 - 1 || x == w / 2 { [1.0; 3] } else { [0.0; 3] }).unwrap();
    let pano = Panorama::new("m", img).unwrap();
    let view = project(&pano, &ViewSpec::new(0.0, 0.0, 90.0, 65).unwrap()).unwrap();
    let row = 32;
    let brightest = (0..65).max_by(|&a, &b| view.get(a, row)[0].total_cmp(&view.get(b, row)[0])).unwrap();
    assert_eq!(brightest, 32);
    assert!(view.get(32, row)[0] > 0.9);
    assert!(view.get(10, row)[0] < 1e-12);
}

#[test]
fn round_trip_at_256() {
    let spec = ViewSpec::new(60.0, 10.0, 90.0, 256).unwrap();
    let mut worst_px = 0.0f64;
    let mut worst_ray = 0.0f64;
    for y in 0..256 {
        for x in 0..256 {
            let (u, v) = ((x as f64 + 0.5) / 256.0, (y as f64 + 0.5) / 256.0);
            let ray = pixel_to_ray(&spec, u, v);
            let (eu, ev) = ray_to_equirect(ray);
            let back = equirect_to_ray(eu, ev);
            worst_ray = worst_ray.max((0..3).map(|c| (back[c] - ray[c]).abs()).fold(0.0, f64::max));
            let (pu, pv) = spec.ray_to_pixel(back).unwrap();
            worst_px = worst_px.max(((pu - u) * 256.0).abs()).max(((pv - v) * 256.0).abs());
        }
    }
    assert!(worst_ray < 1e-6, "{worst_ray}");
    assert!(worst_px < 1e-4, "{worst_px}");
}

#[test]
fn feature_at_yaw_30_is_in_views_0_and_1() {
    let specs = standard_view_specs(64).unwrap();
    let dir = equirect_to_ray(0.5 + 30.0 / 360.0, 0.5 - 10.0 / 180.0);
    let hits: Vec<usize> = (0..6).filter(|&k| specs[k].contains(dir)).collect();
    assert_eq!(hits, vec![0, 1]);
}

#[test]
fn standard_views_cover_all_yaws_near_horizon() {
    let specs = standard_view_specs(64).unwrap();
    for yi in 0..3600 {
        for pi in 0..=20 {
            let dir = equirect_to_ray(yi as f64 / 3600.0, (90.0 - pi as f64) / 180.0);
            assert!(specs.iter().any(|s| s.contains(dir)), "yaw {} pitch {pi}", yi as f64 / 10.0);
        }
    }
}

#[test]
fn manifest_parsing() {
    let paths = parse_manifest("# header\na.png\n\n  b.png # note\n");
    assert_eq!(paths, vec![std::path::PathBuf::from("a.png"), "b.png".into()]);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.txt"), "x.png\n").unwrap();
    assert_eq!(read_manifest(dir.path().join("m.txt")).unwrap(), vec![dir.path().join("x.png")]);
    assert!(matches!(read_manifest(dir.path().join("nope.txt")), Err(vphoto::Error::MissingArtifact(_))));
}

proptest! {
    #[test]
    fn equirect_round_trip(u in 0.0f64..1.0, v in 0.01f64..0.99) {
        let (u2, v2) = ray_to_equirect(equirect_to_ray(u, v));
        let du = (u2 - u).abs().min(1.0 - (u2 - u).abs());
        prop_assert!(du < 1e-9 && (v2 - v).abs() < 1e-9);
    }

    #[test]
    fn view_pixel_round_trip(yaw in 0.0f64..360.0, pitch in -60.0f64..60.0, fov in 20.0f64..120.0,
                             u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let spec = ViewSpec::new(yaw, pitch, fov, 128).unwrap();
        let (pu, pv) = spec.ray_to_pixel(pixel_to_ray(&spec, u, v)).unwrap();
        prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
    }
}
