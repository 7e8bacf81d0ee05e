use proptest::prelude::*;
use vphoto::image::*;
use vphoto::RasterImage;

fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    RasterImage::from_fn(w, h, |_, _| {
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        [next(), next(), next()]
    })
    .unwrap()
}

#[test]
fn bilinear_two_pixels_to_four_matches_table() {
    let img = RasterImage::new(2, 1, vec![[0.0; 3], [1.0; 3]]).unwrap();
    let out = resize_bilinear(&img, 4, 1).unwrap();
    // source coordinates (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
    let table = [0.0, 0.25, 0.75, 1.0];
    for (x, want) in table.iter().enumerate() {
        assert!((out.get(x, 0)[0] - want).abs() < 1e-15, "x={x}: {:?}", out.get(x, 0));
    }
}

#[test]
fn bilinear_matches_brute_force_sampler() {
    let img = random_image(7, 5, 3);
    let (ow, oh) = (11, 3);
    let out = resize_bilinear(&img, ow, oh).unwrap();
    let sample = |fx: f64, fy: f64| -> [f64; 3] {
        let fx = fx.clamp(0.0, 6.0);
        let fy = fy.clamp(0.0, 4.0);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(6), (y0 + 1).min(4));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let mut r = [0.0; 3];
        for c in 0..3 {
            let top = img.get(x0, y0)[c] * (1.0 - tx) + img.get(x1, y0)[c] * tx;
            let bot = img.get(x0, y1)[c] * (1.0 - tx) + img.get(x1, y1)[c] * tx;
            r[c] = top * (1.0 - ty) + bot * ty;
        }
        r
    };
    for y in 0..oh {
        for x in 0..ow {
            let want = sample((x as f64 + 0.5) * 7.0 / ow as f64 - 0.5, (y as f64 + 0.5) * 5.0 / oh as f64 - 0.5);
            let got = out.get(x, y);
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn resize_constant_and_identity() {
    let gray = RasterImage::filled(10, 10, [0.37; 3]).unwrap();
    let small = resize_bilinear(&gray, 4, 4).unwrap();
    assert!(small.pixels().iter().all(|p| p.iter().all(|&v| (v - 0.37).abs() < 1e-15)));
    let img = random_image(9, 6, 1);
    assert_eq!(resize_bilinear(&img, 9, 6).unwrap(), img);
    assert_eq!(resize_for_model(&img, 9, 6).unwrap(), img);
}

#[test]
fn model_resize_averages_blocks_when_shrinking() {
    let img = random_image(8, 8, 9);
    let out = resize_for_model(&img, 4, 2).unwrap();
    for oy in 0..2 {
        for ox in 0..4 {
            let mut acc = [0.0; 3];
            for y in oy * 4..oy * 4 + 4 {
                for x in ox * 2..ox * 2 + 2 {
                    for c in 0..3 {
                        acc[c] += img.get(x, y)[c] / 8.0;
                    }
                }
            }
            for c in 0..3 {
                assert!((out.get(ox, oy)[c] - acc[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn grayscale_weights() {
    let white = RasterImage::filled(2, 2, [1.0; 3]).unwrap();
    assert!(to_grayscale(&white).pixels().iter().all(|p| p.iter().all(|&v| (v - 1.0).abs() < 1e-12)));
    let red = RasterImage::filled(1, 1, [1.0, 0.0, 0.0]).unwrap();
    assert_eq!(to_grayscale(&red).get(0, 0), [0.299; 3]);
    let img = random_image(6, 4, 5);
    let g = to_grayscale(&img);
    for (p, q) in img.pixels().iter().zip(g.pixels()) {
        let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        assert!(q.iter().all(|&v| (v - y).abs() < 1e-15));
    }
}

/// Direct 2-d convolution with a separable kernel and clamped coordinates.
fn direct_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum();
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                    acc += g[(dx + r) as usize] * g[(dy + r) as usize] / (norm * norm) * plane[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

#[test]
fn blur_impulse_recovers_kernel() {
    let (w, h, sigma) = (21, 21, 1.5);
    let mut plane = vec![0.0; w * h];
    plane[10 * w + 10] = 1.0;
    let out = gaussian_blur_plane(&plane, w, h, sigma).unwrap();
    let k = gaussian_kernel(sigma).unwrap();
    let r = k.len() / 2;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as isize - 10, y as isize - 10);
            let want = if dx.unsigned_abs() <= r && dy.unsigned_abs() <= r {
                k[(dx + r as isize) as usize] * k[(dy + r as isize) as usize]
            } else {
                0.0
            };
            assert!((out[y * w + x] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn blur_matches_direct_convolution_and_its_mean() {
    let (w, h) = (13, 9);
    let img = random_image(w, h, 77);
    let plane: Vec<f64> = img.pixels().iter().map(|p| p[1]).collect();
    for sigma in [0.6, 1.0, 2.5] {
        let fast = gaussian_blur_plane(&plane, w, h, sigma).unwrap();
        let slow = direct_blur(&plane, w, h, sigma);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&fast) - mean(&slow)).abs() < 1e-6);
    }
    let gray = RasterImage::filled(8, 8, [0.42; 3]).unwrap();
    let b = gaussian_blur(&gray, 3.0).unwrap();
    assert!(b.pixels().iter().all(|p| p.iter().all(|&v| (v - 0.42).abs() < 1e-12)));
}

#[test]
fn mean_abs_diff_cases() {
    let a = random_image(4, 4, 2);
    assert_eq!(mean_abs_diff(&a, &a).unwrap(), 0.0);
    let black = RasterImage::filled(3, 3, [0.0; 3]).unwrap();
    let white = RasterImage::filled(3, 3, [1.0; 3]).unwrap();
    assert_eq!(mean_abs_diff(&black, &white).unwrap(), 1.0);
    let base = RasterImage::filled(4, 2, [0.5; 3]).unwrap();
    let half = RasterImage::from_fn(4, 2, |x, _| if x < 2 { [0.7; 3] } else { [0.5; 3] }).unwrap();
    assert!((mean_abs_diff(&base, &half).unwrap() - 0.1).abs() < 1e-12);
    assert!(mean_abs_diff(&base, &a).is_err());
}

#[test]
fn perturbation_score_anchor_points() {
    assert_eq!(perturbation_score(0.0, 0.06).unwrap().value(), 1.0);
    assert_eq!(perturbation_score(0.06, 0.06).unwrap().value(), 0.0);
    assert_eq!(perturbation_score(0.03, 0.06).unwrap().value(), 0.5);
    assert_eq!(perturbation_score(0.5, 0.06).unwrap().value(), 0.0);
    assert!(perturbation_score(0.1, 0.0).is_err());
    assert!(perturbation_score(-0.1, 0.2).is_err());
}

#[test]
fn rotation_and_crop() {
    let img = random_image(5, 3, 4);
    let r = img.rotate90();
    assert_eq!(r.dims(), (3, 5));
    assert_eq!(r.rotate90().rotate90().rotate90(), img);
    // clockwise: the top-left source pixel lands in the top-right corner
    assert_eq!(r.get(2, 0), img.get(0, 0));
    let c = img.crop(1, 1, 3, 2).unwrap();
    assert_eq!(c.get(0, 0), img.get(1, 1));
    assert!(img.crop(3, 0, 3, 1).is_err());
}

proptest! {
    #[test]
    fn constructors_always_clamp(vals in proptest::collection::vec(-2.0f64..3.0, 12)) {
        let px: Vec<[f64; 3]> = vals.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let img = RasterImage::from_unclamped(2, 2, px).unwrap();
        prop_assert!(img.pixels().iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn rgb8_round_trip(seed in 0u64..1000) {
        let img = random_image(3, 2, seed);
        let bytes = img.to_rgb8();
        let back = RasterImage::from_rgb8(3, 2, &bytes).unwrap();
        prop_assert!(mean_abs_diff(&img, &back).unwrap() <= 0.5 / 255.0 + 1e-12);
        prop_assert_eq!(back.to_rgb8(), bytes);
    }

    #[test]
    fn resize_stays_in_range(seed in 0u64..500, ow in 1usize..20, oh in 1usize..20) {
        let img = random_image(7, 9, seed);
        for out in [resize_bilinear(&img, ow, oh).unwrap(), resize_for_model(&img, ow, oh).unwrap()] {
            prop_assert_eq!(out.dims(), (ow, oh));
            prop_assert!(out.pixels().iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    #[test]
    fn score_formula_is_exact(delta in 0.0f64..1.0, cap in 1e-3f64..1.0) {
        prop_assert_eq!(perturbation_score(delta, cap).unwrap().value(), (1.0 - delta / cap).max(0.0));
    }
}
