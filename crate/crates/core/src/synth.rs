//! Procedural stand-ins for photo collections: colorful landscape "good
//! photos", graded degradations of them for overall-quality training, and
//! equirectangular panoramas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{splitmix, stream_seed, uniform, Corpus, CorpusEntry, Provenance, TrainingExample};
use crate::error::Result;
use crate::filters::{apply_signed, saturation, tune_brightness, tune_contrast, FilterId};
use crate::image::{resize_for_model, RasterImage, Rgb, SimilarityScore};
use crate::panorama::Panorama;
use crate::scoring::rank_to_percentile;

/// HSV (hue in degrees) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]` with unit lattice spacing. With
/// `period_x`, the noise wraps horizontally.
pub fn value_noise(seed: u64, x: f64, y: f64, period_x: Option<i64>) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let wrap = |i: i64| period_x.map_or(i, |p| i.rem_euclid(p));
    let (x0, y0) = (fx as i64, fy as i64);
    let v00 = lattice(seed, wrap(x0), y0);
    let v10 = lattice(seed, wrap(x0 + 1), y0);
    let v01 = lattice(seed, wrap(x0), y0 + 1);
    let v11 = lattice(seed, wrap(x0 + 1), y0 + 1);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

struct Scene {
    sky_hue: f64,
    sky_sat: f64,
    ground_hue: f64,
    ground_sat: f64,
    ground_val: f64,
    horizon: f64,
    wave_amp: f64,
    wave_freq: f64,
    wave_phase: f64,
    subject: (f64, f64),
    subject_hue: f64,
    subject_bright: bool,
    noise_seed: u64,
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let sunset = rng.random::<f64>() < 0.3;
        let ground_hues = [110.0, 35.0, 175.0, 80.0];
        let thirds = [1.0 / 3.0, 2.0 / 3.0];
        Scene {
            sky_hue: if sunset { uniform(rng, 15.0, 40.0) } else { uniform(rng, 195.0, 225.0) },
            sky_sat: uniform(rng, 0.5, 0.7),
            ground_hue: ground_hues[rng.random_range(0..ground_hues.len())] + uniform(rng, -12.0, 12.0),
            ground_sat: uniform(rng, 0.55, 0.8),
            ground_val: uniform(rng, 0.45, 0.7),
            horizon: thirds[rng.random_range(0..2)] + uniform(rng, -0.04, 0.04),
            wave_amp: uniform(rng, 0.02, 0.06),
            wave_freq: uniform(rng, 1.0, 3.0),
            wave_phase: uniform(rng, 0.0, std::f64::consts::TAU),
            subject: (thirds[rng.random_range(0..2)] + uniform(rng, -0.05, 0.05), uniform(rng, 0.05, 0.09)),
            subject_hue: uniform(rng, 0.0, 360.0),
            subject_bright: rng.random::<bool>(),
            noise_seed: rng.random(),
        }
    }

    fn shade(&self, u: f64, v: f64) -> Rgb {
        let horizon =
            self.horizon + self.wave_amp * (self.wave_freq * u * std::f64::consts::TAU + self.wave_phase).sin();
        let grain = value_noise(self.noise_seed, u * 48.0, v * 48.0, None) - 0.5;
        let broad = value_noise(self.noise_seed ^ 0x55, u * 6.0, v * 6.0, None) - 0.5;
        let (sx, sr) = self.subject;
        let sy = if self.subject_bright { horizon - 2.2 * sr } else { horizon - 0.6 * sr };
        let d = ((u - sx).powi(2) + (v - sy).powi(2)).sqrt();
        if d < sr {
            return if self.subject_bright {
                hsv_to_rgb(self.subject_hue * 0.15 + 40.0, 0.35, 0.98)
            } else {
                hsv_to_rgb(self.subject_hue, 0.7, 0.25 + 0.1 * grain)
            };
        }
        if v < horizon {
            let t = v / horizon.max(1e-6);
            let cloud = (value_noise(self.noise_seed ^ 0xc10d, u * 5.0, v * 9.0, None) - 0.55).max(0.0) * 1.5;
            let sat = (self.sky_sat * (1.0 - 0.35 * t) - cloud).max(0.0);
            let val = (0.78 + 0.18 * t + 0.5 * cloud).min(1.0);
            let mut p = hsv_to_rgb(self.sky_hue + 10.0 * broad, sat, val);
            if self.subject_bright {
                let glow = (-d * d / (2.0 * (2.5 * sr).powi(2))).exp() * 0.25;
                p = [p[0] + glow, p[1] + glow * 0.9, p[2] + glow * 0.6];
            }
            p
        } else {
            let depth = (v - horizon) / (1.0 - horizon).max(1e-6);
            let val = self.ground_val * (0.75 + 0.35 * depth) * (1.0 + 0.35 * broad + 0.5 * grain);
            hsv_to_rgb(self.ground_hue + 25.0 * broad, self.ground_sat * (1.0 + 0.3 * broad), val)
        }
    }
}

/// A colorful landscape with a rule-of-thirds horizon and subject.
pub fn proxy_photo(size: usize, seed: u64) -> Result<RasterImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng);
    let s = size as f64;
    let pixels = (0..size * size)
        .into_par_iter()
        .map(|i| {
            // 2x2 supersampling
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let mut acc = [0.0; 3];
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let p = scene.shade((x + ox) / s, (y + oy) / s);
                for c in 0..3 {
                    acc[c] += p[c] / 4.0;
                }
            }
            acc
        })
        .collect();
    RasterImage::from_unclamped(size, size, pixels)
}

/// `n` proxy photos at `size x size`.
pub fn proxy_corpus(n: usize, size: usize, seed: u64) -> Result<Corpus> {
    let entries = (0..n)
        .into_par_iter()
        .map(|i| Ok(CorpusEntry { id: format!("proxy-{i:04}"), image: proxy_photo(size, stream_seed(seed, i, 0, 0))? }))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(format!("proxy-{seed}"), entries)
}

/// Stacks desaturation, detail loss, contrast loss and an exposure shift,
/// each scaled by `severity` in `[0, 1]`.
pub fn degrade(img: &RasterImage, severity: f64, seed: u64) -> Result<RasterImage> {
    let d = severity.clamp(0.0, 1.0);
    if d == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = || uniform(&mut rng, 0.5, 1.0);
    let (a1, a2, a3, a4) = (a(), a(), a(), a());
    let sign = if seed & 1 == 0 { 1.0 } else { -1.0 };
    let out = saturation(img, 0.5 - 0.45 * d * a1)?;
    let out = apply_signed(FilterId::Hdr, -d * a2, &out)?;
    let out = tune_contrast(&out, 0.5 - 0.45 * d * a3)?;
    tune_brightness(&out, 0.5 + sign * 0.35 * d * a4)
}

/// Graded copies of every corpus image, labeled with the percentile rank of
/// their quality `1 - severity`. The first copy of each image is untouched.
pub fn ranked_dataset(
    corpus: &Corpus,
    per_image: usize,
    seed: u64,
    training_size: usize,
) -> Result<Vec<TrainingExample>> {
    let per_entry = corpus
        .entries()
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let base = resize_for_model(&e.image, training_size, training_size)?;
            (0..per_image.max(1))
                .map(|k| {
                    let s = stream_seed(seed, i, 0, k);
                    let severity = if k == 0 { 0.0 } else { ChaCha8Rng::seed_from_u64(s).random::<f64>() };
                    Ok((e.id.clone(), k, s, severity, degrade(&base, severity, splitmix(s))?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<_> = per_entry.into_iter().flatten().collect();
    let quality: Vec<f64> = flat.iter().map(|f| 1.0 - f.3).collect();
    let ranks = rank_to_percentile(&quality)?;
    flat.into_iter()
        .zip(ranks)
        .map(|((source, k, s, severity, image), r)| {
            Ok(TrainingExample {
                image,
                target: SimilarityScore::new(r)?,
                provenance: Provenance {
                    source,
                    operation: Some(format!("degrade={severity}")),
                    batch: Some(k),
                    seed: s,
                },
            })
        })
        .collect()
}

/// A 2:1 equirectangular landscape: sky, a rolling horizon with a few
/// landmarks, a sun, and textured ground.
pub fn synthetic_panorama(height: usize, seed: u64) -> Result<Panorama> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng);
    let sun = (uniform(&mut rng, -180.0, 180.0), uniform(&mut rng, 12.0, 30.0));
    let landmarks: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                uniform(&mut rng, -180.0, 180.0),
                uniform(&mut rng, 4.0, 12.0),
                uniform(&mut rng, 6.0, 18.0),
                uniform(&mut rng, 0.0, 360.0),
            )
        })
        .collect();
    let width = 2 * height;
    let period = 36i64;
    let pixels = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let lon = (x as f64 + 0.5) / width as f64 * 360.0 - 180.0;
            let lat = 90.0 - (y as f64 + 0.5) / height as f64 * 180.0;
            let nx = (lon + 180.0) / 10.0;
            let horizon = 2.0
                + 4.0 * (scene.wave_freq.round() * lon.to_radians() + scene.wave_phase).sin()
                + 3.0 * (value_noise(scene.noise_seed, nx / 2.0, 0.0, Some(period / 2)) - 0.5);
            let grain = value_noise(scene.noise_seed ^ 1, nx * 8.0, lat / 1.25, Some(period * 8)) - 0.5;
            let broad = value_noise(scene.noise_seed ^ 2, nx, lat / 10.0, Some(period)) - 0.5;
            let dlon = |a: f64| ((lon - a + 540.0).rem_euclid(360.0) - 180.0).abs();
            for &(lm_lon, lm_w, lm_h, lm_hue) in &landmarks {
                if dlon(lm_lon) < lm_w / 2.0 && lat > horizon - 1.0 && lat < horizon + lm_h {
                    return hsv_to_rgb(lm_hue, 0.55, 0.3 + 0.15 * grain + 0.1 * broad);
                }
            }
            let sd = (dlon(sun.0).powi(2) + (lat - sun.1).powi(2)).sqrt();
            if lat > horizon {
                if sd < 3.0 {
                    return [1.0, 0.97, 0.85];
                }
                let t = ((lat - horizon) / (90.0 - horizon)).clamp(0.0, 1.0);
                let cloud = (value_noise(scene.noise_seed ^ 3, nx * 1.5, lat / 6.0, Some(period * 3 / 2)) - 0.55)
                    .max(0.0)
                    * 1.5;
                let sat = (scene.sky_sat * (0.65 + 0.35 * t) - cloud).max(0.0);
                let val = (0.95 - 0.18 * t + 0.5 * cloud).min(1.0);
                let glow = (-sd * sd / 200.0).exp() * 0.3;
                let p = hsv_to_rgb(scene.sky_hue + 10.0 * broad, sat, val);
                [p[0] + glow, p[1] + glow * 0.9, p[2] + glow * 0.6]
            } else {
                let depth = ((horizon - lat) / (90.0 + horizon)).clamp(0.0, 1.0);
                let val = scene.ground_val * (0.8 + 0.3 * depth) * (1.0 + 0.35 * broad + 0.5 * grain);
                hsv_to_rgb(scene.ground_hue + 25.0 * broad, scene.ground_sat * (1.0 + 0.3 * broad), val)
            }
        })
        .collect();
    Panorama::new(format!("pano-{seed}"), RasterImage::from_unclamped(width, height, pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn noise_wraps() {
        let a = value_noise(7, 0.3, 2.2, Some(5));
        let b = value_noise(7, 5.3, 2.2, Some(5));
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn proxy_photos_are_colorful_and_deterministic() {
        let a = proxy_photo(48, 3).unwrap();
        assert_eq!(a, proxy_photo(48, 3).unwrap());
        assert!(a.mean_saturation() > 0.2);
    }

    #[test]
    fn degrade_zero_is_identity() {
        let a = proxy_photo(32, 1).unwrap();
        assert_eq!(degrade(&a, 0.0, 5).unwrap(), a);
        assert!(degrade(&a, 1.0, 5).unwrap().mean_saturation() < a.mean_saturation());
    }

    #[test]
    fn panorama_shape() {
        let p = synthetic_panorama(32, 4).unwrap();
        assert_eq!(p.image().dims(), (64, 32));
    }
}
