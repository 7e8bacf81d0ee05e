//! Equirectangular panoramas and gnomonic (rectilinear) view extraction.
//!
//! World frame: `+y` is up, `+z` is yaw 0, yaw grows counter-clockwise seen
//! from above (towards `+x`), pitch is positive upwards. Longitude equals yaw,
//! so the equirect column at `u = 0.5 + lon / 360` holds yaw `lon`, and a view
//! is laid out so image `x` grows with longitude like the source panorama.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, RasterImage, Rgb};

pub type Vec3 = [f64; 3];

/// Number of views in [`standard_views`].
pub const STANDARD_VIEW_COUNT: usize = 6;
pub const STANDARD_YAW_STEP_DEG: f64 = 60.0;
pub const STANDARD_PITCH_DEG: f64 = 10.0;
pub const STANDARD_FOV_DEG: f64 = 90.0;

#[derive(Clone, Debug)]
pub struct Panorama {
    id: String,
    image: RasterImage,
}

impl Panorama {
    pub fn new(id: impl Into<String>, image: RasterImage) -> Result<Self> {
        if image.width() != 2 * image.height() {
            return Err(Error::InvalidInput(format!(
                "equirectangular panorama must be 2:1, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        Ok(Panorama { id: id.into(), image })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        Self::new(id, RasterImage::open(path)?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    /// Bilinear lookup at a direction; horizontal wraparound, vertical clamp.
    pub fn sample(&self, dir: Vec3) -> Rgb {
        let (u, v) = ray_to_equirect(dir);
        let (w, h) = self.image.dims();
        let fx = u * w as f64 - 0.5;
        let fy = (v * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = fx.floor();
        let tx = fx - x0;
        let x0 = (x0 as isize).rem_euclid(w as isize) as usize;
        let x1 = (x0 + 1) % w;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        let p00 = self.image.get(x0, y0);
        let p10 = self.image.get(x1, y0);
        let p01 = self.image.get(x0, y1);
        let p11 = self.image.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bot = p01[c] + (p11[c] - p01[c]) * tx;
            out[c] = top + (bot - top) * ty;
        }
        out
    }
}

/// Reads a panorama collection manifest: one path per line, `#` starts a
/// comment, relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest(&text).into_iter().map(|p| if p.is_absolute() { p } else { base.join(p) }).collect())
}

pub fn parse_manifest(text: &str) -> Vec<PathBuf> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(PathBuf::from)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSpec {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub out_size: usize,
}

/// Orthonormal camera basis.
#[derive(Clone, Copy, Debug)]
pub struct CameraBasis {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl ViewSpec {
    pub fn new(yaw_deg: f64, pitch_deg: f64, fov_deg: f64, out_size: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::arg(format!("fov must lie in (0, 180), got {fov_deg}")));
        }
        if !(-90.0..=90.0).contains(&pitch_deg) {
            return Err(Error::arg(format!("pitch must lie in [-90, 90], got {pitch_deg}")));
        }
        if !yaw_deg.is_finite() {
            return Err(Error::arg("yaw must be finite"));
        }
        if out_size == 0 {
            return Err(Error::arg("out_size must be positive"));
        }
        Ok(ViewSpec { yaw_deg: yaw_deg.rem_euclid(360.0), pitch_deg, fov_deg, out_size })
    }

    pub fn basis(&self) -> CameraBasis {
        let (sy, cy) = self.yaw_deg.to_radians().sin_cos();
        let (sp, cp) = self.pitch_deg.to_radians().sin_cos();
        let forward = [cp * sy, sp, cp * cy];
        let right = [cy, 0.0, -sy];
        let up = cross(forward, right);
        CameraBasis { forward, right, up }
    }

    fn half_extent(&self) -> f64 {
        (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Projects a direction back to normalized view coordinates; `None` when
    /// the direction is behind the camera.
    pub fn ray_to_pixel(&self, dir: Vec3) -> Option<(f64, f64)> {
        let b = self.basis();
        let z = dot(dir, b.forward);
        if z <= 0.0 {
            return None;
        }
        let t = self.half_extent();
        let xc = dot(dir, b.right) / z / t;
        let yc = dot(dir, b.up) / z / t;
        Some(((xc + 1.0) / 2.0, (1.0 - yc) / 2.0))
    }

    /// True when the direction lands inside the view frustum.
    pub fn contains(&self, dir: Vec3) -> bool {
        self.ray_to_pixel(dir).is_some_and(|(u, v)| (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v))
    }
}

/// Unit ray through normalized view coordinates `(u, v)`, `v` growing
/// downwards. `(0.5, 0.5)` is exactly the view direction.
pub fn pixel_to_ray(spec: &ViewSpec, u: f64, v: f64) -> Vec3 {
    let b = spec.basis();
    let t = spec.half_extent();
    let xc = (2.0 * u - 1.0) * t;
    let yc = (1.0 - 2.0 * v) * t;
    normalize([
        b.forward[0] + xc * b.right[0] + yc * b.up[0],
        b.forward[1] + xc * b.right[1] + yc * b.up[1],
        b.forward[2] + xc * b.right[2] + yc * b.up[2],
    ])
}

/// Direction to normalized equirect coordinates `(u, v)` in `[0, 1)` x `[0, 1]`.
pub fn ray_to_equirect(dir: Vec3) -> (f64, f64) {
    let d = normalize(dir);
    let lon = d[0].atan2(d[2]).to_degrees();
    let lat = d[1].clamp(-1.0, 1.0).asin().to_degrees();
    let u = (0.5 + lon / 360.0).rem_euclid(1.0);
    (u, (90.0 - lat) / 180.0)
}

pub fn equirect_to_ray(u: f64, v: f64) -> Vec3 {
    let lon = ((u - 0.5) * 360.0).to_radians();
    let lat = (90.0 - v * 180.0).to_radians();
    let (sl, cl) = lon.sin_cos();
    let (sa, ca) = lat.sin_cos();
    [ca * sl, sa, ca * cl]
}

/// Renders a square perspective view sampled bilinearly from the panorama.
pub fn project(pano: &Panorama, spec: &ViewSpec) -> Result<RasterImage> {
    let n = spec.out_size;
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64;
            let v = (y as f64 + 0.5) / n as f64;
            pixels.push(pano.sample(pixel_to_ray(spec, u, v)).map(clamp_unit));
        }
    }
    RasterImage::from_unclamped(n, n, pixels)
}

pub fn standard_view_specs(out_size: usize) -> Result<Vec<ViewSpec>> {
    (0..STANDARD_VIEW_COUNT)
        .map(|k| ViewSpec::new(k as f64 * STANDARD_YAW_STEP_DEG, STANDARD_PITCH_DEG, STANDARD_FOV_DEG, out_size))
        .collect()
}

/// Six views at yaw `k * 60`, pitch 10, 90 degree field of view.
pub fn standard_views(pano: &Panorama, out_size: usize) -> Result<Vec<RasterImage>> {
    standard_view_specs(out_size)?.iter().map(|spec| project(pano, spec)).collect()
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(v: Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
