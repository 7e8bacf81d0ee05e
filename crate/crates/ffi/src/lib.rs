//! C ABI for the vphoto library.
//!
//! Images and scorers cross the boundary as opaque handles that the caller
//! frees with the matching `*_free` function. Every fallible call returns a
//! [`VphotoStatus`]; on failure [`vphoto_last_error`] describes the error
//! for the calling thread. Pixels are interleaved RGB doubles in `[0, 1]`,
//! row-major from the top-left corner.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vphoto::composition::{search_crops, CropGrid};
use vphoto::enhance::{optimize_filter_1d, SearchGrid};
use vphoto::filters::{FilterId, FilterParams};
use vphoto::panorama::{project, standard_view_specs, Panorama};
use vphoto::scoring::{Aspect, AspectScorer, Scorer};
use vphoto::{Error, RasterImage};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VphotoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInput = 3,
    IncompatibleModel = 4,
    InvalidState = 5,
    Training = 6,
    Format = 7,
    MissingArtifact = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VphotoAspect {
    Composition = 0,
    Saturation = 1,
    Hdr = 2,
    Overall = 3,
}

impl From<VphotoAspect> for Aspect {
    fn from(a: VphotoAspect) -> Self {
        match a {
            VphotoAspect::Composition => Aspect::Composition,
            VphotoAspect::Saturation => Aspect::Saturation,
            VphotoAspect::Hdr => Aspect::Hdr,
            VphotoAspect::Overall => Aspect::Overall,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VphotoFilter {
    Saturation = 0,
    Hdr = 1,
    Brighten = 2,
    Vignette = 3,
    TuneBrightness = 4,
    TuneContrast = 5,
    Curve = 6,
    FlattenBrightness = 7,
}

impl From<VphotoFilter> for FilterId {
    fn from(f: VphotoFilter) -> Self {
        match f {
            VphotoFilter::Saturation => FilterId::Saturation,
            VphotoFilter::Hdr => FilterId::Hdr,
            VphotoFilter::Brighten => FilterId::Brighten,
            VphotoFilter::Vignette => FilterId::Vignette,
            VphotoFilter::TuneBrightness => FilterId::TuneBrightness,
            VphotoFilter::TuneContrast => FilterId::TuneContrast,
            VphotoFilter::Curve => FilterId::Curve,
            VphotoFilter::FlattenBrightness => FilterId::FlattenBrightness,
        }
    }
}

/// Opaque RGB image.
pub struct VphotoImage(RasterImage);

/// Opaque trained aspect scorer.
pub struct VphotoScorer(AspectScorer);

/// A crop window in source pixels with its blended score.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VphotoCrop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VphotoStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidPairing { .. } => VphotoStatus::InvalidArgument,
        Error::InvalidInput(_) => VphotoStatus::InvalidInput,
        Error::IncompatibleModel(_) => VphotoStatus::IncompatibleModel,
        Error::InvalidState(_) => VphotoStatus::InvalidState,
        Error::Training(_) => VphotoStatus::Training,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) | Error::Image(_) => VphotoStatus::Format,
        Error::MissingArtifact(_) => VphotoStatus::MissingArtifact,
        Error::Io(_) => VphotoStatus::Io,
        _ => VphotoStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> VphotoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VphotoStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as {what}"));
            VphotoStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("panic inside vphoto".into());
            VphotoStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| arg(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn put<T>(out: *mut T, v: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    unsafe { out.write(v) };
    Ok(())
}

fn put_image(out: *mut *mut VphotoImage, img: RasterImage) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    put(out, Box::into_raw(Box::new(VphotoImage(img))), "out")
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vphoto_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vphoto_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an image from `3 * width * height` interleaved RGB values.
/// Values outside `[0, 1]` are clamped.
///
/// # Safety
/// `rgb` must point to `3 * width * height` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_new(
    width: usize,
    height: usize,
    rgb: *const f64,
    out: *mut *mut VphotoImage,
) -> VphotoStatus {
    guard(|| {
        let n = width.checked_mul(height).and_then(|n| n.checked_mul(3)).ok_or(arg("image too large"))?;
        let data = unsafe { slice_arg(rgb, n, "rgb") }?;
        let px = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        put_image(out, RasterImage::from_unclamped(width, height, px)?)
    })
}

/// Decodes a PNG or JPEG file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_load(path: *const c_char, out: *mut *mut VphotoImage) -> VphotoStatus {
    guard(|| put_image(out, RasterImage::open(unsafe { path_arg(path, "path") }?)?))
}

/// # Safety
/// `image` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_save_png(image: *const VphotoImage, path: *const c_char) -> VphotoStatus {
    guard(|| {
        let img = unsafe { as_ref(image, "image") }?;
        img.0.save_png(unsafe { path_arg(path, "path") }?)?;
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_dims(
    image: *const VphotoImage,
    width: *mut usize,
    height: *mut usize,
) -> VphotoStatus {
    guard(|| {
        let (w, h) = unsafe { as_ref(image, "image") }?.0.dims();
        put(width, w, "width")?;
        put(height, h, "height")
    })
}

/// Copies the pixels into `rgb`, which must hold `3 * width * height`
/// doubles; `len` is its capacity in doubles.
///
/// # Safety
/// `rgb` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_pixels(image: *const VphotoImage, rgb: *mut f64, len: usize) -> VphotoStatus {
    guard(|| {
        let img = &unsafe { as_ref(image, "image") }?.0;
        let need = 3 * img.pixels().len();
        if len < need {
            return Err(arg(format!("buffer holds {len} doubles, image needs {need}")).into());
        }
        if rgb.is_null() {
            return Err(Failure::Null("rgb"));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(rgb, need) };
        for (d, p) in dst.chunks_exact_mut(3).zip(img.pixels()) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vphoto_image_free(image: *mut VphotoImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Applies a filter with `n_params` parameters.
///
/// # Safety
/// `image` must be a live handle and `params` readable for `n_params`.
#[no_mangle]
pub unsafe extern "C" fn vphoto_filter_apply(
    image: *const VphotoImage,
    filter: VphotoFilter,
    params: *const f64,
    n_params: usize,
    out: *mut *mut VphotoImage,
) -> VphotoStatus {
    guard(|| {
        let img = unsafe { as_ref(image, "image") }?;
        let p = unsafe { slice_arg(params, n_params, "params") }?;
        put_image(out, FilterParams::new(filter.into(), p.to_vec())?.apply(&img.0)?)
    })
}

/// Projects view `index` (0-5) of the standard panorama layout from a 2:1
/// equirectangular image.
///
/// # Safety
/// `panorama` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_standard_view(
    panorama: *const VphotoImage,
    index: usize,
    size: usize,
    out: *mut *mut VphotoImage,
) -> VphotoStatus {
    guard(|| {
        let img = unsafe { as_ref(panorama, "panorama") }?;
        let pano = Panorama::new("ffi", img.0.clone())?;
        let specs = standard_view_specs(size)?;
        let spec = specs.get(index).ok_or_else(|| arg(format!("view index {index} outside 0..6")))?;
        put_image(out, project(&pano, spec)?)
    })
}

/// Loads a trained model file for one aspect.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_scorer_load(
    aspect: VphotoAspect,
    path: *const c_char,
    out: *mut *mut VphotoScorer,
) -> VphotoStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let s = AspectScorer::load(aspect.into(), unsafe { path_arg(path, "path") }?)?;
        put(out, Box::into_raw(Box::new(VphotoScorer(s))), "out")
    })
}

/// # Safety
/// Both handles must be live; `score` writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_scorer_score(
    scorer: *const VphotoScorer,
    image: *const VphotoImage,
    score: *mut f64,
) -> VphotoStatus {
    guard(|| {
        let s = unsafe { as_ref(scorer, "scorer") }?;
        let img = unsafe { as_ref(image, "image") }?;
        put(score, s.0.score(&img.0)?, "score")
    })
}

/// # Safety
/// `scorer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vphoto_scorer_free(scorer: *mut VphotoScorer) {
    if !scorer.is_null() {
        drop(unsafe { Box::from_raw(scorer) });
    }
}

/// Grid search of a one-parameter filter (saturation or HDR) against its
/// paired scorer. An empty `values` list uses the filter's default grid.
/// Any of `best_param`, `best_score` and `out` may be null.
///
/// # Safety
/// Handles must be live and `values` readable for `n_values`.
#[no_mangle]
pub unsafe extern "C" fn vphoto_optimize_filter(
    image: *const VphotoImage,
    filter: VphotoFilter,
    scorer: *const VphotoScorer,
    values: *const f64,
    n_values: usize,
    best_param: *mut f64,
    best_score: *mut f64,
    out: *mut *mut VphotoImage,
) -> VphotoStatus {
    guard(|| {
        let img = unsafe { as_ref(image, "image") }?;
        let s = unsafe { as_ref(scorer, "scorer") }?;
        let v = unsafe { slice_arg(values, n_values, "values") }?;
        let f = FilterId::from(filter);
        let grid = match (v.is_empty(), f) {
            (false, _) => SearchGrid::new(f, v.to_vec())?,
            (true, FilterId::Saturation) => SearchGrid::saturation(),
            (true, FilterId::Hdr) => SearchGrid::hdr(),
            (true, _) => return Err(arg(format!("{f} has no default search grid")).into()),
        };
        let r = optimize_filter_1d(&img.0, &grid, &s.0)?;
        if !best_param.is_null() {
            unsafe { best_param.write(r.param) };
        }
        if !best_score.is_null() {
            unsafe { best_score.write(r.score) };
        }
        if !out.is_null() {
            put_image(out, r.image)?;
        }
        Ok(())
    })
}

/// Best crop window under the default grid, blending the composition score
/// with weight `c` and the overall score with `1 - c`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vphoto_best_crop(
    image: *const VphotoImage,
    c: f64,
    composition: *const VphotoScorer,
    overall: *const VphotoScorer,
    out: *mut VphotoCrop,
) -> VphotoStatus {
    guard(|| {
        let img = unsafe { as_ref(image, "image") }?;
        let comp = unsafe { as_ref(composition, "composition") }?;
        let ov = unsafe { as_ref(overall, "overall") }?;
        let found = search_crops(&img.0, c, 1, &CropGrid::default(), &comp.0, &ov.0)?;
        let best = found.crops.first().ok_or_else(|| Error::InvalidInput("no crop window fits".into()))?;
        let w = best.window;
        put(out, VphotoCrop { x: w.x, y: w.y, width: w.w, height: w.h, score: best.hybrid }, "out")
    })
}

fn arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
