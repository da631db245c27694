//! C ABI over `hoi-fusion`.
//!
//! Every fallible call returns an [`HfStatus`]; on failure the message is
//! available from [`hf_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Arrays are row-major `f64`, fields laid out C×H×W.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hoi_fusion::attention::{apply_cac, build_cac_mask, AttentionMap};
use hoi_fusion::backend::{ToyBackend, ToyBackendSpec, ToyTextEncoder};
use hoi_fusion::filters::{high_pass, kernel_size_from_mask, low_pass, FilterMode, GaussianKernel};
use hoi_fusion::image::RgbImage;
use hoi_fusion::masks::{HeadMask, MaskPyramid, MaskSource};
use hoi_fusion::merge::{latent_merge, residual_merge, BranchTag, LatentGrid, ResidualLayer, ResidualStack};
use hoi_fusion::pipeline::{generate, GenerateRequest, LuminanceSegmentor, MaskPolicy, MergeConfig, SubjectInfo};
use hoi_fusion::tensor::Field;
use hoi_fusion::Error;
use ndarray::{Array2, Array3};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoHeadFound = 3,
    RunAborted = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Feature toggles for [`hf_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HfToggles {
    pub cac: bool,
    pub latent_merge: bool,
    pub residual_merge: bool,
}

pub struct HfField(Field);

pub struct HfMask(HeadMask);

pub struct HfImage(RgbImage);

pub struct HfGeneration {
    image: RgbImage,
    latent: Field,
    manifest: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> HfStatus {
    match e {
        Error::NoHeadFound { .. } => HfStatus::NoHeadFound,
        Error::RunAborted { .. } => HfStatus::RunAborted,
        Error::Io { .. } | Error::Image(_) => HfStatus::Io,
        _ => HfStatus::InvalidArgument,
    }
}

struct Fail(HfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HfStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(HfStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HfStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            HfStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `data` must point to `c * h * w` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_field_new(
    c: usize,
    h: usize,
    w: usize,
    data: *const f64,
    out: *mut *mut HfField,
) -> HfStatus {
    guard(|| {
        let n = c.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or_else(|| bad("field too large"))?;
        if n == 0 {
            return Err(bad("field dimensions must be positive"));
        }
        let v = slice(data, n, "data")?.to_vec();
        put(out, HfField(Array3::from_shape_vec((c, h, w), v).expect("length checked")))
    })
}

/// # Safety
/// `field` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_field_free(field: *mut HfField) {
    release(field)
}

/// # Safety
/// `field` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_field_shape(field: *const HfField, c: *mut usize, h: *mut usize, w: *mut usize) -> HfStatus {
    guard(|| {
        let f = reference(field, "field")?;
        if c.is_null() || h.is_null() || w.is_null() {
            return Err(null("shape output"));
        }
        let (a, b, d) = f.0.dim();
        (*c, *h, *w) = (a, b, d);
        Ok(())
    })
}

/// Copies the field into `buf`, which must hold exactly `len == c * h * w` doubles.
///
/// # Safety
/// `field` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_field_read(field: *const HfField, buf: *mut f64, len: usize) -> HfStatus {
    guard(|| {
        let f = reference(field, "field")?;
        if len != f.0.len() {
            return Err(bad(format!("buffer holds {len} values, field has {}", f.0.len())));
        }
        for (d, s) in slice_mut(buf, len, "buf")?.iter_mut().zip(f.0.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// # Safety
/// `data` must point to `h * w` readable doubles in `[0, 1]`.
#[no_mangle]
pub unsafe extern "C" fn hf_mask_new(h: usize, w: usize, data: *const f64, out: *mut *mut HfMask) -> HfStatus {
    guard(|| {
        let n = h.checked_mul(w).ok_or_else(|| bad("mask too large"))?;
        let v = slice(data, n, "data")?.to_vec();
        let values = Array2::from_shape_vec((h, w), v).map_err(|e| bad(e.to_string()))?;
        put(out, HfMask(HeadMask::new(values, MaskSource::UserSupplied)?))
    })
}

/// # Safety
/// `mask` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_mask_free(mask: *mut HfMask) {
    release(mask)
}

/// Area-weighted resample to `h × w`.
///
/// # Safety
/// `mask` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_mask_resize(mask: *const HfMask, h: usize, w: usize, out: *mut *mut HfMask) -> HfStatus {
    guard(|| {
        let m = reference(mask, "mask")?;
        put(out, HfMask(m.0.resize((h, w))?))
    })
}

/// # Safety
/// `mask` must be a live handle and `area` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_mask_area(mask: *const HfMask, area: *mut f64) -> HfStatus {
    guard(|| {
        let m = reference(mask, "mask")?;
        if area.is_null() {
            return Err(null("area"));
        }
        *area = m.0.area();
        Ok(())
    })
}

/// # Safety
/// `size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_kernel_size_from_mask(area: f64, alpha: f64, size: *mut usize) -> HfStatus {
    guard(|| {
        if size.is_null() {
            return Err(null("size"));
        }
        *size = kernel_size_from_mask(area, alpha)?;
        Ok(())
    })
}

unsafe fn filtered(
    field: *const HfField,
    kernel_size: usize,
    out: *mut *mut HfField,
    f: fn(&Field, &GaussianKernel) -> hoi_fusion::Result<Field>,
) -> HfStatus {
    guard(|| {
        let x = reference(field, "field")?;
        let k = GaussianKernel::new(kernel_size)?;
        put(out, HfField(f(&x.0, &k)?))
    })
}

/// Gaussian low-pass with an odd `kernel_size`.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_low_pass(field: *const HfField, kernel_size: usize, out: *mut *mut HfField) -> HfStatus {
    filtered(field, kernel_size, out, low_pass)
}

/// `x − low_pass(x)`.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_high_pass(field: *const HfField, kernel_size: usize, out: *mut *mut HfField) -> HfStatus {
    filtered(field, kernel_size, out, high_pass)
}

/// `mask ⊙ pfd + (1 − mask) ⊙ sd`; the mask must match the fields' H×W.
///
/// # Safety
/// All handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_latent_merge(
    pfd: *const HfField,
    sd: *const HfField,
    mask: *const HfMask,
    out: *mut *mut HfField,
) -> HfStatus {
    guard(|| {
        let p = LatentGrid::new(reference(pfd, "pfd")?.0.clone(), 1, BranchTag::Pfd)?;
        let s = LatentGrid::new(reference(sd, "sd")?.0.clone(), 1, BranchTag::Sd)?;
        let m = reference(mask, "mask")?;
        put(out, HfField(latent_merge(&p, &s, &m.0)?.into_values()))
    })
}

/// Residual merge of a single feature map. `mode` is one of `replace`,
/// `no-filter`, `low-low`, `high-high`, `high-low`, `low-high`; the mask is
/// resampled to the map's resolution.
///
/// # Safety
/// All handles must be live, `mode` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_residual_merge(
    pfd: *const HfField,
    sd: *const HfField,
    mask: *const HfMask,
    kernel_size: usize,
    mode: *const c_char,
    out: *mut *mut HfField,
) -> HfStatus {
    guard(|| {
        let (p, s) = (reference(pfd, "pfd")?, reference(sd, "sd")?);
        let m = reference(mask, "mask")?;
        let mode: FilterMode = string(mode, "mode")?.parse()?;
        let one = |f: &Field, branch| ResidualStack {
            layers: vec![ResidualLayer {
                index: 0,
                values: f.clone(),
            }],
            branch,
        };
        let (_, h, w) = p.0.dim();
        let pyramid = MaskPyramid::build(m.0.clone(), &[(h, w)])?;
        let merged = residual_merge(
            &one(&p.0, BranchTag::Pfd),
            &one(&s.0, BranchTag::Sd),
            &pyramid,
            &GaussianKernel::new(kernel_size)?,
            mode,
        )?;
        let layer = merged.layers.into_iter().next().expect("one layer in, one out");
        put(out, HfField(layer.values))
    })
}

/// Applies the cross-attention constraint in place to an `(h·w) × n_tokens`
/// row-major attention map. `mask` must be binary and `h × w`.
///
/// # Safety
/// `weights` must be writable for `h * w * n_tokens` doubles and `mask` live.
#[no_mangle]
pub unsafe extern "C" fn hf_apply_cac(
    weights: *mut f64,
    h: usize,
    w: usize,
    n_tokens: usize,
    mask: *const HfMask,
    identity_index: usize,
) -> HfStatus {
    guard(|| {
        let m = reference(mask, "mask")?;
        if m.0.resolution() != (h, w) {
            return Err(bad(format!("mask is {:?}, attention is {h}x{w}", m.0.resolution())));
        }
        let n = h * w * n_tokens;
        let buf = slice_mut(weights, n, "weights")?;
        let a = Array2::from_shape_vec((h * w, n_tokens), buf.to_vec()).map_err(|e| bad(e.to_string()))?;
        let map = AttentionMap::new(a, (h, w))?;
        let gated = apply_cac(&map, &build_cac_mask(&m.0, n_tokens, identity_index)?)?;
        for (d, s) in buf.iter_mut().zip(gated.weights().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Runs the full fused generation on the bundled toy backends.
///
/// `mask` may be null, in which case the luminance segmentor picks the head.
/// `filter_mode` may be null for the default (`low-high`).
///
/// # Safety
/// String arguments must be NUL-terminated; `mask` null or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_generate(
    prompt: *const c_char,
    class_word: *const c_char,
    seed: u64,
    steps: usize,
    toggles: HfToggles,
    filter_mode: *const c_char,
    mask: *const HfMask,
    out: *mut *mut HfGeneration,
) -> HfStatus {
    guard(|| {
        let prompt = string(prompt, "prompt")?;
        let class_word = string(class_word, "class_word")?;
        let mut config = MergeConfig::with_steps(steps).with_toggles(toggles.cac, toggles.latent_merge, toggles.residual_merge);
        config.seed = seed;
        if !filter_mode.is_null() {
            config.filter_mode = string(filter_mode, "filter_mode")?.parse()?;
        }
        let sd = ToyBackend::new(ToyBackendSpec::with_seed(1))?;
        let pfd = ToyBackend::new(ToyBackendSpec::with_seed(2))?;
        let spec = sd.spec();
        let encoder = ToyTextEncoder::new(spec.n_tokens, spec.token_dim)?;
        let segmentor = LuminanceSegmentor { threshold: 0.6 };
        let user_mask = if mask.is_null() { None } else { Some(reference(mask, "mask")?.0.clone()) };
        let req = GenerateRequest {
            prompt,
            subject: SubjectInfo {
                class_word: class_word.to_string(),
                descriptor: "subject-0".into(),
            },
            config,
            sd: &sd,
            pfd: &pfd,
            encoder: &encoder,
            segmentor: &segmentor,
            mask_policy: MaskPolicy {
                user_mask,
                ..MaskPolicy::default()
            },
            capture: false,
        };
        let r = generate(&req)?;
        let manifest = CString::new(r.manifest.to_json()?).map_err(|e| bad(e.to_string()))?;
        put(
            out,
            HfGeneration {
                image: r.image,
                latent: r.final_latent.into_values(),
                manifest,
            },
        )
    })
}

/// # Safety
/// `generation` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_generation_free(generation: *mut HfGeneration) {
    release(generation)
}

/// Run manifest as JSON; valid while `generation` lives.
///
/// # Safety
/// `generation` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_generation_manifest(generation: *const HfGeneration) -> *const c_char {
    match generation.as_ref() {
        Some(g) => g.manifest.as_ptr(),
        None => ptr::null(),
    }
}

/// # Safety
/// `generation` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_generation_latent(generation: *const HfGeneration, out: *mut *mut HfField) -> HfStatus {
    guard(|| put(out, HfField(reference(generation, "generation")?.latent.clone())))
}

/// # Safety
/// `generation` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_generation_image(generation: *const HfGeneration, out: *mut *mut HfImage) -> HfStatus {
    guard(|| put(out, HfImage(reference(generation, "generation")?.image.clone())))
}

/// # Safety
/// `image` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_image_free(image: *mut HfImage) {
    release(image)
}

/// # Safety
/// `image` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn hf_image_size(image: *const HfImage, height: *mut usize, width: *mut usize) -> HfStatus {
    guard(|| {
        let img = reference(image, "image")?;
        if height.is_null() || width.is_null() {
            return Err(null("size output"));
        }
        (*height, *width) = (img.0.height(), img.0.width());
        Ok(())
    })
}

/// Copies interleaved 8-bit RGB into `buf` (`len == height * width * 3`).
///
/// # Safety
/// `image` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hf_image_read_rgb8(image: *const HfImage, buf: *mut u8, len: usize) -> HfStatus {
    guard(|| {
        let bytes = reference(image, "image")?.0.to_rgb8();
        if len != bytes.len() {
            return Err(bad(format!("buffer holds {len} bytes, image needs {}", bytes.len())));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_image_save_png(image: *const HfImage, path: *const c_char) -> HfStatus {
    guard(|| {
        let img = reference(image, "image")?;
        img.0.save_png(std::path::Path::new(string(path, "path")?))?;
        Ok(())
    })
}
