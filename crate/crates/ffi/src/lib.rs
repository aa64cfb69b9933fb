//! C ABI over `yelpimg`.
//!
//! Every fallible function returns a [`YiStatus`]; on failure the message is
//! available from [`yi_last_error`] on the same thread. Handles are opaque,
//! created by `*_open`/`*_load` and released with the matching `*_free`.
//! A handle must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use yelpimg::engine::{Graph, Tensor};
use yelpimg::gan::{self, GanPair};
use yelpimg::imageprep::{self, PIXELS};
use yelpimg::ingest::{self, Bucket};
use yelpimg::trainer::{self, Dataset, Model, StoreDataset};
use yelpimg::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Panic = 7,
}

/// Star bucket, as returned by [`yi_bucketize`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YiBucket {
    BelowAverage = 0,
    Average = 1,
    AboveAverage = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> YiStatus {
    match e {
        Error::Io { .. } => YiStatus::Io,
        Error::Format(_) | Error::Image(_) | Error::Config(_) => YiStatus::Format,
        Error::Shape(_) => YiStatus::Shape,
        Error::NonFinite(_) => YiStatus::Numeric,
        Error::IllegalStars(_) | Error::InvalidArgument(_) => YiStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (YiStatus, String)>) -> YiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => YiStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            YiStatus::Panic
        }
    }
}

fn lib<T>(r: yelpimg::Result<T>) -> Result<T, (YiStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (YiStatus, String) {
    (YiStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: String) -> (YiStatus, String) {
    (YiStatus::InvalidArgument, msg)
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (YiStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (YiStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn yi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn yi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Doubles a half-star rating: `scaled = 2·raw` (2..10), `index = scaled − 2`.
///
/// # Safety
/// Output pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_scale_stars(
    raw: f64,
    scaled_out: *mut u8,
    index_out: *mut u8,
) -> YiStatus {
    guard(|| {
        let s = lib(ingest::scale_stars(raw))?;
        *out_ref(scaled_out, "scaled_out")? = s.scaled();
        *out_ref(index_out, "index_out")? = s.index() as u8;
        Ok(())
    })
}

/// # Safety
/// `bucket_out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_bucketize(raw: f64, bucket_out: *mut YiBucket) -> YiStatus {
    guard(|| {
        let b = lib(ingest::bucketize(raw))?;
        *out_ref(bucket_out, "bucket_out")? = match b {
            Bucket::BelowAverage => YiBucket::BelowAverage,
            Bucket::Average => YiBucket::Average,
            Bucket::AboveAverage => YiBucket::AboveAverage,
        };
        Ok(())
    })
}

/// Values in one normalized image (`3·144·200`).
#[no_mangle]
pub extern "C" fn yi_image_len() -> usize {
    PIXELS
}

/// Normalizes an interleaved RGB image of `height × width` pixels into the
/// channel-major signed `(3, 144, 200)` layout. `out_len` must be at least
/// [`yi_image_len`].
///
/// # Safety
/// `rgb` must point to `height·width·3` readable bytes and `out` to
/// `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn yi_normalize_image(
    rgb: *const u8,
    height: usize,
    width: usize,
    out: *mut i8,
    out_len: usize,
) -> YiStatus {
    guard(|| {
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < PIXELS {
            return Err(invalid(format!("out_len {out_len} < {PIXELS}")));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| invalid("image size overflows".into()))?;
        let src = std::slice::from_raw_parts(rgb, n);
        let px = lib(imageprep::normalize_image(src, height, width))?;
        std::slice::from_raw_parts_mut(out, PIXELS).copy_from_slice(&px);
        Ok(())
    })
}

/// Random-access reader over a YIMG file.
pub struct YiStore {
    inner: StoreDataset,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_store_open(path: *const c_char, out: *mut *mut YiStore) -> YiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = path_arg(path, "path")?;
        let inner = lib(StoreDataset::open(&path))?;
        *out = Box::into_raw(Box::new(YiStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`yi_store_open`].
#[no_mangle]
pub unsafe extern "C" fn yi_store_len(store: *const YiStore, len_out: *mut u64) -> YiStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        *out_ref(len_out, "len_out")? = s.inner.len() as u64;
        Ok(())
    })
}

/// Copies record `index` into `pixels` (`len` ≥ [`yi_image_len`]) and its
/// scaled star value (2..10) into `scaled_stars`.
///
/// # Safety
/// `store` must come from [`yi_store_open`]; buffers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_store_get(
    store: *mut YiStore,
    index: u64,
    pixels: *mut i8,
    len: usize,
    scaled_stars: *mut u8,
) -> YiStatus {
    guard(|| {
        let s = store.as_mut().ok_or_else(|| null("store"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if len < PIXELS {
            return Err(invalid(format!("len {len} < {PIXELS}")));
        }
        let i = usize::try_from(index)
            .ok()
            .filter(|&i| i < s.inner.len())
            .ok_or_else(|| {
                invalid(format!(
                    "index {index} out of range for {} records",
                    s.inner.len()
                ))
            })?;
        let stars = out_ref(scaled_stars, "scaled_stars")?;
        lib(s
            .inner
            .pixels_into(i, std::slice::from_raw_parts_mut(pixels, PIXELS)))?;
        *stars = s.inner.stars(i).scaled();
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`yi_store_open`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn yi_store_free(store: *mut YiStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// A trained classifier loaded from a checkpoint.
pub struct YiClassifier {
    model: Model<f32>,
}

/// Loads a `best.ywts` checkpoint (its `.meta` sidecar must sit next to it).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_classifier_load(
    path: *const c_char,
    out: *mut *mut YiClassifier,
) -> YiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = path_arg(path, "path")?;
        let ck = lib(trainer::load_checkpoint(&path))?;
        *out = Box::into_raw(Box::new(YiClassifier { model: ck.model }));
        Ok(())
    })
}

/// Number of head outputs: 9, 3, or 1 for regression.
///
/// # Safety
/// `clf` must come from [`yi_classifier_load`].
#[no_mangle]
pub unsafe extern "C" fn yi_classifier_outputs(
    clf: *const YiClassifier,
    out: *mut usize,
) -> YiStatus {
    guard(|| {
        let c = clf.as_ref().ok_or_else(|| null("classifier"))?;
        *out_ref(out, "out")? = c.model.net.head.outputs();
        Ok(())
    })
}

/// Eval-mode scores for one normalized image. Writes
/// [`yi_classifier_outputs`] values into `scores` and the predicted class
/// (argmax, or the rounded scaled star for regression) into `predicted`.
///
/// # Safety
/// `clf` must come from [`yi_classifier_load`]; `pixels` must hold `len`
/// readable values and `scores` `scores_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn yi_classifier_predict(
    clf: *mut YiClassifier,
    pixels: *const i8,
    len: usize,
    scores: *mut f32,
    scores_len: usize,
    predicted: *mut usize,
) -> YiStatus {
    guard(|| {
        let c = clf.as_mut().ok_or_else(|| null("classifier"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        if len != PIXELS {
            return Err(invalid(format!("len {len} != {PIXELS}")));
        }
        let k = c.model.net.head.outputs();
        if scores_len < k {
            return Err(invalid(format!("scores_len {scores_len} < {k}")));
        }
        let pred = out_ref(predicted, "predicted")?;
        let mut ds = trainer::MemoryDataset::new(vec![imageprep::StoreRecord {
            pixels: std::slice::from_raw_parts(pixels, PIXELS).to_vec(),
            stars: ingest::StarClass::from_scaled(2).expect("2 is legal"),
        }]);
        let x: Tensor<f32> = lib(trainer::batch_tensor(&mut ds, &[0]))?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = lib(c.model.forward(&mut g, xv, false))?;
        let row = g.value(y).data();
        std::slice::from_raw_parts_mut(scores, k).copy_from_slice(row);
        *pred = if k == 1 {
            trainer::round_to_scaled(row[0] as f64) as usize
        } else {
            trainer::argmax(row)
        };
        Ok(())
    })
}

/// # Safety
/// `clf` must come from [`yi_classifier_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn yi_classifier_free(clf: *mut YiClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// A GAN checkpoint.
pub struct YiGan {
    pair: GanPair<f32>,
}

/// Loads a `ckpt_NNNN.ywts` GAN checkpoint (with its `.meta` file).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yi_gan_load(path: *const c_char, out: *mut *mut YiGan) -> YiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = path_arg(path, "path")?;
        let (pair, _) = lib(gan::load_gan_checkpoint(&path))?;
        *out = Box::into_raw(Box::new(YiGan { pair }));
        Ok(())
    })
}

/// Writes a PNG grid of `count` samples drawn with noise seed `seed`.
///
/// # Safety
/// `gan` must come from [`yi_gan_load`]; `out_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn yi_gan_sample_png(
    gan: *mut YiGan,
    count: usize,
    seed: u64,
    out_path: *const c_char,
) -> YiStatus {
    guard(|| {
        let g = gan.as_mut().ok_or_else(|| null("gan"))?;
        let path = path_arg(out_path, "out_path")?;
        let img = lib(gan::sample_grid(&mut g.pair, count, seed))?;
        lib(yelpimg::plot::save_png(&img, &path))
    })
}

/// # Safety
/// `gan` must come from [`yi_gan_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn yi_gan_free(gan: *mut YiGan) {
    if !gan.is_null() {
        drop(Box::from_raw(gan));
    }
}
