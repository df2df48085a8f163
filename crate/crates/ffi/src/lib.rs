//! C ABI over the `fedproxy` library.
//!
//! Conventions:
//! - Every fallible function returns an [`FpxStatus`]; results go through
//!   out-pointers, which are left untouched on failure.
//! - On failure, [`fpx_last_error`] returns a description for the calling
//!   thread. The pointer stays valid until the next failing call on that thread.
//! - Objects are opaque handles created by `*_load` / `*_from_values` /
//!   [`fpx_fuse`] and released by the matching `*_free`. Freeing NULL is a no-op.
//! - Vectors of task vectors are passed row-major, `k` rows of `dim` doubles.
//! - Panics never cross the boundary; they surface as `FPX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fedproxy::checkpoint::{load_checkpoint, load_correspondence, save_checkpoint};
use fedproxy::compression::Correspondence;
use fedproxy::fedopt::{analyze_round, conflict_scores, hties_merge};
use fedproxy::fusion::plug_in_fuse;
use fedproxy::harness::{run_pipeline, save_run, RunConfig};
use fedproxy::params::cosine_similarity;
use fedproxy::{Error, FlatParams, TaskVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpxStatus {
    Ok = 0,
    /// A required pointer was NULL or a string was not UTF-8.
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Diverged = 5,
    Numerical = 6,
    Format = 7,
    Io = 8,
    Panic = 9,
}

/// Flat parameter vector with its layout.
pub struct FpxParams(FlatParams);

/// Proxy-to-backbone parameter correspondence.
pub struct FpxCorrespondence(Correspondence);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FpxStatus {
    match err {
        Error::InvalidArgument(_) => FpxStatus::InvalidArgument,
        Error::Config(_) => FpxStatus::Config,
        Error::Dimension(_) => FpxStatus::Dimension,
        Error::Diverged { .. } => FpxStatus::Diverged,
        Error::Numerical(_) => FpxStatus::Numerical,
        Error::Format(_) | Error::UnsupportedVersion { .. } => FpxStatus::Format,
        Error::Io(_) => FpxStatus::Io,
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

type Res<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> Res<()>) -> FpxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpxStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is NULL or not valid UTF-8"));
            FpxStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            FpxStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Res<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Failure::Null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Res<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Res<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &'static str) -> Res<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Res<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(v);
    Ok(())
}

fn checked_len(k: usize, dim: usize) -> Res<usize> {
    k.checked_mul(dim)
        .ok_or_else(|| Error::InvalidArgument(format!("{k} × {dim} overflows")).into())
}

unsafe fn task_vectors(tvs: *const f64, k: usize, dim: usize) -> Res<Vec<TaskVector>> {
    let all = slice_arg(tvs, checked_len(k, dim)?, "task_vectors")?;
    let base = FlatParams::from_vec(vec![0.0; dim]);
    (0..k)
        .map(|i| {
            Ok(TaskVector {
                delta: base.with_values(all[i * dim..(i + 1) * dim].to_vec())?,
                client_id: i,
                round: 0,
            })
        })
        .collect()
}

/// Description of the last failure on this thread, or NULL if none.
#[no_mangle]
pub extern "C" fn fpx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fpx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `len` doubles into a new flat-layout parameter handle.
///
/// # Safety
/// `values` must point to `len` readable doubles (may be NULL when `len` is 0);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_from_values(values: *const f64, len: usize, out: *mut *mut FpxParams) -> FpxStatus {
    guard(|| {
        let v = slice_arg(values, len, "values")?.to_vec();
        let h = Box::into_raw(Box::new(FpxParams(FlatParams::from_vec(v))));
        put(out, h, "out").inspect_err(|_| drop(Box::from_raw(h)))
    })
}

/// Reads a parameter checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_load(path: *const c_char, out: *mut *mut FpxParams) -> FpxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = load_checkpoint(path_arg(path, "path")?)?;
        out.write(Box::into_raw(Box::new(FpxParams(p))));
        Ok(())
    })
}

/// Writes a parameter checkpoint.
///
/// # Safety
/// `params` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_save(params: *const FpxParams, path: *const c_char) -> FpxStatus {
    guard(|| {
        let p = ref_arg(params, "params")?;
        save_checkpoint(&p.0, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of scalars in `params`; 0 for NULL.
///
/// # Safety
/// `params` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_len(params: *const FpxParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the values into `out`, which must hold exactly `fpx_params_len` doubles.
///
/// # Safety
/// `params` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_copy_values(params: *const FpxParams, out: *mut f64, len: usize) -> FpxStatus {
    guard(|| {
        let p = ref_arg(params, "params")?;
        if len != p.0.dim() {
            return Err(Error::Dimension(format!("buffer holds {len}, params have {}", p.0.dim())).into());
        }
        out_slice(out, len, "out")?.copy_from_slice(p.0.values());
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpx_params_free(params: *mut FpxParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Reads a correspondence file written by the `compress` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_correspondence_load(path: *const c_char, out: *mut *mut FpxCorrespondence) -> FpxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let c = load_correspondence(path_arg(path, "path")?)?;
        out.write(Box::into_raw(Box::new(FpxCorrespondence(c))));
        Ok(())
    })
}

/// Fraction of backbone parameters outside the proxy.
///
/// # Safety
/// `corr` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_correspondence_alpha(corr: *const FpxCorrespondence, out: *mut f64) -> FpxStatus {
    guard(|| put(out, ref_arg(corr, "corr")?.0.alpha(), "out"))
}

/// # Safety
/// `corr` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpx_correspondence_free(corr: *mut FpxCorrespondence) {
    if !corr.is_null() {
        drop(Box::from_raw(corr));
    }
}

/// Writes the proxy values into a copy of the backbone at the corresponding
/// positions. The result is a new handle.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_fuse(
    backbone: *const FpxParams,
    proxy: *const FpxParams,
    corr: *const FpxCorrespondence,
    out: *mut *mut FpxParams,
) -> FpxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let fused = plug_in_fuse(
            &ref_arg(backbone, "backbone")?.0,
            &ref_arg(proxy, "proxy")?.0,
            &ref_arg(corr, "corr")?.0,
        )?;
        out.write(Box::into_raw(Box::new(FpxParams(fused))));
        Ok(())
    })
}

/// Cosine similarity of two vectors of equal length; 0 if either is zero.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> FpxStatus {
    guard(|| {
        let a = FlatParams::from_vec(slice_arg(a, len, "a")?.to_vec());
        let b = FlatParams::from_vec(slice_arg(b, len, "b")?.to_vec());
        put(out, cosine_similarity(&a, &b)?, "out")
    })
}

/// Per-dimension sign conflict of `k` task vectors, written to `out[dim]`.
///
/// # Safety
/// `tvs` must point to `k·dim` doubles and `out` to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fpx_conflict_scores(tvs: *const f64, k: usize, dim: usize, out: *mut f64) -> FpxStatus {
    guard(|| {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one task vector".into()).into());
        }
        let all = slice_arg(tvs, checked_len(k, dim)?, "task_vectors")?;
        let rows: Vec<&[f64]> = all.chunks_exact(dim.max(1)).take(k).collect();
        let scores = conflict_scores(&rows);
        out_slice(out, dim, "out")?.copy_from_slice(&scores[..dim]);
        Ok(())
    })
}

/// Server analysis of one round: heterogeneity `h[k]`, aggregation weights
/// `w[k]` and conflict `c[dim]`. Any output pointer may be NULL to skip it.
///
/// # Safety
/// `tvs` must point to `k·dim` doubles; non-NULL outputs must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn fpx_analyze_round(
    tvs: *const f64,
    k: usize,
    dim: usize,
    heterogeneity: *mut f64,
    weights: *mut f64,
    conflict: *mut f64,
) -> FpxStatus {
    guard(|| {
        let vectors = task_vectors(tvs, k, dim)?;
        let a = analyze_round(&vectors, &FlatParams::from_vec(vec![0.0; dim]))?;
        for (dst, src) in [(heterogeneity, &a.heterogeneity), (weights, &a.weights), (conflict, &a.conflict)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, src.len()).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Dominance-rule merge of already sparsified task vectors into `out[dim]`.
///
/// # Safety
/// `tvs` must point to `k·dim` doubles, `weights` to `k`, `out` to `dim` writable.
#[no_mangle]
pub unsafe extern "C" fn fpx_hties_merge(
    tvs: *const f64,
    k: usize,
    dim: usize,
    weights: *const f64,
    rho: f64,
    eps: f64,
    out: *mut f64,
) -> FpxStatus {
    guard(|| {
        let vectors = task_vectors(tvs, k, dim)?;
        let w = slice_arg(weights, k, "weights")?;
        let delta = hties_merge(&vectors, w, rho, eps)?;
        out_slice(out, dim, "out")?.copy_from_slice(delta.values());
        Ok(())
    })
}

/// Runs the full pipeline for a TOML (or `.json`) config and writes every
/// artifact to `out_dir`. The `FEDPROXY_SEED` environment override applies.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fpx_run_pipeline(config_path: *const c_char, out_dir: *const c_char) -> FpxStatus {
    guard(|| {
        let cfg = RunConfig::load(path_arg(config_path, "config_path")?)?;
        let dir = path_arg(out_dir, "out_dir")?;
        let run = run_pipeline(&cfg)?;
        save_run(&run, dir)?;
        Ok(())
    })
}
