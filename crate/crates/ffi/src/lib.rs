//! C ABI over `dlmlab`.
//!
//! Conventions:
//! - Every fallible function returns a [`DlmStatus`]; results go through out
//!   pointers, which are left untouched on failure.
//! - Objects are opaque handles created by `dlm_*_new`/`dlm_*_load`-style
//!   functions and released with the matching `dlm_*_free`.
//! - After a failure, [`dlm_last_error`] describes it. The message belongs
//!   to the calling thread and stays valid until its next failing call.
//! - Panics never cross the boundary; they surface as `DLM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dlmlab::conjugate::{reference_proposition1, ConjugateModel};
use dlmlab::io::{checkpoint, config::RunConfig};
use dlmlab::objectives::smoothed_log;
use dlmlab::surface::interpolate;
use dlmlab::trainer::Checkpoint;
use dlmlab::variational::{kl_to_prior, project, BoundSpec, MeanFieldGaussian, PriorSpec};
use dlmlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad config, checkpoint or dataset contents.
    Validation = 3,
    /// Non-finite values during a computation.
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// A mean-field Gaussian posterior.
pub struct DlmPosterior {
    inner: MeanFieldGaussian,
}

/// A loaded training checkpoint.
pub struct DlmCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

fn status_of(e: &Error) -> DlmStatus {
    match e {
        _ if e.is_numerical() => DlmStatus::Numerical,
        Error::Io { .. } => DlmStatus::Io,
        Error::InvalidArgument(_) | Error::Dimension(_) | Error::Shape { .. } => DlmStatus::InvalidArgument,
        _ => DlmStatus::Validation,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DlmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DlmStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed(q: MeanFieldGaussian) -> *mut DlmPosterior {
    Box::into_raw(Box::new(DlmPosterior { inner: q }))
}

/// The calling thread's last error message; never NULL.
#[no_mangle]
pub extern "C" fn dlm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a posterior from means and raw scales `rho` (`σ = softplus(ρ)`).
///
/// # Safety
/// `mu` and `rho` must point to `dim` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_new(
    mu: *const f64,
    rho: *const f64,
    dim: usize,
    out: *mut *mut DlmPosterior,
) -> DlmStatus {
    guard(|| {
        let q = MeanFieldGaussian::new(slice(mu, dim, "mu")?.to_vec(), slice(rho, dim, "rho")?.to_vec())?;
        put(out, boxed(q), "out")
    })
}

/// Creates a posterior from means and variances.
///
/// # Safety
/// As for [`dlm_posterior_new`].
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_from_mean_variance(
    mu: *const f64,
    variance: *const f64,
    dim: usize,
    out: *mut *mut DlmPosterior,
) -> DlmStatus {
    guard(|| {
        let q = MeanFieldGaussian::from_mean_variance(
            slice(mu, dim, "mu")?.to_vec(),
            slice(variance, dim, "variance")?,
        )?;
        put(out, boxed(q), "out")
    })
}

/// Releases a posterior. NULL is ignored.
///
/// # Safety
/// `q` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_free(q: *mut DlmPosterior) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Number of parameters; 0 for NULL.
///
/// # Safety
/// `q` must be NULL or a live posterior.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_dim(q: *const DlmPosterior) -> usize {
    q.as_ref().map_or(0, |q| q.inner.dim())
}

/// Copies `μ` into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_mean(q: *const DlmPosterior, out: *mut f64, len: usize) -> DlmStatus {
    guard(|| copy_out(obj(q, "q")?.inner.mu(), out, len))
}

/// Copies `σ²` into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_variance(q: *const DlmPosterior, out: *mut f64, len: usize) -> DlmStatus {
    guard(|| copy_out(&obj(q, "q")?.inner.variance(), out, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Error::Dimension(format!("buffer holds {len}, posterior has {}", src.len())).into());
    }
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
    Ok(())
}

/// `KL(q ‖ N(0, prior_variance·I))`.
///
/// # Safety
/// `q` must be a live posterior and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_kl_to_prior(q: *const DlmPosterior, prior_variance: f64, out: *mut f64) -> DlmStatus {
    guard(|| {
        let prior = PriorSpec::new(prior_variance)?;
        put(out, kl_to_prior(&obj(q, "q")?.inner, &prior), "out")
    })
}

/// Projects onto `‖μ‖₂ ≤ b_m`, `σ² ≤ b_v` and returns a new posterior.
///
/// # Safety
/// `q` must be a live posterior and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_project(
    q: *const DlmPosterior,
    b_m: f64,
    b_v: f64,
    out: *mut *mut DlmPosterior,
) -> DlmStatus {
    guard(|| {
        let bounds = BoundSpec::new(b_m, b_v)?;
        put(out, boxed(project(&obj(q, "q")?.inner, &bounds)), "out")
    })
}

/// `(1−α)·a + α·b` in mean and variance.
///
/// # Safety
/// `a`, `b` must be live posteriors and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_interpolate(
    a: *const DlmPosterior,
    b: *const DlmPosterior,
    alpha: f64,
    out: *mut *mut DlmPosterior,
) -> DlmStatus {
    guard(|| {
        let q = interpolate(&obj(a, "a")?.inner, &obj(b, "b")?.inner, alpha)?;
        put(out, boxed(q), "out")
    })
}

/// `ln((1−a)·exp(logp) + a)` for `0 ≤ a < 1`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_smoothed_log(logp: f64, a: f64, out: *mut f64) -> DlmStatus {
    guard(|| put(out, smoothed_log(logp, a)?, "out"))
}

/// Exact DLM and ELBO per-example losses of `q` on the Gaussian-mean model
/// `y = θ + N(0, noise_variance·I)`.
///
/// # Safety
/// `y` must point to `dim` doubles matching the posterior's dimension; the
/// out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_conjugate_exact_losses(
    q: *const DlmPosterior,
    y: *const f64,
    dim: usize,
    noise_variance: f64,
    dlm_out: *mut f64,
    elbo_out: *mut f64,
) -> DlmStatus {
    guard(|| {
        let q = &obj(q, "q")?.inner;
        let y = slice(y, dim, "y")?;
        let model = ConjugateModel::new(dim, noise_variance, Vec::new())?;
        let dlm = model.exact_dlm_loss(q, y)?;
        let elbo = model.exact_elbo_loss(q, y)?;
        put(dlm_out, dlm, "dlm_out")?;
        put(elbo_out, elbo, "elbo_out")
    })
}

/// The reference regularized-versus-constrained grid check at `eta`.
/// Writes `A_η` and whether the two problems agree (1) or not (0).
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_prop1_check(eta: f64, a_eta_out: *mut f64, pass_out: *mut i32) -> DlmStatus {
    guard(|| {
        let r = reference_proposition1(eta)?;
        put(a_eta_out, r.a_eta, "a_eta_out")?;
        put(pass_out, r.pass as i32, "pass_out")
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_checkpoint_load(path_str: *const c_char, out: *mut *mut DlmCheckpoint) -> DlmStatus {
    guard(|| {
        let c = checkpoint::read(&path(path_str, "path")?)?;
        put(out, Box::into_raw(Box::new(DlmCheckpoint { inner: c })), "out")
    })
}

/// Releases a checkpoint. NULL is ignored.
///
/// # Safety
/// `c` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlm_checkpoint_free(c: *mut DlmCheckpoint) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// A copy of the checkpoint's posterior, owned by the caller.
///
/// # Safety
/// `c` must be a live checkpoint and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_checkpoint_posterior(c: *const DlmCheckpoint, out: *mut *mut DlmPosterior) -> DlmStatus {
    guard(|| put(out, boxed(obj(c, "checkpoint")?.inner.posterior.clone()), "out"))
}

/// Seed and completed epochs of a checkpoint.
///
/// # Safety
/// `c` must be a live checkpoint; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_checkpoint_info(
    c: *const DlmCheckpoint,
    seed_out: *mut u64,
    epochs_out: *mut usize,
) -> DlmStatus {
    guard(|| {
        let c = &obj(c, "checkpoint")?.inner;
        put(seed_out, c.seed, "seed_out")?;
        put(epochs_out, c.epochs_completed, "epochs_out")
    })
}

/// Trains as described by the config file and writes the run directory
/// (`config.cfg`, `trajectory.csv`, `timing.csv`, `checkpoint.json`).
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dlm_train(config_path: *const c_char, out_dir: *const c_char) -> DlmStatus {
    guard(|| {
        let cfg = RunConfig::load(&path(config_path, "config_path")?)?;
        dlmlab::io::train_run(&cfg, &path(out_dir, "out_dir")?)?;
        Ok(())
    })
}
