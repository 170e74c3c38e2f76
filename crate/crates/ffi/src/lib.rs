//! C interface to robayes.
//!
//! Every fallible function returns a [`RobayesStatus`]; on failure the
//! message is available from [`robayes_last_error`] on the same thread.
//! Results are written through caller-owned out-pointers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use robayes::experiment::{run_experiment, ExperimentConfig, RunOptions};
use robayes::metrics;
use robayes::objectives::{mt_loss_from_probs, t_log_loss};
use robayes::variational::{kl_value, Checkpoint, GaussianPosterior, GaussianPrior};
use robayes::{Error, Tensor};

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RobayesStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid configuration or unparsable JSON.
    Config = 2,
    /// Training aborted on a non-finite objective.
    Training = 3,
    /// A precondition on the arguments was violated.
    Contract = 4,
    ShapeMismatch = 5,
    Io = 6,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Opaque handle to a mean-field Gaussian posterior.
pub struct RobayesPosterior {
    inner: GaussianPosterior,
    prior: GaussianPrior,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RobayesStatus {
    match e {
        Error::Config(_) | Error::Json(_) => RobayesStatus::Config,
        Error::Training { .. } => RobayesStatus::Training,
        Error::Contract(_) => RobayesStatus::Contract,
        Error::ShapeMismatch { .. } => RobayesStatus::ShapeMismatch,
        Error::Io(_) => RobayesStatus::Io,
    }
}

struct Fail(RobayesStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any error and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RobayesStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RobayesStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RobayesStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(RobayesStatus::NullPointer, format!("{name} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            RobayesStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

/// A zero-length slice may come with a null pointer.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out(out: *mut f64, v: f64) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = v;
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Fail> {
    Ok(Tensor::matrix(rows, cols, data.to_vec())?)
}

fn product(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .ok_or_else(|| Fail(RobayesStatus::Contract, "array size overflows".into()))
}

/// Message of the last failure on this thread, or null. Valid until the next call that fails.
#[no_mangle]
pub extern "C" fn robayes_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn robayes_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `checkpoint.json` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_load(
    path: *const c_char,
    out: *mut *mut RobayesPosterior,
) -> RobayesStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Fail(RobayesStatus::Io, format!("{path}: {e}")))?;
        from_json(&text, out)
    })
}

/// Parses checkpoint JSON from memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_from_json(
    json: *const c_char,
    out: *mut *mut RobayesPosterior,
) -> RobayesStatus {
    guard(|| from_json(c_str(json, "json")?, out))
}

unsafe fn from_json(text: &str, out: *mut *mut RobayesPosterior) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let ck = Checkpoint::from_json(text)?;
    let handle = RobayesPosterior {
        inner: ck.posterior()?,
        prior: ck.prior.clone(),
    };
    *out = Box::into_raw(Box::new(handle));
    Ok(())
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_free(handle: *mut RobayesPosterior) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of coordinates, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_dim(handle: *const RobayesPosterior) -> usize {
    handle.as_ref().map_or(0, |h| h.inner.dim())
}

unsafe fn copy_vec(
    handle: *const RobayesPosterior,
    out: *mut f64,
    len: usize,
    f: impl Fn(&RobayesPosterior) -> Vec<f64>,
) -> RobayesStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let v = f(h);
        if len != v.len() {
            return Err(Fail(
                RobayesStatus::ShapeMismatch,
                format!(
                    "buffer has length {len}, posterior has dimension {}",
                    v.len()
                ),
            ));
        }
        output(out, len, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Copies the means into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_mu(
    handle: *const RobayesPosterior,
    out: *mut f64,
    len: usize,
) -> RobayesStatus {
    copy_vec(handle, out, len, |h| h.inner.mu().to_vec())
}

/// Copies the standard deviations `softplus(rho)`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_sigma(
    handle: *const RobayesPosterior,
    out: *mut f64,
    len: usize,
) -> RobayesStatus {
    copy_vec(handle, out, len, |h| h.inner.sigma())
}

/// Writes `mu + sigma * eps` for caller-supplied standard-normal `eps`.
///
/// # Safety
/// `eps` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_draw(
    handle: *const RobayesPosterior,
    eps: *const f64,
    out: *mut f64,
    len: usize,
) -> RobayesStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let e = input(eps, len, "eps")?;
        let theta = h.inner.draw(e)?;
        output(out, len, "out")?.copy_from_slice(&theta);
        Ok(())
    })
}

/// `KL(q || prior)` using the prior stored in the checkpoint.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn robayes_posterior_kl(
    handle: *const RobayesPosterior,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_out(out, kl_value(h.inner.mu(), &h.inner.sigma(), &h.prior)?)
    })
}

/// `KL(N(mu, diag sigma^2) || N(prior_mean, prior_variance I))`.
///
/// # Safety
/// `mu` and `sigma` must hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_kl_gaussian(
    mu: *const f64,
    sigma: *const f64,
    d: usize,
    prior_mean: f64,
    prior_variance: f64,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let mu = input(mu, d, "mu")?;
        let sigma = input(sigma, d, "sigma")?;
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Fail(
                RobayesStatus::Contract,
                "sigma must be positive".into(),
            ));
        }
        let prior = GaussianPrior::isotropic(prior_mean, prior_variance)?;
        write_out(out, kl_value(mu, sigma, &prior)?)
    })
}

/// `-log_t(p)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn robayes_t_log_loss(p: f64, t: f64, out: *mut f64) -> RobayesStatus {
    guard(|| write_out(out, t_log_loss(p, t)?))
}

/// (m, t) training loss from an `m × n` row-major matrix of per-model probabilities.
///
/// # Safety
/// `probs` must hold `m * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_mt_loss(
    probs: *const f64,
    m: usize,
    n: usize,
    t: f64,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let p = input(probs, product(m, n)?, "probs")?;
        let rows: Vec<Vec<f64>> = p.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        write_out(out, mt_loss_from_probs(&rows, t)?)
    })
}

/// Expected calibration error of `n × k` predictive probabilities with `bins` bins.
///
/// # Safety
/// `probs` must hold `n * k` doubles and `labels` `n` entries.
#[no_mangle]
pub unsafe extern "C" fn robayes_ece(
    probs: *const f64,
    n: usize,
    k: usize,
    labels: *const usize,
    bins: usize,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let p = matrix(input(probs, product(n, k)?, "probs")?, n, k)?;
        let l = input(labels, n, "labels")?;
        write_out(out, metrics::ece(&p, l, bins)?)
    })
}

/// Fraction of rows whose argmax matches the label.
///
/// # Safety
/// `probs` must hold `n * k` doubles and `labels` `n` entries.
#[no_mangle]
pub unsafe extern "C" fn robayes_accuracy(
    probs: *const f64,
    n: usize,
    k: usize,
    labels: *const usize,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let p = matrix(input(probs, product(n, k)?, "probs")?, n, k)?;
        let l = input(labels, n, "labels")?;
        write_out(out, metrics::accuracy(&p, l)?)
    })
}

/// AUROC with in-distribution scores expected to be higher.
///
/// # Safety
/// `id` and `ood` must hold `n_id` and `n_ood` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_auroc(
    id: *const f64,
    n_id: usize,
    ood: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        write_out(
            out,
            metrics::auroc(input(id, n_id, "id")?, input(ood, n_ood, "ood")?)?,
        )
    })
}

/// Squared MMD between `nx × dim` and `ny × dim` samples.
///
/// # Safety
/// `x` and `y` must hold `nx * dim` and `ny * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_mmd(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    dim: usize,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let xt = matrix(input(x, product(nx, dim)?, "x")?, nx, dim)?;
        let yt = matrix(input(y, product(ny, dim)?, "y")?, ny, dim)?;
        write_out(out, metrics::mmd(&xt, &yt)?)
    })
}

/// Mean negative log of predictive densities.
///
/// # Safety
/// `densities` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_nll(
    densities: *const f64,
    n: usize,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| write_out(out, metrics::nll(input(densities, n, "densities")?)?))
}

/// Mean error norm between `n × dim` predictions and targets; squared norms when `squared`.
///
/// # Safety
/// `pred` and `targets` must each hold `n * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn robayes_mse(
    pred: *const f64,
    targets: *const f64,
    n: usize,
    dim: usize,
    squared: bool,
    out: *mut f64,
) -> RobayesStatus {
    guard(|| {
        let len = product(n, dim)?;
        let p = matrix(input(pred, len, "pred")?, n, dim)?;
        let t = matrix(input(targets, len, "targets")?, n, dim)?;
        write_out(out, metrics::mse(&p, &t, squared)?)
    })
}

/// Runs every cell and seed of a config file, writing outputs under `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn robayes_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> RobayesStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(c_str(config_path, "config_path")?.as_ref())?;
        let opts = RunOptions {
            out: PathBuf::from(c_str(out_dir, "out_dir")?),
            seed_override: None,
            threads: None,
        };
        run_experiment(&cfg, &opts)?;
        Ok(())
    })
}
