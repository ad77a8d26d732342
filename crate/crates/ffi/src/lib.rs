//! C interface to the serial hybrid samplers.
//!
//! Every function returns a [`CrmhStatus`]; on failure the message is kept
//! per thread and read back with [`crmh_last_error_message`]. Samplers are
//! opaque handles created by one of the `*_new` functions and released with
//! [`crmh_sampler_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crmh::conjugate::{GaussFixedVarPrior, LinearGaussianModel};
use crmh::dpmm::MixtureHybrid;
use crmh::ibp::IbpHybrid;
use crmh::pyhdp::HdpHybrid;
use crmh::{CrmhError, RngStream, Rows};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrmhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Degenerate = 3,
    CorruptState = 4,
    TooLarge = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Other = 8,
}

/// Per-iteration summary written by [`crmh_sampler_step`]. Optional values
/// are NaN when the model does not define them.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CrmhMetrics {
    pub train_ll: f64,
    pub test_ll: f64,
    pub num_components: usize,
    pub b_star: f64,
    pub extra: f64,
}

enum Inner {
    Mixture(MixtureHybrid),
    Ibp(IbpHybrid),
    Hdp(HdpHybrid),
}

/// Opaque sampler handle.
pub struct CrmhSampler {
    inner: Inner,
    n: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CrmhError) -> CrmhStatus {
    match e {
        CrmhError::Param(_) | CrmhError::Config(_) => CrmhStatus::InvalidParameter,
        CrmhError::Degenerate => CrmhStatus::Degenerate,
        CrmhError::State(_) | CrmhError::Protocol(_) => CrmhStatus::CorruptState,
        CrmhError::Size(_) => CrmhStatus::TooLarge,
        _ => CrmhStatus::Other,
    }
}

struct Fail(CrmhStatus, String);

impl From<CrmhError> for Fail {
    fn from(e: CrmhError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrmhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CrmhStatus::Ok
        }
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
            set_error(format!("panic: {msg}"));
            CrmhStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CrmhStatus::NullPointer, format!("{what} is null"))
}

/// Copy an `n × dim` row-major matrix out of caller memory.
unsafe fn rows(data: *const f64, n: usize, dim: usize) -> Result<Rows, Fail> {
    if dim == 0 {
        return Err(Fail(CrmhStatus::InvalidParameter, "dim must be positive".into()));
    }
    if n == 0 {
        return Ok(Rows::empty(dim));
    }
    if data.is_null() {
        return Err(null("data"));
    }
    let len = n
        .checked_mul(dim)
        .ok_or_else(|| Fail(CrmhStatus::TooLarge, "n * dim overflows".into()))?;
    // SAFETY: the caller promises `data` points at n*dim readable doubles.
    let v = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
    Ok(Rows::new(dim, v)?)
}

unsafe fn publish(out: *mut *mut CrmhSampler, s: CrmhSampler) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(s)) };
    Ok(())
}

unsafe fn handle<'a>(s: *mut CrmhSampler) -> Result<&'a mut CrmhSampler, Fail> {
    // SAFETY: a non-null handle came from one of the constructors.
    unsafe { s.as_mut() }.ok_or_else(|| null("sampler"))
}

/// Hybrid Dirichlet-process mixture with a Gaussian base measure
/// `N(0, prior_var·I)` and isotropic noise `obs_var`. `test` may be null
/// when `n_test` is 0.
///
/// # Safety
/// `train` must hold `n·dim` doubles, `test` `n_test·dim`, and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn crmh_dpmm_new(
    train: *const f64,
    n: usize,
    test: *const f64,
    n_test: usize,
    dim: usize,
    alpha: f64,
    prior_var: f64,
    obs_var: f64,
    seed: u64,
    out: *mut *mut CrmhSampler,
) -> CrmhStatus {
    unsafe { crmh_pymm_new(train, n, test, n_test, dim, alpha, 0.0, prior_var, obs_var, seed, out) }
}

/// Pitman-Yor version of [`crmh_dpmm_new`] with discount `sigma` in [0, 1).
///
/// # Safety
/// As for [`crmh_dpmm_new`].
#[no_mangle]
pub unsafe extern "C" fn crmh_pymm_new(
    train: *const f64,
    n: usize,
    test: *const f64,
    n_test: usize,
    dim: usize,
    alpha: f64,
    sigma: f64,
    prior_var: f64,
    obs_var: f64,
    seed: u64,
    out: *mut *mut CrmhSampler,
) -> CrmhStatus {
    guard(|| {
        let (x, t) = unsafe { (rows(train, n, dim)?, rows(test, n_test, dim)?) };
        let prior = GaussFixedVarPrior::isotropic(dim, 0.0, prior_var, obs_var)?;
        let h = MixtureHybrid::new(x, t, prior, alpha, sigma, &RngStream::new(seed, 0))?;
        unsafe {
            publish(
                out,
                CrmhSampler {
                    inner: Inner::Mixture(h),
                    n,
                },
            )
        }
    })
}

/// Hybrid linear-Gaussian latent feature model under a beta-Bernoulli
/// process with mass `alpha` and concentration `c`. Every row starts with
/// one shared feature.
///
/// # Safety
/// As for [`crmh_dpmm_new`].
#[no_mangle]
pub unsafe extern "C" fn crmh_ibp_new(
    train: *const f64,
    n: usize,
    test: *const f64,
    n_test: usize,
    dim: usize,
    alpha: f64,
    c: f64,
    feature_var: f64,
    noise_var: f64,
    seed: u64,
    out: *mut *mut CrmhSampler,
) -> CrmhStatus {
    guard(|| {
        let (x, t) = unsafe { (rows(train, n, dim)?, rows(test, n_test, dim)?) };
        let model = LinearGaussianModel::new(feature_var, noise_var, dim)?;
        let h = IbpHybrid::new(x, t, model, alpha, c, true, &RngStream::new(seed, 0))?;
        unsafe {
            publish(
                out,
                CrmhSampler {
                    inner: Inner::Ibp(h),
                    n,
                },
            )
        }
    })
}

/// Hybrid HDP mixture; `groups[i]` is the restaurant of row `i`.
///
/// # Safety
/// As for [`crmh_dpmm_new`]; `groups` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn crmh_hdp_new(
    train: *const f64,
    groups: *const u32,
    n: usize,
    test: *const f64,
    n_test: usize,
    dim: usize,
    alpha: f64,
    gamma: f64,
    prior_var: f64,
    obs_var: f64,
    seed: u64,
    out: *mut *mut CrmhSampler,
) -> CrmhStatus {
    guard(|| {
        let (x, t) = unsafe { (rows(train, n, dim)?, rows(test, n_test, dim)?) };
        if groups.is_null() && n > 0 {
            return Err(null("groups"));
        }
        let g = if n == 0 {
            Vec::new()
        } else {
            // SAFETY: checked non-null; the caller promises n entries.
            unsafe { std::slice::from_raw_parts(groups, n) }.to_vec()
        };
        let prior = GaussFixedVarPrior::isotropic(dim, 0.0, prior_var, obs_var)?;
        let h = HdpHybrid::new(x, &g, t, prior, alpha, gamma, &RngStream::new(seed, 0))?;
        unsafe {
            publish(
                out,
                CrmhSampler {
                    inner: Inner::Hdp(h),
                    n,
                },
            )
        }
    })
}

/// One sweep plus one global step. `metrics` may be null.
///
/// # Safety
/// `sampler` must be a live handle; `metrics`, if non-null, writable.
#[no_mangle]
pub unsafe extern "C" fn crmh_sampler_step(sampler: *mut CrmhSampler, metrics: *mut CrmhMetrics) -> CrmhStatus {
    guard(|| {
        let s = unsafe { handle(sampler)? };
        let m = match &mut s.inner {
            Inner::Mixture(h) => h.iterate()?,
            Inner::Ibp(h) => h.iterate()?,
            Inner::Hdp(h) => h.iterate()?,
        };
        if let Some(out) = unsafe { metrics.as_mut() } {
            *out = CrmhMetrics {
                train_ll: m.train_ll,
                test_ll: m.test_ll.unwrap_or(f64::NAN),
                num_components: m.num_components,
                b_star: m.b_star.unwrap_or(f64::NAN),
                extra: m.extra.unwrap_or(f64::NAN),
            };
        }
        Ok(())
    })
}

/// Number of instantiated clusters, dishes or features.
///
/// # Safety
/// `sampler` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crmh_sampler_num_components(sampler: *const CrmhSampler, out: *mut usize) -> CrmhStatus {
    guard(|| {
        let s = unsafe { handle(sampler as *mut _)? };
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = match &s.inner {
            Inner::Mixture(h) => h.num_components(),
            Inner::Ibp(h) => h.num_features(),
            Inner::Hdp(h) => h.num_components(),
        };
        Ok(())
    })
}

/// Cluster (or dish) of every training row, written to `out[0..n]`.
/// Feature models return `InvalidParameter`; use
/// [`crmh_sampler_features`].
///
/// # Safety
/// `sampler` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn crmh_sampler_labels(sampler: *const CrmhSampler, out: *mut usize, len: usize) -> CrmhStatus {
    guard(|| {
        let s = unsafe { handle(sampler as *mut _)? };
        let labels = match &s.inner {
            Inner::Mixture(h) => h.labels(),
            Inner::Hdp(h) => h.labels(),
            Inner::Ibp(_) => return Err(Fail(CrmhStatus::InvalidParameter, "feature models have no labels".into())),
        };
        if len < labels.len() {
            return Err(Fail(CrmhStatus::BufferTooSmall, format!("need {} slots, got {len}", labels.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller promises `len` slots.
        unsafe { ptr::copy_nonoverlapping(labels.as_ptr(), out, labels.len()) };
        Ok(())
    })
}

/// Binary feature matrix of a feature model, row-major `n × K` with `K`
/// from [`crmh_sampler_num_components`].
///
/// # Safety
/// `sampler` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn crmh_sampler_features(sampler: *const CrmhSampler, out: *mut u8, len: usize) -> CrmhStatus {
    guard(|| {
        let s = unsafe { handle(sampler as *mut _)? };
        let Inner::Ibp(h) = &s.inner else {
            return Err(Fail(CrmhStatus::InvalidParameter, "not a feature model".into()));
        };
        let z = h.z_matrix();
        let need = s.n * z.ncols();
        if len < need {
            return Err(Fail(CrmhStatus::BufferTooSmall, format!("need {need} bytes, got {len}")));
        }
        if need == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller promises `len` bytes.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for i in 0..s.n {
            for k in 0..z.ncols() {
                dst[i * z.ncols() + k] = (z[(i, k)] != 0.0) as u8;
            }
        }
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `sampler` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crmh_sampler_free(sampler: *mut CrmhSampler) {
    if !sampler.is_null() {
        // SAFETY: the handle came from Box::into_raw in a constructor.
        let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { Box::from_raw(sampler) })));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn crmh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crmh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
