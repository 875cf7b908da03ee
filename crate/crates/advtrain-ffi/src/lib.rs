//! C ABI for the advtrain library.
//!
//! Conventions:
//! - every function returns an [`AdvtStatus`] code; out-parameters are only
//!   written on `Ok`;
//! - models are opaque handles created by `advt_model_new_*` and released
//!   with `advt_model_free`;
//! - vectors are caller-allocated `double` buffers; matrices are row-major;
//! - `advt_last_error_message` returns a thread-local, NUL-terminated
//!   description of the most recent failure on this thread, valid until the
//!   next failing call.
//!
//! The header `include/advtrain.h` is generated by cbindgen at build time.

use advtrain::attack::{AttackSpec, Norm};
use advtrain::datagen::{CovarianceSpec, GenModel};
use advtrain::error::Error;
use ndarray::{Array1, Array2};
use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotSpd = 3,
    AttackUndefined = 4,
    SingularGram = 5,
    Diverged = 6,
    InternalError = 7,
}

/// Attack norms.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvtNorm {
    L2 = 0,
    Linf = 1,
}

impl From<AdvtNorm> for Norm {
    fn from(n: AdvtNorm) -> Norm {
        match n {
            AdvtNorm::L2 => Norm::L2,
            AdvtNorm::Linf => Norm::Linf,
        }
    }
}

/// Opaque generating-model handle.
pub struct AdvtModel {
    inner: GenModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> AdvtStatus {
    match err {
        Error::NotSpd { .. } => AdvtStatus::NotSpd,
        Error::AttackUndefined => AdvtStatus::AttackUndefined,
        Error::SingularGram { .. } => AdvtStatus::SingularGram,
        Error::Diverged { .. } => AdvtStatus::Diverged,
        _ => AdvtStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> AdvtStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

fn guarded(f: impl FnOnce() -> AdvtStatus) -> AdvtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            AdvtStatus::InternalError
        }
    }
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// ABI version of this header/library pair.
#[no_mangle]
pub extern "C" fn advt_abi_version() -> u32 {
    1
}

/// Message for the most recent error on this thread (empty string if none).
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn advt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a model with identity covariance.
///
/// # Safety
/// `theta0` must point to `d` readable doubles; `out` must be a valid
/// destination for one pointer.
#[no_mangle]
pub unsafe extern "C" fn advt_model_new_identity(
    theta0: *const f64,
    d: usize,
    noise_var: f64,
    out: *mut *mut AdvtModel,
) -> AdvtStatus {
    advt_model_new_diagonal(theta0, d, std::ptr::null(), noise_var, out)
}

/// Creates a model with diagonal covariance (`diag` may be NULL for the
/// identity).
///
/// # Safety
/// `theta0` (and `diag` when non-NULL) must point to `d` readable doubles;
/// `out` must be a valid destination for one pointer.
#[no_mangle]
pub unsafe extern "C" fn advt_model_new_diagonal(
    theta0: *const f64,
    d: usize,
    diag: *const f64,
    noise_var: f64,
    out: *mut *mut AdvtModel,
) -> AdvtStatus {
    guarded(|| {
        let (Some(t0), false) = (slice_arg(theta0, d), out.is_null()) else {
            set_error("theta0 and out must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let cov = match slice_arg(diag, d) {
            Some(dg) => CovarianceSpec::Diagonal(Array1::from_vec(dg.to_vec())),
            None => CovarianceSpec::Identity,
        };
        match GenModel::new(Array1::from_vec(t0.to_vec()), cov, noise_var) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(AdvtModel { inner: m }));
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Creates a model with a dense SPD covariance (row-major d x d).
///
/// # Safety
/// `theta0` must point to `d` doubles and `sigma` to `d*d` doubles; `out`
/// must be a valid destination for one pointer.
#[no_mangle]
pub unsafe extern "C" fn advt_model_new_dense(
    theta0: *const f64,
    d: usize,
    sigma: *const f64,
    noise_var: f64,
    out: *mut *mut AdvtModel,
) -> AdvtStatus {
    guarded(|| {
        let (Some(t0), Some(sg), false) = (
            slice_arg(theta0, d),
            slice_arg(sigma, d.saturating_mul(d)),
            out.is_null(),
        ) else {
            set_error("theta0, sigma, and out must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let sigma = match Array2::from_shape_vec((d, d), sg.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return AdvtStatus::InvalidArgument;
            }
        };
        match GenModel::new(
            Array1::from_vec(t0.to_vec()),
            CovarianceSpec::Dense(sigma),
            noise_var,
        ) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(AdvtModel { inner: m }));
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle (NULL is a no-op).
///
/// # Safety
/// `model` must be NULL or a pointer returned by a constructor and not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn advt_model_free(model: *mut AdvtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model dimension d (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn advt_model_dim(model: *const AdvtModel) -> usize {
    model.as_ref().map(|m| m.inner.dim()).unwrap_or(0)
}

/// v^2 = theta0' Sigma theta0 + sigma^2 (NaN for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn advt_model_v_squared(model: *const AdvtModel) -> f64 {
    model.as_ref().map(|m| m.inner.v_squared()).unwrap_or(f64::NAN)
}

/// Closed-form population adversarial risk of `theta` under the given norm;
/// writes the value and the value normalized by v^2.
///
/// # Safety
/// `model` must be a live handle; `theta` must point to `model`'s dimension
/// worth of doubles; output pointers must be valid or NULL (skipped).
#[no_mangle]
pub unsafe extern "C" fn advt_population_risk(
    model: *const AdvtModel,
    theta: *const f64,
    epsilon: f64,
    norm: AdvtNorm,
    out_value: *mut f64,
    out_normalized: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            set_error("model must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let Some(th) = slice_arg(theta, m.inner.dim()) else {
            set_error("theta must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        if epsilon < 0.0 || !epsilon.is_finite() {
            set_error("epsilon must be finite and >= 0");
            return AdvtStatus::InvalidArgument;
        }
        let th = Array1::from_vec(th.to_vec());
        let report = advtrain::risk::population_risk(th.view(), &m.inner, epsilon, norm.into());
        if !out_value.is_null() {
            *out_value = report.value;
        }
        if !out_normalized.is_null() {
            *out_normalized = report.normalized;
        }
        AdvtStatus::Ok
    })
}

/// Robust optimum under the L2 attack: writes theta* into `out_theta`
/// (length d) and R* into `out_r_star`.
///
/// # Safety
/// `model` must be a live handle; `out_theta` must hold d doubles;
/// `out_r_star` must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn advt_optimal_theta(
    model: *const AdvtModel,
    epsilon: f64,
    out_theta: *mut f64,
    out_r_star: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            set_error("model must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        if out_theta.is_null() {
            set_error("out_theta must be non-NULL");
            return AdvtStatus::NullPointer;
        }
        match advtrain::risk::optimal_theta(&m.inner, epsilon, Norm::L2) {
            Ok(opt) => {
                let out = std::slice::from_raw_parts_mut(out_theta, m.inner.dim());
                out.copy_from_slice(opt.theta_star.as_slice().unwrap());
                if !out_r_star.is_null() {
                    *out_r_star = opt.r_star;
                }
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Smoothed (surrogate) attack on a linear model; `xi = 0` gives the exact
/// attack, except at theta = 0 with a nonzero residual where the exact L2
/// attack is undefined and `AttackUndefined` is returned.
///
/// # Safety
/// `theta`, `x`, and `out_delta` must each point to `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn advt_linear_attack(
    theta: *const f64,
    x: *const f64,
    d: usize,
    y: f64,
    epsilon: f64,
    xi: f64,
    norm: AdvtNorm,
    out_delta: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let (Some(th), Some(xx), false) =
            (slice_arg(theta, d), slice_arg(x, d), out_delta.is_null())
        else {
            set_error("theta, x, and out_delta must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let th = Array1::from_vec(th.to_vec());
        let xx = Array1::from_vec(xx.to_vec());
        if xi == 0.0 {
            if let (Norm::L2, true) = (Norm::from(norm), epsilon > 0.0) {
                // Surface the non-differentiable case exactly as the library does.
                if let Err(e) = advtrain::attack::exact_attack_l2_linear(
                    th.view(),
                    xx.view(),
                    y,
                    epsilon,
                ) {
                    return fail(e);
                }
            }
        }
        let spec = AttackSpec::surrogate(norm.into(), epsilon, xi);
        let p = advtrain::attack::linear_attack(th.view(), xx.view(), y, &spec);
        std::slice::from_raw_parts_mut(out_delta, d).copy_from_slice(p.delta.as_slice().unwrap());
        AdvtStatus::Ok
    })
}

/// Minimum-norm interpolator theta(y) = X'(X X')^-1 y for row-major X
/// (n x d, n <= d); writes theta into `out_theta` (length d).
///
/// # Safety
/// `x` must point to `n*d` doubles, `y` to `n`, `out_theta` to `d`.
#[no_mangle]
pub unsafe extern "C" fn advt_min_norm_interpolator(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    out_theta: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let (Some(xs), Some(ys), false) = (
            slice_arg(x, n.saturating_mul(d)),
            slice_arg(y, n),
            out_theta.is_null(),
        ) else {
            set_error("x, y, and out_theta must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let xm = match Array2::from_shape_vec((n, d), xs.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return AdvtStatus::InvalidArgument;
            }
        };
        match advtrain::highdim::min_norm_interpolator(&xm, &Array1::from_vec(ys.to_vec())) {
            Ok(t) => {
                std::slice::from_raw_parts_mut(out_theta, d)
                    .copy_from_slice(t.as_slice().unwrap());
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Samples a dataset from the model into row-major `out_x` (n x d) and
/// `out_y` (n). Identical (model, n, seed) produce identical bytes.
///
/// # Safety
/// `model` must be a live handle; `out_x` must hold `n*d` doubles and
/// `out_y` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn advt_sample_dataset(
    model: *const AdvtModel,
    n: usize,
    seed: u64,
    out_x: *mut f64,
    out_y: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            set_error("model must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        if out_x.is_null() || out_y.is_null() {
            set_error("out_x and out_y must be non-NULL");
            return AdvtStatus::NullPointer;
        }
        match advtrain::datagen::sample_dataset(&m.inner, n, seed) {
            Ok(ds) => {
                std::slice::from_raw_parts_mut(out_x, n * m.inner.dim())
                    .copy_from_slice(ds.x.as_slice().unwrap());
                std::slice::from_raw_parts_mut(out_y, n).copy_from_slice(ds.y.as_slice().unwrap());
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Adversarial training of a linear model on caller-provided data; writes
/// the final coefficients and, optionally, the final surrogate training
/// loss. `lambda_l1 > 0` adds the proximal soft-threshold step.
///
/// # Safety
/// `x` must point to `n*d` doubles, `y` to `n`, `out_theta` to `d`;
/// `out_final_loss` must be valid or NULL.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn advt_adv_train_linear(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    norm: AdvtNorm,
    epsilon: f64,
    xi: f64,
    eta: f64,
    max_iters: usize,
    lambda_l1: f64,
    out_theta: *mut f64,
    out_final_loss: *mut f64,
) -> AdvtStatus {
    guarded(|| {
        let (Some(xs), Some(ys), false) = (
            slice_arg(x, n.saturating_mul(d)),
            slice_arg(y, n),
            out_theta.is_null(),
        ) else {
            set_error("x, y, and out_theta must be non-NULL");
            return AdvtStatus::NullPointer;
        };
        let xm = match Array2::from_shape_vec((n, d), xs.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return AdvtStatus::InvalidArgument;
            }
        };
        let ds = advtrain::datagen::Dataset {
            x: xm,
            y: Array1::from_vec(ys.to_vec()),
            seed: 0,
        };
        let spec = AttackSpec::surrogate(norm.into(), epsilon, xi);
        let cfg = advtrain::train::TrainConfig {
            eta: advtrain::train::Eta::Fixed(eta),
            max_iters,
            lambda_l1,
            ..Default::default()
        };
        match advtrain::train::adv_train_linear(&ds, None, &spec, &cfg) {
            Ok(traj) => {
                std::slice::from_raw_parts_mut(out_theta, d)
                    .copy_from_slice(traj.final_theta.as_slice().unwrap());
                if !out_final_loss.is_null() {
                    *out_final_loss = traj.records.last().unwrap().surrogate_loss;
                }
                AdvtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
