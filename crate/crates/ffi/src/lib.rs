//! C interface to the `bsnmani` samplers.
//!
//! Datasets and posteriors are opaque handles created and released through
//! this API. Every fallible call returns a [`BsnStatus`]; the message of the
//! last failure on the calling thread is available from [`bsn_last_error`].
//! Matrices are passed as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bsnmani::evaluate::{fit, predict, predictive_r2, PredictOptions, SamplerKind};
use bsnmani::model::{Dataset, SubjectRecord};
use bsnmani::numerics::SymmetricNetwork;
use bsnmani::sampler::{align_draws, PosteriorDraws, SamplerConfig};
use bsnmani::BsnError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsnSampler {
    Joint = 0,
    TwoStage = 1,
}

/// Sampler settings; start from [`bsn_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BsnFitOptions {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub q: usize,
    pub sampler: BsnSampler,
}

/// Opaque set of subjects.
pub struct BsnDataset {
    inner: Dataset,
}

/// Opaque set of posterior draws.
pub struct BsnPosterior {
    inner: PosteriorDraws,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &BsnError) -> BsnStatus {
    match e {
        BsnError::Dimension(_) => BsnStatus::Dimension,
        BsnError::Parameter(_) => BsnStatus::InvalidArgument,
        BsnError::Config(_) | BsnError::Validation(_) => BsnStatus::Config,
        BsnError::Io(_) => BsnStatus::Io,
        BsnError::Singular(_)
        | BsnError::Numerical(_)
        | BsnError::Integration(_)
        | BsnError::Invariant { .. } => BsnStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(BsnError),
}

impl From<BsnError> for Failure {
    fn from(e: BsnError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BsnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsnStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            BsnStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            BsnStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            BsnStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_slice<'a>(
    p: *const f64,
    len: usize,
    what: &'static str,
) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn as_slice_mut<'a>(
    p: *mut f64,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn copy_out(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Failure::Arg(format!(
            "{what} buffer holds {} values, need {}",
            dst.len(),
            src.len()
        )));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bsn_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string"),
        };
    VERSION.as_ptr()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bsn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn bsn_fit_options_default() -> BsnFitOptions {
    let c = SamplerConfig::default();
    BsnFitOptions {
        iters: c.iters,
        burn_in: c.burn_in,
        thin: c.thin,
        seed: c.seed,
        q: c.q,
        sampler: BsnSampler::Joint,
    }
}

/// Builds a dataset from `n_subjects` networks on `n_nodes` nodes. `edges`
/// holds one strict-lower-triangle vector (column-major order) per subject;
/// `covariates` is `n_subjects x n_covariates` and may be null when
/// `n_covariates` is 0.
///
/// # Safety
/// Buffers must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsn_dataset_new(
    n_nodes: usize,
    n_subjects: usize,
    n_covariates: usize,
    edges: *const f64,
    outcomes: *const f64,
    covariates: *const f64,
    out: *mut *mut BsnDataset,
) -> BsnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if n_nodes < 2 {
            return Err(Failure::Arg(format!(
                "n_nodes must be at least 2, got {n_nodes}"
            )));
        }
        let p = n_nodes * (n_nodes - 1) / 2;
        let edges = as_slice(edges, n_subjects * p, "edges")?;
        let outcomes = as_slice(outcomes, n_subjects, "outcomes")?;
        let covariates = as_slice(covariates, n_subjects * n_covariates, "covariates")?;
        let records = (0..n_subjects)
            .map(|i| {
                Ok(SubjectRecord {
                    id: format!("subject{}", i + 1),
                    y: SymmetricNetwork::from_vecl(n_nodes, edges[i * p..(i + 1) * p].to_vec())?,
                    c: outcomes[i],
                    z: covariates[i * n_covariates..(i + 1) * n_covariates].to_vec(),
                })
            })
            .collect::<Result<Vec<_>, BsnError>>()?;
        let handle = Box::new(BsnDataset {
            inner: Dataset::new(records)?,
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from [`bsn_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsn_dataset_free(data: *mut BsnDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Runs the selected sampler.
///
/// # Safety
/// `data` and `options` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsn_fit(
    data: *const BsnDataset,
    options: *const BsnFitOptions,
    out: *mut *mut BsnPosterior,
) -> BsnStatus {
    guard(|| {
        let data = as_ref(data, "data")?;
        let o = as_ref(options, "options")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = SamplerConfig {
            iters: o.iters,
            burn_in: o.burn_in,
            thin: o.thin,
            seed: o.seed,
            q: o.q,
            ..SamplerConfig::default()
        };
        let kind = match o.sampler {
            BsnSampler::Joint => SamplerKind::Joint,
            BsnSampler::TwoStage => SamplerKind::Twostage,
        };
        let draws = fit(&data.inner, &cfg, kind)?;
        *out = Box::into_raw(Box::new(BsnPosterior { inner: draws }));
        Ok(())
    })
}

/// # Safety
/// `post` must be null or a handle from [`bsn_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsn_posterior_free(post: *mut BsnPosterior) {
    if !post.is_null() {
        drop(Box::from_raw(post));
    }
}

/// # Safety
/// `post` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsn_posterior_draw_count(
    post: *const BsnPosterior,
    out: *mut usize,
) -> BsnStatus {
    guard(|| {
        let post = as_ref(post, "posterior")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = post.inner.len();
        Ok(())
    })
}

/// Posterior means of the network coefficients (`beta_len` = q) and of the
/// covariate coefficients (`alpha_len` = number of covariates).
///
/// # Safety
/// Output buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn bsn_posterior_mean_coefficients(
    post: *const BsnPosterior,
    beta: *mut f64,
    beta_len: usize,
    alpha: *mut f64,
    alpha_len: usize,
) -> BsnStatus {
    guard(|| {
        let post = &as_ref(post, "posterior")?.inner;
        if post.is_empty() {
            return Err(Failure::Arg("posterior has no draws".into()));
        }
        let aligned = align_draws(post)?;
        copy_out(
            as_slice_mut(beta, beta_len, "beta")?,
            aligned.mean_beta().as_slice(),
            "beta",
        )?;
        copy_out(
            as_slice_mut(alpha, alpha_len, "alpha")?,
            aligned.mean_alpha().as_slice(),
            "alpha",
        )?;
        Ok(())
    })
}

/// Posterior mean of the subnetwork frame after aligning draws to the first,
/// written row-major as `n_nodes x q`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn bsn_posterior_mean_frame(
    post: *const BsnPosterior,
    out: *mut f64,
    len: usize,
) -> BsnStatus {
    guard(|| {
        let post = &as_ref(post, "posterior")?.inner;
        if post.is_empty() {
            return Err(Failure::Arg("posterior has no draws".into()));
        }
        let u = align_draws(post)?.mean_u();
        let row_major: Vec<f64> = u.transpose().as_slice().to_vec();
        copy_out(as_slice_mut(out, len, "frame")?, &row_major, "frame")
    })
}

/// Acceptance rate of the independence correction; two-stage fits only.
///
/// # Safety
/// `post` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsn_posterior_imh_acceptance(
    post: *const BsnPosterior,
    out: *mut f64,
) -> BsnStatus {
    guard(|| {
        let post = &as_ref(post, "posterior")?.inner;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let imh = post.imh.as_ref().ok_or_else(|| {
            Failure::Arg("posterior was not fitted with the two-stage sampler".into())
        })?;
        *out = imh.acceptance_rate;
        Ok(())
    })
}

/// Point predictions for every subject of `test`; `len` must equal its size.
///
/// # Safety
/// Handles must be valid; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn bsn_predict(
    post: *const BsnPosterior,
    test: *const BsnDataset,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> BsnStatus {
    guard(|| {
        let post = &as_ref(post, "posterior")?.inner;
        let test = &as_ref(test, "test")?.inner;
        let pred = predict(
            post,
            test.networks(),
            &test.clinical().z,
            PredictOptions {
                seed,
                outcome_noise: false,
            },
        )?;
        copy_out(
            as_slice_mut(out, len, "predictions")?,
            &pred.point,
            "predictions",
        )
    })
}

/// `1 - SSE/SST` of `predictions` against `truths`.
///
/// # Safety
/// Both inputs must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsn_predictive_r2(
    predictions: *const f64,
    truths: *const f64,
    len: usize,
    out: *mut f64,
) -> BsnStatus {
    guard(|| {
        let p = as_slice(predictions, len, "predictions")?;
        let t = as_slice(truths, len, "truths")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = predictive_r2(p, t)?;
        Ok(())
    })
}
