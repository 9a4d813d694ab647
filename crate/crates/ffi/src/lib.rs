//! C ABI for the `uqd` toolkit.
//!
//! Every fallible function returns a [`UqdStatus`]; on failure the message is
//! available from [`uqd_last_error_message`] on the same thread. Arrays are
//! caller-owned, row-major `double` buffers. Trained models are opaque
//! [`UqdModel`] handles released with [`uqd_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use uqd::disentangle::{classification_uncertainty, combine_gaussian_mixture, decompose_variance, entropy};
use uqd::experiments::eval::eval_regression_disentangled;
use uqd::experiments::TrainConfig;
use uqd::{Error, LogitSamples, RegressionSamples, RngStream, SamplingSoftmaxConfig, Task, Tensor, UqModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UqdStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Domain = 3,
    Contract = 4,
    Parameter = 5,
    EmptySamples = 6,
    MethodMismatch = 7,
    Config = 8,
    Format = 9,
    Io = 10,
    Diverged = 11,
    State = 12,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UqdTask {
    Regression = 0,
    Classification = 1,
}

/// Loaded model plus the configuration it was trained with.
pub struct UqdModel {
    model: UqModel,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> UqdStatus {
    match e {
        Error::Dimension(_) => UqdStatus::Dimension,
        Error::Domain(_) => UqdStatus::Domain,
        Error::Contract(_) => UqdStatus::Contract,
        Error::State(_) => UqdStatus::State,
        Error::Parameter(_) => UqdStatus::Parameter,
        Error::EmptySamples => UqdStatus::EmptySamples,
        Error::MethodMismatch(_) => UqdStatus::MethodMismatch,
        Error::Config(_) => UqdStatus::Config,
        Error::Format(_) => UqdStatus::Format,
        Error::Diverged { .. } => UqdStatus::Diverged,
        Error::Io(_) => UqdStatus::Io,
    }
}

struct Null;

enum Failure {
    Null,
    Uqd(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Uqd(e)
    }
}

impl From<Null> for Failure {
    fn from(_: Null) -> Self {
        Failure::Null
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UqdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UqdStatus::Ok,
        Ok(Err(Failure::Null)) => {
            set_error("null pointer argument");
            UqdStatus::NullPointer
        }
        Ok(Err(Failure::Uqd(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            UqdStatus::Panic
        }
    }
}

unsafe fn input<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], Null> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Null);
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize) -> Result<&'a mut [f64], Null> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Null);
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn scalar_out<'a>(ptr: *mut f64) -> Result<&'a mut f64, Null> {
    ptr.as_mut().ok_or(Null)
}

fn dims(a: usize, b: usize) -> Result<usize, Error> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Dimension("array size overflows".into()))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uqd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn uqd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Mixture mean and variance of `m` Gaussian samples.
///
/// # Safety
/// `means` and `variances` must point to `m` readable doubles; the outputs
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn uqd_combine_gaussian_mixture(
    means: *const f64,
    variances: *const f64,
    m: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> UqdStatus {
    guard(|| {
        let s = RegressionSamples {
            means: input(means, m)?.to_vec(),
            variances: input(variances, m)?.to_vec(),
        };
        let (mu, var) = combine_gaussian_mixture(&s)?;
        *scalar_out(out_mean)? = mu;
        *scalar_out(out_variance)? = var;
        Ok(())
    })
}

/// Aleatoric and epistemic variance of `m` Gaussian samples.
///
/// # Safety
/// As for [`uqd_combine_gaussian_mixture`].
#[no_mangle]
pub unsafe extern "C" fn uqd_decompose_variance(
    means: *const f64,
    variances: *const f64,
    m: usize,
    out_aleatoric: *mut f64,
    out_epistemic: *mut f64,
) -> UqdStatus {
    guard(|| {
        let s = RegressionSamples {
            means: input(means, m)?.to_vec(),
            variances: input(variances, m)?.to_vec(),
        };
        let (a, e) = decompose_variance(&s)?;
        *scalar_out(out_aleatoric)? = a;
        *scalar_out(out_epistemic)? = e;
        Ok(())
    })
}

/// Sampling softmax of one logit distribution with `n_samples` draws from
/// the stream `(seed, stream_id)`.
///
/// # Safety
/// `mu`, `var` and `out_probs` must each hold `classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn uqd_sampling_softmax(
    mu: *const f64,
    var: *const f64,
    classes: usize,
    n_samples: usize,
    seed: u64,
    stream_id: u64,
    out_probs: *mut f64,
) -> UqdStatus {
    guard(|| {
        let cfg = SamplingSoftmaxConfig::new(n_samples)?;
        let p = uqd::sampling_softmax(
            input(mu, classes)?,
            input(var, classes)?,
            cfg,
            &mut RngStream::new(seed, stream_id),
        )?;
        output(out_probs, classes)?.copy_from_slice(&p);
        Ok(())
    })
}

/// Shannon entropy in nats.
///
/// # Safety
/// `p` must hold `n` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn uqd_entropy(p: *const f64, n: usize, out: *mut f64) -> UqdStatus {
    guard(|| {
        *scalar_out(out)? = entropy(input(p, n)?)?;
        Ok(())
    })
}

/// Disentangles `m` logit samples of `classes` classes.
///
/// Writes `p_pred`, `p_ale`, `p_epi` (each `classes` long) and the entropies
/// `[h_pred, h_ale, h_epi]`.
///
/// # Safety
/// `logit_means` and `logit_vars` must hold `m * classes` doubles; the
/// probability outputs `classes` doubles each and `out_entropies` three.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn uqd_classification_uncertainty(
    logit_means: *const f64,
    logit_vars: *const f64,
    m: usize,
    classes: usize,
    n_samples: usize,
    seed: u64,
    out_p_pred: *mut f64,
    out_p_ale: *mut f64,
    out_p_epi: *mut f64,
    out_entropies: *mut f64,
) -> UqdStatus {
    guard(|| {
        if classes == 0 {
            return Err(Error::Dimension("no classes".into()).into());
        }
        let len = dims(m, classes)?;
        let mu = input(logit_means, len)?;
        let var = input(logit_vars, len)?;
        let samples = LogitSamples::new(
            mu.chunks(classes).map(<[f64]>::to_vec).collect(),
            var.chunks(classes).map(<[f64]>::to_vec).collect(),
        )?;
        let cfg = SamplingSoftmaxConfig::new(n_samples)?;
        let d = classification_uncertainty(&samples, cfg, &mut RngStream::new(seed, 0))?;
        output(out_p_pred, classes)?.copy_from_slice(&d.p_pred);
        output(out_p_ale, classes)?.copy_from_slice(&d.p_ale);
        output(out_p_epi, classes)?.copy_from_slice(&d.p_epi);
        output(out_entropies, 3)?.copy_from_slice(&[d.h_pred, d.h_ale, d.h_epi]);
        Ok(())
    })
}

/// Loads a model directory written by `uqd train`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out_model` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_load(dir: *const c_char, out_model: *mut *mut UqdModel) -> UqdStatus {
    guard(|| {
        if dir.is_null() || out_model.is_null() {
            return Err(Failure::Null);
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Error::Config("path is not UTF-8".into()))?;
        let (model, config) = uqd::model_io::load_model(Path::new(path))?;
        *out_model = Box::into_raw(Box::new(UqdModel { model, config }));
        Ok(())
    })
}

/// Releases a model; `NULL` is ignored.
///
/// # Safety
/// `model` must come from [`uqd_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_free(model: *mut UqdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out_task` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_task(model: *const UqdModel, out_task: *mut UqdTask) -> UqdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Null)?;
        let out = out_task.as_mut().ok_or(Null)?;
        *out = match m.model.task() {
            Task::Regression => UqdTask::Regression,
            Task::Classification => UqdTask::Classification,
        };
        Ok(())
    })
}

/// Number of member networks (ensemble size, or 1).
///
/// # Safety
/// `model` must be a live handle; `out_count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_member_count(model: *const UqdModel, out_count: *mut usize) -> UqdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Null)?;
        *out_count.as_mut().ok_or(Null)? = m.model.members.len();
        Ok(())
    })
}

/// Same evaluation stream as `uqd eval-disentangle --seed`.
const EVAL_STREAM: u64 = 10;

/// Evaluates a regression model at `n` inputs and writes `n` rows of
/// `[mu, sigma, sigma_ale, sigma_epi]`.
///
/// # Safety
/// `model` must be a live handle; `xs` must hold `n` doubles and `out_rows`
/// `4 * n`.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_eval_regression(
    model: *const UqdModel,
    xs: *const f64,
    n: usize,
    seed: u64,
    out_rows: *mut f64,
) -> UqdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Null)?;
        let xs = input(xs, n)?;
        let out = output(out_rows, dims(n, 4)?)?;
        let rows = eval_regression_disentangled(&m.model, &m.config.uq, xs, &RngStream::new(seed, EVAL_STREAM))?;
        for (o, r) in out.chunks_mut(4).zip(&rows) {
            o.copy_from_slice(&[r.pred_mu, r.pred_sigma, r.pred_sigma_ale, r.pred_sigma_epi]);
        }
        Ok(())
    })
}

/// Evaluates a classification model on `n` inputs of dimension `dim` and
/// writes `n` rows of `[h_pred, h_ale, h_epi]`.
///
/// # Safety
/// `model` must be a live handle; `inputs` must hold `n * dim` doubles and
/// `out_entropies` `3 * n`.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_eval_classification(
    model: *const UqdModel,
    inputs: *const f64,
    n: usize,
    dim: usize,
    seed: u64,
    out_entropies: *mut f64,
) -> UqdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Null)?;
        if m.model.task() != Task::Classification {
            return Err(Error::Contract("model is not a classifier".into()).into());
        }
        let x = Tensor::new(vec![n, dim], input(inputs, dims(n, dim)?)?.to_vec())?;
        let out = output(out_entropies, dims(n, 3)?)?;
        let rng = RngStream::new(seed, EVAL_STREAM);
        let samples = uqd::sample_predictions(&m.model, &x, &m.config.uq, &rng.derive(0))?;
        let cfg = SamplingSoftmaxConfig::new(m.config.sampling_samples)?;
        let noise = rng.derive(1);
        for (i, (s, o)) in samples.iter().zip(out.chunks_mut(3)).enumerate() {
            let d = classification_uncertainty(s.as_logits()?, cfg, &mut noise.derive(i as u64))?;
            o.copy_from_slice(&[d.h_pred, d.h_ale, d.h_epi]);
        }
        Ok(())
    })
}
