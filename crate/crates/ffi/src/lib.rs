//! C interface to the cpad detector.
//!
//! Objects cross the boundary as opaque handles created by `*_load` or
//! `*_generate` functions and released with the matching `*_free`. Every
//! fallible call returns a [`CpadStatus`]; on failure the message is kept
//! per thread and can be copied out with [`cpad_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cpad::blackout::{BlackoutMode, BlackoutSpec};
use cpad::dataset::read_dataset;
use cpad::features::ScenarioFeatures;
use cpad::metrics::{roc_auc, MetricsReport};
use cpad::model::ModelParams;
use cpad::scenario::Scenario;
use cpad::sim::{generate_indexed, GenConfig};
use cpad::temporal::forward;
use cpad::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Unlabeled = 6,
    Config = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpadBlackoutMode {
    Random = 0,
    Sequential = 1,
}

/// Scalar metrics; `auc` is NaN when only one class is present.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CpadMetrics {
    pub n_samples: usize,
    pub f1: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub accuracy: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Trained model parameters.
pub struct CpadModel {
    params: ModelParams,
}

/// Scenarios held in memory.
pub struct CpadDataset {
    scenarios: Vec<Scenario>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CpadStatus {
    match e {
        Error::Io { .. } => CpadStatus::Io,
        Error::Parse { .. } | Error::Schema(_) => CpadStatus::Parse,
        Error::Shape { .. } => CpadStatus::Shape,
        Error::InvalidArgument(_) => CpadStatus::InvalidArgument,
        Error::Unlabeled(_) => CpadStatus::Unlabeled,
        Error::Config(_) => CpadStatus::Config,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), CpadStatus>) -> CpadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpadStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            CpadStatus::Panic
        }
    }
}

fn fail(e: Error) -> CpadStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> CpadStatus {
    set_error(format!("{what} is null"));
    CpadStatus::NullPointer
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, CpadStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not valid UTF-8".into());
        CpadStatus::InvalidArgument
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], CpadStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cpad_last_error(buf: *mut c_char, len: usize) -> usize {
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

/// Loads model parameters from a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_model_load(path: *const c_char, out: *mut *mut CpadModel) -> CpadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let params = ModelParams::load(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(CpadModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`cpad_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpad_model_free(model: *mut CpadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpad_model_param_count(model: *const CpadModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.count())
}

/// Simulates `n` labeled scenarios with default settings.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_generate(
    n: usize,
    n_agents: usize,
    seed: u64,
    out: *mut *mut CpadDataset,
) -> CpadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = GenConfig {
            n_agents,
            seed,
            ..GenConfig::default()
        };
        cfg.validate().map_err(fail)?;
        let scenarios = (0..n)
            .map(|i| generate_indexed(&cfg, i).map(|o| o.scenario))
            .collect::<Result<_, _>>()
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(CpadDataset { scenarios }));
        Ok(())
    })
}

/// Reads a JSONL dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_load(path: *const c_char, out: *mut *mut CpadDataset) -> CpadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let scenarios = read_dataset(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(CpadDataset { scenarios }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_free(ds: *mut CpadDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of scenarios, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_len(ds: *const CpadDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.scenarios.len())
}

/// Agent count of scenario `index`, or 0 when out of range.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_agents(ds: *const CpadDataset, index: usize) -> usize {
    ds.as_ref()
        .and_then(|d| d.scenarios.get(index))
        .map_or(0, |s| s.agents.len())
}

/// Rule label of one agent: 1 anomalous, 0 normal.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_dataset_label(
    ds: *const CpadDataset,
    scenario: usize,
    agent: usize,
    out: *mut u8,
) -> CpadStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let a = ds
            .scenarios
            .get(scenario)
            .and_then(|s| s.agents.get(agent))
            .ok_or_else(|| fail(Error::invalid(format!("no agent {agent} in scenario {scenario}"))))?;
        let r = a
            .label
            .as_ref()
            .ok_or_else(|| fail(Error::Unlabeled(a.agent_id.clone())))?;
        *out = r.is_anomalous as u8;
        Ok(())
    })
}

/// Optional blackout for a prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpadBlackout {
    pub mode: CpadBlackoutMode,
    /// Fraction in `[0, 1]`.
    pub pct: f64,
    pub max_block: usize,
    pub seed: u64,
}

/// Anomaly probability of agent `ego` in scenario `scenario`. Pass a null
/// `blackout` for full communication.
///
/// # Safety
/// Handles must be live; `blackout` null or valid; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_predict(
    model: *const CpadModel,
    ds: *const CpadDataset,
    scenario: usize,
    ego: usize,
    blackout: *const CpadBlackout,
    out: *mut f64,
) -> CpadStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = ds
            .scenarios
            .get(scenario)
            .ok_or_else(|| fail(Error::invalid(format!("scenario index {scenario} out of range"))))?;
        let features = ScenarioFeatures::from_scenario(s, model.params.hyper.max_range).map_err(fail)?;
        let mask = match blackout.as_ref() {
            Some(b) => {
                let spec = BlackoutSpec {
                    mode: match b.mode {
                        CpadBlackoutMode::Random => BlackoutMode::RandomStepwise,
                        CpadBlackoutMode::Sequential => BlackoutMode::Sequential,
                    },
                    pct: b.pct,
                    max_block: b.max_block,
                    seed: b.seed,
                };
                Some(
                    spec.mask(features.n_agents, features.horizon, ego, b.seed)
                        .map_err(fail)?,
                )
            }
            None => None,
        };
        *out = forward(&model.params, &features, ego, mask.as_ref()).map_err(fail)?;
        Ok(())
    })
}

/// Metrics of probabilities against 0/1 labels at threshold 0.5.
///
/// # Safety
/// `labels` and `probabilities` must hold `n` elements; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_metrics(
    labels: *const u8,
    probabilities: *const f64,
    n: usize,
    out: *mut CpadMetrics,
) -> CpadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let labels: Vec<bool> = slice_arg(labels, n, "labels")?.iter().map(|&y| y != 0).collect();
        let probs = slice_arg(probabilities, n, "probabilities")?;
        let r = MetricsReport::from_probabilities(&labels, probs).map_err(fail)?;
        *out = CpadMetrics {
            n_samples: r.n_samples,
            f1: r.f1,
            auc: r.auc.unwrap_or(f64::NAN),
            precision: r.precision,
            recall: r.recall,
            mcc: r.mcc,
            accuracy: r.accuracy,
            tp: r.confusion.tp,
            fp: r.confusion.fp,
            fn_: r.confusion.fn_,
            tn: r.confusion.tn,
        };
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against 0/1 labels.
///
/// # Safety
/// `labels` and `scores` must hold `n` elements; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cpad_roc_auc(labels: *const u8, scores: *const f64, n: usize, out: *mut f64) -> CpadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let labels: Vec<bool> = slice_arg(labels, n, "labels")?.iter().map(|&y| y != 0).collect();
        let scores = slice_arg(scores, n, "scores")?;
        *out = roc_auc(&labels, scores).map_err(fail)?.auc;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
