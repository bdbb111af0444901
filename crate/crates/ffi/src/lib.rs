//! C ABI over `gqr-core`.
//!
//! Every fallible function returns a [`GqrStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be fetched with [`gqr_last_error`]. Handles are opaque and must be
//! released with their matching `_free` function. Strings returned by the
//! library are released with [`gqr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gqr_core::ctr::CtrModel;
use gqr_core::metrics;
use gqr_core::pipeline::{cmd_pipeline, PipelineConfig};
use gqr_core::policy::Policy;
use gqr_core::prompt::ComponentKind;
use gqr_core::reward::{self, ClickScorer};
use gqr_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GqrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    UndefinedMetric = 6,
    StageFailed = 7,
    Internal = 8,
}

/// Trained click model.
pub struct GqrCtrModel(CtrModel);

/// Recommendation policy.
pub struct GqrPolicy(Policy);

/// Validated pipeline configuration.
pub struct GqrConfig(PipelineConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> GqrStatus {
    match e {
        Error::Config(_) | Error::Version { .. } => GqrStatus::Config,
        Error::Argument(_) | Error::Size(_) => GqrStatus::InvalidArgument,
        Error::UndefinedMetric(_) => GqrStatus::UndefinedMetric,
        Error::Io(_) => GqrStatus::Io,
        Error::Stage { .. } => GqrStatus::StageFailed,
        _ => GqrStatus::Data,
    }
}

struct Fail(GqrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GqrStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GqrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GqrStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            GqrStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GqrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        Fail(
            GqrStatus::Internal,
            "string contains an interior NUL".into(),
        )
    })
}

fn kind(single_choice: bool) -> ComponentKind {
    if single_choice {
        ComponentKind::SingleChoice
    } else {
        ComponentKind::MultiChoice
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gqr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Free with
/// [`gqr_string_free`].
#[no_mangle]
pub extern "C" fn gqr_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " "))
            .map(CString::into_raw)
            .unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gqr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// List click probability of `n` per-slot probabilities: `1 - prod(1 - p)`
/// for multi-choice, `sum(p)` for single-choice.
///
/// # Safety
/// `p` must point to `n` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn gqr_list_reward(
    p: *const f64,
    n: usize,
    single_choice: bool,
    out: *mut f64,
) -> GqrStatus {
    guard(|| {
        let p = slice_arg(p, n, "p")?;
        write_out(out, reward::list_reward(p, kind(single_choice))?)
    })
}

/// ROC AUC with ties counted one half. `labels` holds 0 or 1 bytes.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> GqrStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l: Vec<bool> = slice_arg(labels, n, "labels")?
            .iter()
            .map(|&b| b != 0)
            .collect();
        write_out(out, metrics::auc(s, &l)?)
    })
}

/// Mean binary log loss with clipped predictions.
///
/// # Safety
/// As for [`gqr_auc`].
#[no_mangle]
pub unsafe extern "C" fn gqr_logloss(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> GqrStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l: Vec<bool> = slice_arg(labels, n, "labels")?
            .iter()
            .map(|&b| b != 0)
            .collect();
        write_out(out, metrics::logloss(s, &l)?)
    })
}

/// Rescaled mean absolute deviation between predicted and real per-set CTRs.
///
/// # Safety
/// `predicted` and `real` must each hold `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_diff_ctr(
    predicted: *const f64,
    real: *const f64,
    k: usize,
    out: *mut f64,
) -> GqrStatus {
    guard(|| {
        let p = slice_arg(predicted, k, "predicted")?;
        let r = slice_arg(real, k, "real")?;
        write_out(out, metrics::diff_ctr(p, r)?)
    })
}

/// Load a click model saved by the `train-ctr` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_ctr_model_load(
    path: *const c_char,
    out: *mut *mut GqrCtrModel,
) -> GqrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = CtrModel::load(std::path::Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(GqrCtrModel(m))))
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`gqr_ctr_model_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gqr_ctr_model_free(model: *mut GqrCtrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Estimated list click probability of `n` queries shown for `user_query`.
///
/// # Safety
/// `model` must be a live handle, `user_query` a NUL-terminated string,
/// `queries` an array of `n` NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_ctr_model_score_list(
    model: *const GqrCtrModel,
    user_query: *const c_char,
    queries: *const *const c_char,
    n: usize,
    single_choice: bool,
    out: *mut f64,
) -> GqrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let u = str_arg(user_query, "user_query")?;
        let qs = slice_arg(queries, n, "queries")?
            .iter()
            .map(|&q| str_arg(q, "query").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let scorer: &dyn ClickScorer = &m.0;
        write_out(
            out,
            reward::score_list(scorer, u, &qs, kind(single_choice)).value,
        )
    })
}

/// Load a policy saved by the `sft` or `align` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_policy_load(
    path: *const c_char,
    out: *mut *mut GqrPolicy,
) -> GqrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let p = Policy::load(std::path::Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(GqrPolicy(p))))
    })
}

/// # Safety
/// `policy` must be NULL or a handle from [`gqr_policy_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gqr_policy_free(policy: *mut GqrPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of training updates applied to the policy.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_policy_version(policy: *const GqrPolicy, out: *mut u64) -> GqrStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        write_out(out, u64::from(p.0.version))
    })
}

/// Parse and validate a TOML pipeline config. Unknown keys are errors.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_config_from_toml(
    toml: *const c_char,
    out: *mut *mut GqrConfig,
) -> GqrStatus {
    guard(|| {
        let c = PipelineConfig::from_toml(str_arg(toml, "toml")?)?;
        write_out(out, Box::into_raw(Box::new(GqrConfig(c))))
    })
}

/// # Safety
/// `config` must be NULL or a handle from [`gqr_config_from_toml`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gqr_config_free(config: *mut GqrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the full pipeline into `out_dir` and return the run manifest as JSON
/// through `manifest_json` (free with [`gqr_string_free`]).
///
/// # Safety
/// `config` must be a live handle, `out_dir` a NUL-terminated string and
/// `manifest_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gqr_pipeline_run(
    config: *const GqrConfig,
    out_dir: *const c_char,
    manifest_json: *mut *mut c_char,
) -> GqrStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if manifest_json.is_null() {
            return Err(null("manifest_json"));
        }
        let cfg = PipelineConfig {
            out_dir: PathBuf::from(str_arg(out_dir, "out_dir")?),
            ..c.0.clone()
        };
        let m = cmd_pipeline(&cfg)?;
        let json = serde_json::to_string(&m).map_err(Error::from)?;
        write_out(manifest_json, owned_string(json)?)
    })
}
