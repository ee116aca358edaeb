//! C ABI over the survey service, geometry and final form scorers.
//!
//! Every call returns a [`BcStatus`]. On failure the message is kept per thread and read
//! with [`bc_last_error`]. Strings handed out by the library are owned by the caller and
//! released with [`bc_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use bilevel_conjoint::config::from_json_with_path;
use bilevel_conjoint::form::KernelExpansion;
use bilevel_conjoint::geometry::{self, tessellate, DesignVector, NormalizationStats, N_DESIGN_VARS, N_FEATURES};
use bilevel_conjoint::sampler::design_scores;
use bilevel_conjoint::survey::{http, Answer, FinalModels, Service, SystemClock};
use bilevel_conjoint::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcStatus {
    Ok = 0,
    NullArgument = 1,
    /// Invalid configuration or input document.
    Config = 2,
    /// Request illegal in the current session or study state.
    State = 3,
    Numerical = 4,
    Domain = 5,
    NotFound = 6,
    Io = 7,
    InvalidUtf8 = 8,
    /// A buffer was too small; the required length is in the message.
    BufferTooSmall = 9,
    Panic = 10,
}

/// A survey service, in memory or backed by a store directory.
pub struct BcService {
    inner: Arc<Service>,
}

/// The final form scorer of one respondent, evaluated at design vectors.
pub struct BcScorer {
    expansion: KernelExpansion,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BcStatus {
    match e {
        Error::Config { .. } | Error::Json(_) => BcStatus::Config,
        Error::State(_) => BcStatus::State,
        Error::Numerical(_) => BcStatus::Numerical,
        Error::Domain(_) => BcStatus::Domain,
        Error::NotFound { .. } => BcStatus::NotFound,
        Error::Io(_) | Error::Csv(_) => BcStatus::Io,
    }
}

struct Fail(BcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(BcStatus::Config, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BcStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("panic inside the library");
            BcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(BcStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(BcStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|_| Fail(BcStatus::Domain, "string holds a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn design_arg(p: *const f64, len: usize) -> Result<DesignVector, Fail> {
    if p.is_null() {
        return Err(null("design"));
    }
    Ok(DesignVector::from_slice(std::slice::from_raw_parts(p, len))?)
}

unsafe fn service<'a>(p: *const BcService) -> Result<&'a BcService, Fail> {
    p.as_ref().ok_or_else(|| null("service"))
}

/// Message of the last failed call on this thread; empty after a success. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn bc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a service. A null `store_path` keeps everything in memory; otherwise study logs
/// under the directory are replayed. With `use_seed`, every new study takes `seed`.
///
/// # Safety
/// `store_path` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bc_service_new(store_path: *const c_char, use_seed: bool, seed: u64, out: *mut *mut BcService) -> BcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let clock = Arc::new(SystemClock);
        let svc = if store_path.is_null() {
            Service::new(clock)
        } else {
            Service::open(Path::new(str_arg(store_path, "store_path")?), clock)?
        };
        let svc = svc.with_seed(use_seed.then_some(seed));
        *out = Box::into_raw(Box::new(BcService { inner: Arc::new(svc) }));
        Ok(())
    })
}

/// # Safety
/// `svc` is null or a handle from [`bc_service_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bc_service_free(svc: *mut BcService) {
    if !svc.is_null() {
        drop(Box::from_raw(svc));
    }
}

/// Creates a study from a JSON config (`{}` for the defaults) and returns its id.
///
/// # Safety
/// Pointers are valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_study_create(svc: *const BcService, config_json: *const c_char, out_id: *mut *mut c_char) -> BcStatus {
    guard(|| {
        let svc = service(svc)?;
        let st = svc.inner.create_study_json(str_arg(config_json, "config_json")?)?;
        put_string(out_id, st.id.clone())
    })
}

/// Starts a respondent session and returns its id.
///
/// # Safety
/// Pointers are valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_session_create(svc: *const BcService, study_id: *const c_char, out_id: *mut *mut c_char) -> BcStatus {
    guard(|| {
        let svc = service(svc)?;
        let s = svc.inner.study(str_arg(study_id, "study_id")?)?.create_session()?;
        put_string(out_id, s.id)
    })
}

/// The pending question of a session as the JSON the HTTP API serves.
///
/// # Safety
/// Pointers are valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_next_question(svc: *const BcService, session_id: *const c_char, out_json: *mut *mut c_char) -> BcStatus {
    guard(|| {
        let svc = service(svc)?;
        let session = str_arg(session_id, "session_id")?;
        let st = svc.inner.study_of_session(session)?;
        let q = st.next_question(session)?;
        put_string(out_json, serde_json::to_string(&http::payload(&svc.inner, &st, session, &q))?)
    })
}

/// Records an answer such as `{"type":"form","value":"left_better"}` or
/// `{"type":"purchase","value":"right"}` and returns the submit summary JSON.
///
/// # Safety
/// Pointers are valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_submit_answer(
    svc: *const BcService,
    session_id: *const c_char,
    answer_json: *const c_char,
    out_json: *mut *mut c_char,
) -> BcStatus {
    guard(|| {
        let svc = service(svc)?;
        let session = str_arg(session_id, "session_id")?;
        let answer: Answer = from_json_with_path(str_arg(answer_json, "answer_json")?)?;
        let summary = svc.inner.study_of_session(session)?.submit_answer(session, answer)?;
        put_string(out_json, serde_json::to_string(&summary)?)
    })
}

/// Finalizes a study. The report JSON is always written; the models JSON only when
/// `out_models_json` is not null.
///
/// # Safety
/// Pointers are valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_finalize(
    svc: *const BcService,
    study_id: *const c_char,
    out_report_json: *mut *mut c_char,
    out_models_json: *mut *mut c_char,
) -> BcStatus {
    guard(|| {
        let svc = service(svc)?;
        if out_report_json.is_null() {
            return Err(null("out_report_json"));
        }
        let (models, report) = svc.inner.study(str_arg(study_id, "study_id")?)?.finalize()?;
        let report = serde_json::to_string(&report)?;
        if !out_models_json.is_null() {
            put_string(out_models_json, serde_json::to_string(&models)?)?;
        }
        put_string(out_report_json, report)
    })
}

/// Mesh JSON of a design of 19 values in [0, 1].
///
/// # Safety
/// `design` points to `len` doubles; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn bc_mesh_json(design: *const f64, len: usize, resolution: usize, out_json: *mut *mut c_char) -> BcStatus {
    guard(|| {
        let d = design_arg(design, len)?;
        if resolution == 0 || resolution > 64 {
            return Err(Fail(BcStatus::Config, "resolution must lie in 1..=64".into()));
        }
        put_string(out_json, tessellate(&d, resolution).to_json())
    })
}

/// Writes the 325 pairwise control-point distances of a design into `out`.
///
/// # Safety
/// `design` points to `len` doubles; `out` points to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_features(design: *const f64, len: usize, out: *mut f64, out_len: usize) -> BcStatus {
    guard(|| {
        let d = design_arg(design, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < N_FEATURES {
            return Err(Fail(BcStatus::BufferTooSmall, format!("need {N_FEATURES} doubles, got {out_len}")));
        }
        let f = geometry::features(&d);
        std::slice::from_raw_parts_mut(out, N_FEATURES).copy_from_slice(f.as_slice());
        Ok(())
    })
}

/// Number of design variables, and of features written by [`bc_features`].
///
/// # Safety
/// Both pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn bc_dimensions(n_design: *mut usize, n_features: *mut usize) -> BcStatus {
    guard(|| {
        *n_design.as_mut().ok_or_else(|| null("n_design"))? = N_DESIGN_VARS;
        *n_features.as_mut().ok_or_else(|| null("n_features"))? = N_FEATURES;
        Ok(())
    })
}

/// Builds the final form scorer of `respondent` from a finalized models JSON.
///
/// # Safety
/// `models_json` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bc_scorer_from_models(models_json: *const c_char, respondent: usize, out: *mut *mut BcScorer) -> BcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let models: FinalModels = from_json_with_path(str_arg(models_json, "models_json")?)?;
        if respondent >= models.individual.len() {
            return Err(Fail(
                BcStatus::NotFound,
                format!("respondent {respondent} of {}", models.individual.len()),
            ));
        }
        *out = Box::into_raw(Box::new(BcScorer {
            expansion: models.scorer(respondent),
        }));
        Ok(())
    })
}

/// Form score of a design.
///
/// # Safety
/// `scorer` is a live handle; `design` points to `len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bc_scorer_score(scorer: *const BcScorer, design: *const f64, len: usize, out: *mut f64) -> BcStatus {
    guard(|| {
        let s = scorer.as_ref().ok_or_else(|| null("scorer"))?;
        let d = design_arg(design, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = design_scores(&s.expansion, NormalizationStats::builtin(), &[d.as_slice().to_vec()])[0];
        Ok(())
    })
}

/// # Safety
/// `scorer` is null or a handle from [`bc_scorer_from_models`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bc_scorer_free(scorer: *mut BcScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}
