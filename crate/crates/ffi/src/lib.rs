//! C ABI over the reacta recommender.
//!
//! Every fallible call returns a [`ReactaStatus`]; on failure the message is
//! kept per thread and read with [`reacta_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use reacta::cli::Recommender;
use reacta::scoring::ModelKind;
use reacta::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReactaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Missing = 4,
    Io = 5,
    Malformed = 6,
    Config = 7,
    Internal = 8,
}

/// A data directory plus one loaded model.
pub struct ReactaRecommender {
    inner: Recommender,
    users: Vec<CString>,
}

/// One ranked list; track ids stay valid until the list is freed.
pub struct ReactaRecommendation {
    tracks: Vec<CString>,
    scores: Vec<f64>,
    repeated: Vec<bool>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = CString::new(message.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> ReactaStatus {
    match err {
        Error::InvalidArgument(_) | Error::Dimension { .. } | Error::Shape { .. } => ReactaStatus::InvalidArgument,
        Error::Missing { .. } => ReactaStatus::Missing,
        Error::Io { .. } => ReactaStatus::Io,
        Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => ReactaStatus::Malformed,
        Error::Config(_) => ReactaStatus::Config,
        _ => ReactaStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into a status plus a message.
fn guard(f: impl FnOnce() -> Result<(), (ReactaStatus, String)>) -> ReactaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ReactaStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ReactaStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (ReactaStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (ReactaStatus, String)> {
    if p.is_null() {
        return Err((ReactaStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ReactaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null_arg(name: &str) -> (ReactaStatus, String) {
    (ReactaStatus::NullArgument, format!("{name} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn reacta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn reacta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a built data directory and a trained run.
///
/// `model` is one of `reacta-u`, `reacta-p`, `pisa-u`, `pisa-p`,
/// `actr-bpr`, `actr-repeat`; `run_dir` may be null for `actr-repeat`.
/// `decay` is the base-level decay (0.5 by default) and `session_gap` the
/// seconds between the last session and the predicted one (1800).
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommender_open(
    data_dir: *const c_char,
    run_dir: *const c_char,
    model: *const c_char,
    decay: f64,
    session_gap: i64,
    out: *mut *mut ReactaRecommender,
) -> ReactaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = ptr::null_mut();
        let data = read_str(data_dir, "data_dir")?;
        let run = if run_dir.is_null() { None } else { Some(read_str(run_dir, "run_dir")?) };
        let kind: ModelKind = read_str(model, "model")?.parse().map_err(lib_err)?;
        let inner = Recommender::open(Path::new(data), run.map(Path::new), kind, decay, session_gap).map_err(lib_err)?;
        let users = inner
            .users()
            .map(|u| CString::new(u).map_err(|_| (ReactaStatus::Malformed, format!("user id {u:?} holds a nul byte"))))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(ReactaRecommender { inner, users }));
        Ok(())
    })
}

/// Number of users known to the data directory; 0 for a null handle.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommender_user_count(rec: *const ReactaRecommender) -> usize {
    rec.as_ref().map_or(0, |r| r.users.len())
}

/// Id of user `i`, or null when out of range; valid while `rec` lives.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommender_user(rec: *const ReactaRecommender, i: usize) -> *const c_char {
    rec.as_ref()
        .and_then(|r| r.users.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Recommends the next session of `user` as a list of at most `k` tracks.
///
/// # Safety
/// `rec` must be a live handle, `user` nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommend(
    rec: *const ReactaRecommender,
    user: *const c_char,
    k: usize,
    out: *mut *mut ReactaRecommendation,
) -> ReactaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = ptr::null_mut();
        let rec = rec.as_ref().ok_or_else(|| null_arg("rec"))?;
        let user = read_str(user, "user")?;
        if k == 0 {
            return Err((ReactaStatus::InvalidArgument, "k must be at least 1".into()));
        }
        let list = rec.inner.recommend(user, k).map_err(lib_err)?;
        let tracks = list
            .tracks
            .iter()
            .map(|t| CString::new(t.track.as_str()).map_err(|_| (ReactaStatus::Internal, "track id holds a nul byte".into())))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(ReactaRecommendation {
            tracks,
            scores: list.tracks.iter().map(|t| t.score).collect(),
            repeated: list.tracks.iter().map(|t| t.repeated).collect(),
        }));
        Ok(())
    })
}

/// # Safety
/// `list` must be null or a live list.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommendation_len(list: *const ReactaRecommendation) -> usize {
    list.as_ref().map_or(0, |l| l.tracks.len())
}

/// Track id at rank `i`, or null when out of range.
///
/// # Safety
/// `list` must be null or a live list.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommendation_track(list: *const ReactaRecommendation, i: usize) -> *const c_char {
    list.as_ref()
        .and_then(|l| l.tracks.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Score at rank `i`, NaN when out of range.
///
/// # Safety
/// `list` must be null or a live list.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommendation_score(list: *const ReactaRecommendation, i: usize) -> f64 {
    list.as_ref().and_then(|l| l.scores.get(i).copied()).unwrap_or(f64::NAN)
}

/// Whether the track at rank `i` was heard in the observed sessions.
///
/// # Safety
/// `list` must be null or a live list.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommendation_repeated(list: *const ReactaRecommendation, i: usize) -> bool {
    list.as_ref().and_then(|l| l.repeated.get(i).copied()).unwrap_or(false)
}

/// # Safety
/// `list` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommendation_free(list: *mut ReactaRecommendation) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// # Safety
/// `rec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn reacta_recommender_free(rec: *mut ReactaRecommender) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}
