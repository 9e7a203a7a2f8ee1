//! C ABI over mp-core.
//!
//! Every entry point returns an `MpStatus`. On failure the message is kept
//! per thread and can be read with `mp_last_error`. Strings handed out by
//! this library must be released with `mp_string_free`; handles with their
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mp_core::detect::report_json;
use mp_core::repo::Repository;
use mp_core::{ConflictReport, Error, MergeSession, ResolveOptions, Side, TableSnapshot};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    NotFound = 5,
    Conflict = 6,
    Io = 7,
    Invalid = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpSide {
    Left = 0,
    Right = 1,
}

/// An open repository.
pub struct MpRepo {
    repo: Repository,
}

/// The outcome of conflict detection between two branches.
pub struct MpReport {
    report: ConflictReport,
}

/// A reconciliation in progress between two branches.
pub struct MpSession {
    left: String,
    right: String,
    d0: TableSnapshot,
    session: MergeSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let status = match &e {
            Error::Parse(_) | Error::Csv { .. } => MpStatus::Parse,
            Error::SchemaMismatch(_) | Error::Eval(_) => MpStatus::Schema,
            Error::NotFound(_) => MpStatus::NotFound,
            Error::Conflict(_) => MpStatus::Conflict,
            Error::Io(_) => MpStatus::Io,
            _ => MpStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            MpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MpStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(MpStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(MpStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(MpStatus::NullArgument, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(MpStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(MpStatus::Invalid, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Create a repository at `root` from the CSV file at `csv_path`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_repo_init(
    root: *const c_char,
    csv_path: *const c_char,
    table: *const c_char,
    out: *mut *mut MpRepo,
) -> MpStatus {
    guard(|| {
        let root = text(root, "root")?;
        let csv = text(csv_path, "csv_path")?;
        let table = text(table, "table")?;
        let file = File::open(csv).map_err(Error::from)?;
        let repo = Repository::init(root, file, table)?;
        put(out, MpRepo { repo })
    })
}

/// # Safety
/// `root` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_repo_open(root: *const c_char, out: *mut *mut MpRepo) -> MpStatus {
    guard(|| {
        let repo = Repository::open(text(root, "root")?)?;
        put(out, MpRepo { repo })
    })
}

/// # Safety
/// `repo` must come from `mp_repo_open`/`mp_repo_init` or be null.
#[no_mangle]
pub unsafe extern "C" fn mp_repo_free(repo: *mut MpRepo) {
    if !repo.is_null() {
        drop(Box::from_raw(repo));
    }
}

/// Append one SQL statement to `branch`.
///
/// # Safety
/// `repo` must be a live handle; strings must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mp_repo_commit(
    repo: *mut MpRepo,
    branch: *const c_char,
    statement: *const c_char,
) -> MpStatus {
    guard(|| {
        let r = handle(repo, "repo")?;
        let branch = text(branch, "branch")?;
        let stmt = text(statement, "statement")?;
        r.repo.commit(branch, stmt)?;
        Ok(())
    })
}

/// The current table of `branch` as CSV.
///
/// # Safety
/// `repo` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_repo_snapshot_csv(
    repo: *mut MpRepo,
    branch: *const c_char,
    out: *mut *mut c_char,
) -> MpStatus {
    guard(|| {
        let r = handle(repo, "repo")?;
        let snap = r.repo.branch_snapshot(text(branch, "branch")?)?;
        put_string(out, mp_core::csvio::to_export_string(&snap))
    })
}

/// Run conflict detection between the pending histories of two branches.
///
/// # Safety
/// `repo` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_detect(
    repo: *mut MpRepo,
    left: *const c_char,
    right: *const c_char,
    out: *mut *mut MpReport,
) -> MpStatus {
    guard(|| {
        let r = handle(repo, "repo")?;
        let (d0, h1, h2) = r.repo.merge_inputs(text(left, "left")?, text(right, "right")?)?;
        let report = mp_core::detect(&d0, &h1, &h2)?;
        put(out, MpReport { report })
    })
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_report_auto_mergeable(report: *const MpReport) -> bool {
    report.as_ref().is_some_and(|r| r.report.auto_mergeable)
}

/// Number of flagged rows; 0 for a null handle.
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mp_report_conflict_count(report: *const MpReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.conflict_set.len())
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_report_json(report: *const MpReport, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| Failure(MpStatus::NullArgument, "report is null".into()))?;
        put_string(out, report_json(&r.report).to_string())
    })
}

/// # Safety
/// `report` must come from `mp_detect` or be null.
#[no_mangle]
pub unsafe extern "C" fn mp_report_free(report: *mut MpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Begin reconciling `left` with `right`.
///
/// # Safety
/// `repo` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_session_start(
    repo: *mut MpRepo,
    left: *const c_char,
    right: *const c_char,
    out: *mut *mut MpSession,
) -> MpStatus {
    guard(|| {
        let r = handle(repo, "repo")?;
        let (left, right) = (text(left, "left")?, text(right, "right")?);
        let (d0, h1, h2) = r.repo.merge_inputs(left, right)?;
        let session = MergeSession::start(&d0, &h1, &h2, ResolveOptions::default())?;
        put(out, MpSession { left: left.into(), right: right.into(), d0, session })
    })
}

/// # Safety
/// `session` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mp_session_is_done(session: *const MpSession) -> bool {
    session.as_ref().is_some_and(|s| s.session.is_done())
}

/// # Safety
/// `session` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mp_session_questions(session: *const MpSession) -> usize {
    session.as_ref().map_or(0, |s| s.session.questions())
}

/// Current session state as JSON: either the pending prompt or the final order.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_session_state_json(session: *const MpSession, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| Failure(MpStatus::NullArgument, "session is null".into()))?;
        let json = serde_json::to_string(&s.session.state).map_err(Error::from)?;
        put_string(out, json)
    })
}

/// Say which of the two prompted modifications goes first.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_session_answer(session: *mut MpSession, first: MpSide) -> MpStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let side = match first {
            MpSide::Left => Side::Left,
            MpSide::Right => Side::Right,
        };
        s.session.answer(&s.d0, side)?;
        Ok(())
    })
}

/// Write the merged result of a finished session to `target`.
///
/// # Safety
/// Both handles must be live; `target` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mp_session_finalize(
    repo: *mut MpRepo,
    session: *const MpSession,
    target: *const c_char,
) -> MpStatus {
    guard(|| {
        let r = handle(repo, "repo")?;
        let s = session.as_ref().ok_or_else(|| Failure(MpStatus::NullArgument, "session is null".into()))?;
        let target = text(target, "target")?;
        let order = s
            .session
            .result()
            .ok_or_else(|| Failure(MpStatus::Conflict, "session still needs answers".into()))?
            .clone();
        r.repo.merge_finalize(&s.left, &s.right, &order, target)?;
        Ok(())
    })
}

/// # Safety
/// `session` must come from `mp_session_start` or be null.
#[no_mangle]
pub unsafe extern "C" fn mp_session_free(session: *mut MpSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
