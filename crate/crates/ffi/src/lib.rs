//! C ABI over the dialcoord turn pipeline.
//!
//! Conventions:
//! - every fallible call returns a `DcStatus`; `DC_STATUS_OK` is zero;
//! - on failure, `dc_last_error_message` / `dc_last_error_code` describe
//!   the most recent error on the calling thread;
//! - strings returned through out-parameters are owned by the caller and
//!   released with `dc_string_free`;
//! - handles are released with `dc_engine_free`; a handle must not be used
//!   from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dialcoord::config::Config;
use dialcoord::dialogue::{DialogueHistory, Speaker, Task, Utterance};
use dialcoord::eval::MetricReport;
use dialcoord::pipeline::{mock_pipeline, TurnPipeline, TurnTrace};
use dialcoord::Error;

/// Coarse result categories; `dc_last_error_code` gives the exact cause.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Provider = 4,
    ModelNotLoaded = 5,
    Storage = 6,
    Numeric = 7,
    Internal = 8,
    Panic = 9,
}

impl DcStatus {
    /// Category for an engine error code.
    pub fn from_code(code: &str) -> Self {
        match code {
            "invalid_input"
            | "empty_history"
            | "oversize_turn"
            | "schema_violation"
            | "missing_placeholder"
            | "dimension_mismatch"
            | "signal_count_mismatch"
            | "degenerate_k"
            | "undefined_silhouette"
            | "empty_corpus"
            | "unknown_session"
            | "unknown_round"
            | "turn_in_progress" => DcStatus::InvalidInput,
            "provider_timeout"
            | "provider_rate_limited"
            | "provider_unavailable"
            | "provider_rejected"
            | "malformed_response"
            | "unparseable_candidates"
            | "empty_generation"
            | "too_many_failures" => DcStatus::Provider,
            "model_not_loaded" => DcStatus::ModelNotLoaded,
            "corrupt" | "version_mismatch" | "hash_mismatch" | "io" | "json" => DcStatus::Storage,
            "numeric_overflow" | "training_diverged" => DcStatus::Numeric,
            _ => DcStatus::Internal,
        }
    }
}

/// One conversation driven by a turn pipeline.
pub struct DcEngine {
    pipeline: TurnPipeline,
    history: DialogueHistory,
    traces: Vec<TurnTrace>,
}

struct LastError {
    code: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(code: &str, message: &str) {
    let clean = |s: &str| CString::new(s.replace('\0', " ")).expect("nul removed");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            code: clean(code),
            message: clean(message),
        })
    });
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Failure inside the wrapper: a status plus the fine-grained code.
struct Fail(DcStatus, String, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = e.code();
        Fail(DcStatus::from_code(code), code.to_string(), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(DcStatus::InvalidInput, "json".into(), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(
        DcStatus::NullPointer,
        "null_pointer".into(),
        format!("{what} is null"),
    )
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err(Fail(status, code, message))) => {
            set_error(&code, &message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error("panic", &message);
            DcStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        Fail(
            DcStatus::InvalidUtf8,
            "invalid_utf8".into(),
            format!("{what}: {e}"),
        )
    })
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c =
        CString::new(s).map_err(|e| Fail(DcStatus::Internal, "internal".into(), e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn engine_mut<'a>(p: *mut DcEngine) -> Result<&'a mut DcEngine, Fail> {
    p.as_mut().ok_or_else(|| null("engine"))
}

unsafe fn publish(out: *mut *mut DcEngine, pipeline: TurnPipeline) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let task = pipeline.task();
    *out = Box::into_raw(Box::new(DcEngine {
        pipeline,
        history: DialogueHistory::new(task),
        traces: Vec::new(),
    }));
    Ok(())
}

/// Creates an engine on the deterministic mock provider.
///
/// `task` is "esc" or "persuasion"; `n_d` is the embedding width.
///
/// # Safety
/// `task` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_new_mock(
    task: *const c_char,
    n_d: usize,
    out: *mut *mut DcEngine,
) -> DcStatus {
    guard(|| {
        let task: Task = read_str(task, "task")?.parse()?;
        publish(out, mock_pipeline(task, n_d)?)
    })
}

/// Creates an engine from a TOML config file for one task.
///
/// # Safety
/// `config_path` and `task` must be valid C strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_from_config(
    config_path: *const c_char,
    task: *const c_char,
    out: *mut *mut DcEngine,
) -> DcStatus {
    guard(|| {
        let cfg = Config::load(Path::new(read_str(config_path, "config_path")?))?;
        let task: Task = read_str(task, "task")?.parse()?;
        let mut pipelines = cfg.pipelines()?;
        let pipeline = pipelines.remove(&task).ok_or(Error::ModelNotLoaded)?;
        let pipeline = std::sync::Arc::try_unwrap(pipeline).map_err(|_| {
            Fail(
                DcStatus::Internal,
                "internal".into(),
                "pipeline is shared".into(),
            )
        })?;
        publish(out, pipeline)
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from a `dc_engine_new_*` call and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_free(engine: *mut DcEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Records a user message, runs one turn and returns its trace as JSON.
///
/// On failure the user message stays recorded; posting again retries.
///
/// # Safety
/// `engine` must be a live handle, `text` a valid C string, `out_json` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_post_message(
    engine: *mut DcEngine,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> DcStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let text = read_str(text, "text")?.trim();
        if out_json.is_null() {
            return Err(null("output pointer"));
        }
        let idx = engine.history.last().map_or(0, |u| u.turn_index + 1);
        engine
            .history
            .push_utterance(Utterance::new(Speaker::User, text, idx)?)?;
        let trace = engine.pipeline.run_turn(&engine.history)?;
        let json = serde_json::to_string(&trace)?;
        engine.history.push_utterance(trace.utterance.clone())?;
        engine.traces.push(trace);
        write_string(out_json, json)
    })
}

/// Writes the conversation so far as a JSON document.
///
/// # Safety
/// `engine` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_history_json(
    engine: *mut DcEngine,
    out_json: *mut *mut c_char,
) -> DcStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let json = serde_json::to_string(&engine.history)?;
        write_string(out_json, json)
    })
}

/// Writes the trace of `round` (1-based) as JSON.
///
/// # Safety
/// `engine` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_trace_json(
    engine: *mut DcEngine,
    round: usize,
    out_json: *mut *mut c_char,
) -> DcStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let trace = engine
            .traces
            .iter()
            .find(|t| t.round == round)
            .ok_or(Error::UnknownRound(round))?;
        write_string(out_json, serde_json::to_string(trace)?)
    })
}

/// The current round: one more than the number of completed system turns.
/// Returns 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_round(engine: *const DcEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.history.round())
}

/// Clears the conversation, keeping the pipeline.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_reset(engine: *mut DcEngine) -> DcStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        engine.history = DialogueHistory::new(engine.pipeline.task());
        engine.traces.clear();
        Ok(())
    })
}

/// Scores predictions against references. Both inputs are JSON arrays of
/// strings of equal length; the output is a JSON object of metrics.
///
/// # Safety
/// Inputs must be valid C strings and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_metrics_json(
    predictions_json: *const c_char,
    references_json: *const c_char,
    out_json: *mut *mut c_char,
) -> DcStatus {
    guard(|| {
        let preds: Vec<String> =
            serde_json::from_str(read_str(predictions_json, "predictions_json")?)?;
        let refs: Vec<String> =
            serde_json::from_str(read_str(references_json, "references_json")?)?;
        let report = MetricReport::compute(&preds, &refs)?;
        write_string(out_json, serde_json::to_string(&report)?)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last error on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null(), |e| e.message.as_ptr())
    })
}

/// Machine-readable code of the last error on this thread (e.g.
/// "unknown_round"), or null.
#[no_mangle]
pub extern "C" fn dc_last_error_code() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.code.as_ptr()))
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_map_to_categories() {
        assert_eq!(DcStatus::from_code("unknown_round"), DcStatus::InvalidInput);
        assert_eq!(DcStatus::from_code("provider_timeout"), DcStatus::Provider);
        assert_eq!(DcStatus::from_code("hash_mismatch"), DcStatus::Storage);
        assert_eq!(
            DcStatus::from_code("model_not_loaded"),
            DcStatus::ModelNotLoaded
        );
        assert_eq!(DcStatus::from_code("something_new"), DcStatus::Internal);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, DcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(dc_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }

    #[test]
    fn success_clears_error() {
        set_error("x", "y");
        assert_eq!(guard(|| Ok(())), DcStatus::Ok);
        assert!(dc_last_error_message().is_null());
    }
}
