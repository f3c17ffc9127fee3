//! C interface to the emotune engine.
//!
//! Every function returns an [`EmtStatus`]. Failures leave a message that
//! [`emt_last_error_message`] returns for the calling thread. Labels cross
//! the boundary as indices in canonical order (see [`emt_label_name`]); a
//! non-target output is `-1`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use emotune::cli::{cmd_infer, cmd_pipeline, cmd_tune, InferTarget, TuneOptions};
use emotune::config::RunConfig;
use emotune::inference::majority_vote;
use emotune::{parse_label, ConfusionMatrix, EmotionLabel, EmotionWheel, Error, MetricReport, ParsedOutput};

/// Result codes. Codes 1 to 3 mirror the command line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmtStatus {
    Ok = 0,
    /// Bad configuration or usage.
    Config = 1,
    /// A model backend failed.
    Backend = 2,
    /// Bad data, journal or file system problem.
    Data = 3,
    NullPointer = 10,
    InvalidArgument = 11,
    InvalidUtf8 = 12,
    /// Nothing to measure, e.g. metrics of an empty matrix.
    Empty = 13,
    Panic = 99,
}

/// A wheel defining distance and polarity between labels.
pub struct EmtWheel(EmotionWheel);

/// Counts of (truth, prediction) pairs, non-target predictions included.
pub struct EmtConfusion(ConfusionMatrix);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EmtMetricReport {
    pub accuracy: f64,
    pub ecc: f64,
    /// Only meaningful when `has_emc` is non-zero.
    pub emc: f64,
    pub has_emc: i32,
    pub n_test: u64,
    pub n_correct: u64,
}

pub const EMT_NON_TARGET: i32 = -1;
pub const EMT_LABEL_COUNT: i32 = 8;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> EmtStatus {
    match err {
        Error::EmptyEvaluation(_) => EmtStatus::Empty,
        e => match e.exit_code() {
            2 => EmtStatus::Backend,
            3 => EmtStatus::Data,
            _ => EmtStatus::Config,
        },
    }
}

fn fail(status: EmtStatus, message: impl Into<String>) -> EmtStatus {
    set_error(message);
    status
}

/// Runs `f`, turning panics into [`EmtStatus::Panic`].
fn guard(f: impl FnOnce() -> EmtStatus) -> EmtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(EmtStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn from_result(r: emotune::Result<()>) -> EmtStatus {
    match r {
        Ok(()) => EmtStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, EmtStatus> {
    if p.is_null() {
        return Err(fail(EmtStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EmtStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn label_arg(i: i32, name: &str) -> Result<EmotionLabel, EmtStatus> {
    usize::try_from(i)
        .ok()
        .and_then(EmotionLabel::from_index)
        .ok_or_else(|| fail(EmtStatus::InvalidArgument, format!("{name} = {i} is not a label index")))
}

fn output_arg(i: i32, name: &str) -> Result<ParsedOutput, EmtStatus> {
    if i == EMT_NON_TARGET {
        Ok(ParsedOutput::NonTarget(String::new()))
    } else {
        label_arg(i, name).map(ParsedOutput::Label)
    }
}

fn output_code(o: &ParsedOutput) -> i32 {
    o.label().map_or(EMT_NON_TARGET, |l| l.index() as i32)
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(EmtStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn emt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn emt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static name of label `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn emt_label_name(index: i32) -> *const c_char {
    const NAMES: [&CStr; 8] = [
        c"amusement",
        c"awe",
        c"contentment",
        c"excitement",
        c"anger",
        c"disgust",
        c"fear",
        c"sadness",
    ];
    usize::try_from(index)
        .ok()
        .and_then(|i| NAMES.get(i))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Maps free model output to a label index, or [`EMT_NON_TARGET`].
///
/// # Safety
/// `raw` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_parse_label(raw: *const c_char, out: *mut i32) -> EmtStatus {
    guard(|| {
        non_null!(out);
        let raw = try_ffi!(str_arg(raw, "raw"));
        *out = output_code(&parse_label(raw, &EmotionLabel::ALL));
        EmtStatus::Ok
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn emt_wheel_new_default(out: *mut *mut EmtWheel) -> EmtStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(EmtWheel(EmotionWheel::default())));
        EmtStatus::Ok
    })
}

/// Builds a wheel from eight label indices in wheel order. Polarity follows
/// each label's usual valence.
///
/// # Safety
/// `order` must point to 8 readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn emt_wheel_new(order: *const i32, polarity_constant: u32, out: *mut *mut EmtWheel) -> EmtStatus {
    guard(|| {
        non_null!(order, out);
        let mut labels = Vec::with_capacity(8);
        for (i, &v) in std::slice::from_raw_parts(order, 8).iter().enumerate() {
            labels.push(try_ffi!(label_arg(v, &format!("order[{i}]"))));
        }
        let polarity: Vec<_> = EmotionLabel::ALL.iter().map(|&l| (l, l.canonical_polarity())).collect();
        match EmotionWheel::new(labels, &polarity, polarity_constant) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(EmtWheel(w)));
                EmtStatus::Ok
            }
            Err(e) => fail(EmtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `wheel` must come from a wheel constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn emt_wheel_free(wheel: *mut EmtWheel) {
    if !wheel.is_null() {
        drop(Box::from_raw(wheel));
    }
}

/// Emotional weight between two labels.
///
/// # Safety
/// `wheel` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_emotional_weight(wheel: *const EmtWheel, a: i32, b: i32, out: *mut u32) -> EmtStatus {
    guard(|| {
        non_null!(wheel, out);
        let a = try_ffi!(label_arg(a, "a"));
        let b = try_ffi!(label_arg(b, "b"));
        *out = (*wheel).0.weight(a, b);
        EmtStatus::Ok
    })
}

/// Circular distance between two labels on the wheel.
///
/// # Safety
/// `wheel` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_wheel_distance(wheel: *const EmtWheel, a: i32, b: i32, out: *mut u32) -> EmtStatus {
    guard(|| {
        non_null!(wheel, out);
        let a = try_ffi!(label_arg(a, "a"));
        let b = try_ffi!(label_arg(b, "b"));
        *out = (*wheel).0.distance(a, b);
        EmtStatus::Ok
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn emt_confusion_new(out: *mut *mut EmtConfusion) -> EmtStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(EmtConfusion(ConfusionMatrix::new())));
        EmtStatus::Ok
    })
}

/// # Safety
/// `cm` must come from [`emt_confusion_new`], or be null.
#[no_mangle]
pub unsafe extern "C" fn emt_confusion_free(cm: *mut EmtConfusion) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

/// Adds `n` samples of `truth` predicted as `predicted` (which may be
/// [`EMT_NON_TARGET`]).
///
/// # Safety
/// `cm` must be live.
#[no_mangle]
pub unsafe extern "C" fn emt_confusion_add(cm: *mut EmtConfusion, truth: i32, predicted: i32, n: u64) -> EmtStatus {
    guard(|| {
        non_null!(cm);
        let truth = try_ffi!(label_arg(truth, "truth"));
        match try_ffi!(output_arg(predicted, "predicted")) {
            ParsedOutput::Label(p) => (*cm).0.add(truth, p, n),
            ParsedOutput::NonTarget(_) => (*cm).0.add_non_target(truth, n),
        }
        EmtStatus::Ok
    })
}

/// Accuracy, ECC and EMC of the matrix under `wheel`.
///
/// # Safety
/// `cm` and `wheel` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_confusion_metrics(
    cm: *const EmtConfusion,
    wheel: *const EmtWheel,
    out: *mut EmtMetricReport,
) -> EmtStatus {
    guard(|| {
        non_null!(cm, wheel, out);
        match MetricReport::from_confusion(&(*cm).0, &(*wheel).0) {
            Ok(r) => {
                *out = EmtMetricReport {
                    accuracy: r.accuracy,
                    ecc: r.ecc,
                    emc: r.emc.unwrap_or(0.0),
                    has_emc: r.emc.is_some() as i32,
                    n_test: r.n_test,
                    n_correct: r.n_correct,
                };
                EmtStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Majority vote over `len` outputs given in selection order.
///
/// # Safety
/// `outputs` must point to `len` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn emt_majority_vote(outputs: *const i32, len: usize, out: *mut i32) -> EmtStatus {
    guard(|| {
        non_null!(outputs, out);
        let mut parsed = Vec::with_capacity(len);
        for (i, &v) in std::slice::from_raw_parts(outputs, len).iter().enumerate() {
            parsed.push(try_ffi!(output_arg(v, &format!("outputs[{i}]"))));
        }
        match majority_vote(&parsed) {
            Ok(o) => {
                *out = output_code(&o);
                EmtStatus::Ok
            }
            Err(e) => fail(EmtStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn load_config(path: &str) -> Result<RunConfig, EmtStatus> {
    RunConfig::load(Path::new(path), &[]).map_err(|e| fail(status_of(&e), e.to_string()))
}

/// Tunes prompts for one user as the `tune` command does, resuming any
/// journal unless `fresh` is non-zero.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn emt_tune(config_path: *const c_char, user_id: *const c_char, fresh: i32) -> EmtStatus {
    guard(|| {
        let config = try_ffi!(load_config(try_ffi!(str_arg(config_path, "config_path"))));
        let user = try_ffi!(str_arg(user_id, "user_id"));
        from_result(cmd_tune(&config, user, &TuneOptions { fresh: fresh != 0, max_events: None }).map(|_| ()))
    })
}

/// Runs voting inference on the user's held-out split and fills `out` with
/// its metrics under the configured wheel.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_infer(
    config_path: *const c_char,
    user_id: *const c_char,
    fresh: i32,
    out: *mut EmtMetricReport,
) -> EmtStatus {
    guard(|| {
        non_null!(out);
        let config = try_ffi!(load_config(try_ffi!(str_arg(config_path, "config_path"))));
        let user = try_ffi!(str_arg(user_id, "user_id"));
        match cmd_infer(&config, user, InferTarget::TestSplit, fresh != 0) {
            Ok(summary) => match summary.report {
                Some(r) => {
                    *out = EmtMetricReport {
                        accuracy: r.accuracy,
                        ecc: r.ecc,
                        emc: r.emc.unwrap_or(0.0),
                        has_emc: r.emc.is_some() as i32,
                        n_test: r.n_test,
                        n_correct: r.n_correct,
                    };
                    EmtStatus::Ok
                }
                None => fail(EmtStatus::Empty, "inference produced no labelled results"),
            },
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Runs every step for every user and returns the report table in
/// `report`, to be released with [`emt_string_free`].
///
/// # Safety
/// `config_path` must be NUL-terminated and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn emt_pipeline(config_path: *const c_char, fresh: i32, report: *mut *mut c_char) -> EmtStatus {
    guard(|| {
        non_null!(report);
        let config = try_ffi!(load_config(try_ffi!(str_arg(config_path, "config_path"))));
        match cmd_pipeline(&config, fresh != 0) {
            Ok(table) => {
                *report = CString::new(table.replace('\0', " ")).expect("NUL removed").into_raw();
                EmtStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_names_follow_canonical_order() {
        for l in EmotionLabel::ALL {
            let name = unsafe { CStr::from_ptr(emt_label_name(l.index() as i32)) };
            assert_eq!(name.to_str().unwrap(), l.name());
        }
        assert!(emt_label_name(8).is_null());
        assert!(emt_label_name(-1).is_null());
    }
}
