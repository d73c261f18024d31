//! C ABI for the evfleet toolkit.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. All functions returning `int` use the CLI's
//! exit-code convention: 0 = ok, 2 = config error, 3 = invariant breach,
//! 1 = any other failure, -1 = null argument / invalid UTF-8.
//!
//! The last error message is kept in thread-local storage and can be
//! retrieved with `evfleet_last_error`.

use evfleet::config::RunConfig;
use evfleet::fqi::QModel;
use evfleet::runner;
use evfleet::CaseId;
use libc::{c_char, c_int};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(err: &evfleet::Error) -> c_int {
    set_error(&err.to_string());
    err.exit_code() as c_int
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char) -> Option<&'a str> {
    if s.is_null() {
        set_error("null string argument");
        return None;
    }
    match CStr::from_ptr(s).to_str() {
        Ok(v) => Some(v),
        Err(_) => {
            set_error("string argument is not valid UTF-8");
            None
        }
    }
}

/// Opaque run configuration handle.
pub struct EvfleetConfig(RunConfig);

/// Opaque trained-model handle.
pub struct EvfleetModel(QModel);

/// Copy the last error message into `buf` (truncated, always NUL-terminated).
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn evfleet_last_error(buf: *mut c_char, len: usize) {
    if buf.is_null() || len == 0 {
        return;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        let n = bytes.len().min(len);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n - 1) = 0;
    });
}

/// Create a config with the built-in defaults for `case` (0, 1 or 2).
/// Returns null on an unknown case.
#[no_mangle]
pub extern "C" fn evfleet_config_new(case: c_int) -> *mut EvfleetConfig {
    match u32::try_from(case).map_err(|_| ()).and_then(|c| CaseId::from_index(c).map_err(|_| ()))
    {
        Ok(case) => Box::into_raw(Box::new(EvfleetConfig(RunConfig::defaults(case)))),
        Err(()) => {
            set_error("case must be 0, 1 or 2");
            std::ptr::null_mut()
        }
    }
}

/// Apply one `key=value` setting (same keys as the config file).
///
/// # Safety
/// `cfg` must be a live handle from `evfleet_config_new`; `key` and `value`
/// must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn evfleet_config_set(
    cfg: *mut EvfleetConfig,
    key: *const c_char,
    value: *const c_char,
) -> c_int {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config handle");
        return -1;
    };
    let (Some(key), Some(value)) = (str_arg(key), str_arg(value)) else {
        return -1;
    };
    match cfg.0.apply_kv(key, value) {
        Ok(()) => 0,
        Err(e) => code_of(&e),
    }
}

/// # Safety
/// `cfg` must come from `evfleet_config_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evfleet_config_free(cfg: *mut EvfleetConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the configured case end-to-end (training, evaluation, artifacts).
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn evfleet_run_case(cfg: *const EvfleetConfig) -> c_int {
    let Some(cfg) = cfg.as_ref() else {
        set_error("null config handle");
        return -1;
    };
    match runner::run_case(&cfg.0) {
        Ok(()) => 0,
        Err(e) => code_of(&e),
    }
}

/// Load a trained model from disk; null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn evfleet_model_load(path: *const c_char) -> *mut EvfleetModel {
    let Some(path) = str_arg(path) else {
        return std::ptr::null_mut();
    };
    match QModel::load(Path::new(path)) {
        Ok(m) => Box::into_raw(Box::new(EvfleetModel(m))),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Case index the model was trained for (0, 1 or 2), or -1 on null.
///
/// # Safety
/// `model` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn evfleet_model_case(model: *const EvfleetModel) -> c_int {
    match model.as_ref() {
        Some(m) => m.0.case.index() as c_int,
        None => -1,
    }
}

/// # Safety
/// `model` must come from `evfleet_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evfleet_model_free(model: *mut EvfleetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Greedy one-day rollout of a saved model into `out_dir/replay_trace.csv`.
///
/// # Safety
/// `model_path` and `out_dir` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn evfleet_replay(
    model_path: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> c_int {
    let (Some(model_path), Some(out_dir)) = (str_arg(model_path), str_arg(out_dir)) else {
        return -1;
    };
    match runner::replay(Path::new(model_path), seed, &PathBuf::from(out_dir)) {
        Ok(()) => 0,
        Err(e) => code_of(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn config_lifecycle_and_error_codes() {
        let cfg = evfleet_config_new(0);
        assert!(!cfg.is_null());
        let key = CString::new("days").unwrap();
        let bad = CString::new("not-a-number").unwrap();
        let good = CString::new("3").unwrap();
        unsafe {
            assert_eq!(evfleet_config_set(cfg, key.as_ptr(), bad.as_ptr()), 2);
            let mut buf = [0 as c_char; 128];
            evfleet_last_error(buf.as_mut_ptr(), buf.len());
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(msg.contains("days"), "unexpected message: {msg}");
            assert_eq!(evfleet_config_set(cfg, key.as_ptr(), good.as_ptr()), 0);
            evfleet_config_free(cfg);
        }
        assert!(evfleet_config_new(7).is_null());
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(evfleet_config_set(std::ptr::null_mut(), std::ptr::null(), std::ptr::null()), -1);
            assert_eq!(evfleet_run_case(std::ptr::null()), -1);
            assert_eq!(evfleet_model_case(std::ptr::null()), -1);
            assert!(evfleet_model_load(std::ptr::null()).is_null());
            evfleet_model_free(std::ptr::null_mut());
            evfleet_config_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn end_to_end_run_and_model_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = evfleet_config_new(0);
        let set = |k: &str, v: &str| {
            let k = CString::new(k).unwrap();
            let v = CString::new(v).unwrap();
            unsafe { evfleet_config_set(cfg, k.as_ptr(), v.as_ptr()) }
        };
        assert_eq!(set("days", "2"), 0);
        assert_eq!(set("evs", "4"), 0);
        assert_eq!(set("k_max", "1"), 0);
        assert_eq!(set("n_trees", "3"), 0);
        assert_eq!(set("eval_days", "1"), 0);
        assert_eq!(set("out_dir", dir.path().to_str().unwrap()), 0);
        unsafe {
            assert_eq!(evfleet_run_case(cfg), 0);
            evfleet_config_free(cfg);
            let path = CString::new(dir.path().join("model.bin").to_str().unwrap()).unwrap();
            let model = evfleet_model_load(path.as_ptr());
            assert!(!model.is_null());
            assert_eq!(evfleet_model_case(model), 0);
            evfleet_model_free(model);
        }
    }
}
