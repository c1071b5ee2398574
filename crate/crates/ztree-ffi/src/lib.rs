//! C ABI over built decision trees: parse, serialize, render and predict
//! through opaque handles and integer error codes. The header is
//! generated by cbindgen into `include/ztree.h` at build time.
//!
//! Conventions:
//! - Trees are opaque `ZtreeTree` pointers owned by Rust; free them with
//!   `ztree_tree_free`.
//! - Strings returned by the library are NUL-terminated, UTF-8 and owned
//!   by the caller; free them with `ztree_string_free`.
//! - Fallible functions return `ZTREE_OK` (0) or a negative error code;
//!   `ztree_last_error` returns a message for the calling thread's most
//!   recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};

use ztree::tree::{
    deserialize, predict, render, serialize, DecisionTree, MissingPolicy, RenderStyle, Row,
    RowValue,
};

pub const ZTREE_OK: c_int = 0;
pub const ZTREE_ERR_NULL_ARGUMENT: c_int = -1;
pub const ZTREE_ERR_UTF8: c_int = -2;
pub const ZTREE_ERR_FORMAT: c_int = -3;
pub const ZTREE_ERR_PREDICT: c_int = -4;
pub const ZTREE_ERR_BAD_STYLE: c_int = -5;

/// Opaque decision tree handle.
pub struct ZtreeTree {
    inner: DecisionTree,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message).unwrap_or_else(|_| CString::new("invalid error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn to_c_string(s: String) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(_) => {
            set_error("string contains an interior NUL byte".to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        set_error("argument is NULL".to_string());
        return Err(ZTREE_ERR_NULL_ARGUMENT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".to_string());
        ZTREE_ERR_UTF8
    })
}

/// Message of the calling thread's most recent error. The pointer stays
/// valid until the next failing call on this thread. NULL when no error
/// has occurred.
#[no_mangle]
pub extern "C" fn ztree_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |message| message.as_ptr())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ztree_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Parses canonical tree JSON into a new handle stored in `out`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_parse(json: *const c_char, out: *mut *mut ZtreeTree) -> c_int {
    if out.is_null() {
        set_error("out pointer is NULL".to_string());
        return ZTREE_ERR_NULL_ARGUMENT;
    }
    let json = match utf8_arg(json) {
        Ok(json) => json,
        Err(code) => return code,
    };
    match deserialize(json) {
        Ok(tree) => {
            *out = Box::into_raw(Box::new(ZtreeTree { inner: tree }));
            ZTREE_OK
        }
        Err(e) => {
            set_error(e.to_string());
            ZTREE_ERR_FORMAT
        }
    }
}

/// Releases a handle returned by `ztree_tree_parse`. NULL is a no-op.
///
/// # Safety
/// `tree` must be NULL or a pointer returned by `ztree_tree_parse` that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_free(tree: *mut ZtreeTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Depth of the tree, or a negative error code.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_depth(tree: *const ZtreeTree) -> c_int {
    match tree.as_ref() {
        Some(tree) => tree.inner.depth() as c_int,
        None => {
            set_error("tree handle is NULL".to_string());
            ZTREE_ERR_NULL_ARGUMENT
        }
    }
}

/// Canonical JSON of the tree; caller frees with `ztree_string_free`.
/// NULL on error.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_to_json(tree: *const ZtreeTree) -> *mut c_char {
    match tree.as_ref() {
        Some(tree) => to_c_string(serialize(&tree.inner)),
        None => {
            set_error("tree handle is NULL".to_string());
            std::ptr::null_mut()
        }
    }
}

/// Rendering styles accepted by `ztree_tree_render`.
#[repr(C)]
pub enum ZtreeRenderStyle {
    ZtreeRenderText = 0,
    ZtreeRenderDot = 1,
}

/// Text or DOT rendering; caller frees with `ztree_string_free`. NULL on
/// error.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_render(tree: *const ZtreeTree, style: c_int) -> *mut c_char {
    let Some(tree) = tree.as_ref() else {
        set_error("tree handle is NULL".to_string());
        return std::ptr::null_mut();
    };
    let style = match style {
        0 => RenderStyle::Text,
        1 => RenderStyle::Dot,
        _ => {
            set_error(format!("unknown render style {style}"));
            return std::ptr::null_mut();
        }
    };
    to_c_string(render(&tree.inner, style))
}

fn row_from_json(tree: &DecisionTree, text: &str) -> Result<Row, String> {
    let doc: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| format!("row JSON: {e}"))?;
    let mut row = Row::new();
    for (key, value) in doc {
        let name = ztree::schema::normalize_identifier(&key)
            .map_err(|e| format!("row key {key:?}: {e}"))?;
        if tree.task.feature(&name).is_none() {
            return Err(format!(
                "row key {key:?} is not a feature of this tree's task"
            ));
        }
        match value {
            serde_json::Value::Number(n) => {
                let v = n
                    .as_f64()
                    .ok_or_else(|| format!("row value for {key:?} overflows"))?;
                row.set(&name, RowValue::Number(v));
            }
            serde_json::Value::String(s) => {
                let c = ztree::schema::normalize_identifier(&s)
                    .map_err(|e| format!("row value {s:?}: {e}"))?;
                row.set(&name, RowValue::Category(c));
            }
            serde_json::Value::Null => {}
            other => {
                return Err(format!(
                    "row value for {key:?} must be number, string or null, got {other}"
                ))
            }
        }
    }
    Ok(row)
}

/// Routes a JSON row object (`{"feature": value, ...}`) through the tree.
/// Returns a JSON object `{"label", "probs", "path"}` that the caller
/// frees with `ztree_string_free`; NULL on error. `missing_policy` 0
/// errors on missing values, 1 follows the more confident child.
///
/// # Safety
/// `tree` must be a live handle and `row_json` a valid NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn ztree_tree_predict_json(
    tree: *const ZtreeTree,
    row_json: *const c_char,
    missing_policy: c_int,
) -> *mut c_char {
    let Some(tree) = tree.as_ref() else {
        set_error("tree handle is NULL".to_string());
        return std::ptr::null_mut();
    };
    let row_json = match utf8_arg(row_json) {
        Ok(s) => s,
        Err(_) => return std::ptr::null_mut(),
    };
    let policy = match missing_policy {
        0 => MissingPolicy::Error,
        1 => MissingPolicy::MajorityBranch,
        _ => {
            set_error(format!("unknown missing policy {missing_policy}"));
            return std::ptr::null_mut();
        }
    };
    let row = match row_from_json(&tree.inner, row_json) {
        Ok(row) => row,
        Err(e) => {
            set_error(e);
            return std::ptr::null_mut();
        }
    };
    match predict(&tree.inner, &row, policy) {
        Ok(p) => {
            let probs: serde_json::Map<String, serde_json::Value> = p
                .probs
                .iter()
                .map(|(label, prob)| (label.to_string(), serde_json::json!(prob)))
                .collect();
            let path: Vec<String> = p.path.iter().map(|s| s.condition.clone()).collect();
            let doc = serde_json::json!({ "label": p.label, "probs": probs, "path": path });
            to_c_string(doc.to_string())
        }
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Frees a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a pointer returned by a `ztree_*` function that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ztree_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
