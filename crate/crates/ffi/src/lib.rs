//! C ABI for the runtime: opaque handles, integer status codes, and a
//! header generated by cbindgen into `include/mpignite.h`.
//!
//! Conventions:
//! - Every fallible call returns [`MpigStatus`]; results travel through out
//!   parameters. `mpig_last_error_message` retrieves a description of the
//!   most recent failure on the calling thread.
//! - Handles (`MpigValue`, `MpigComm`, `MpigTicket`, `MpigResults`,
//!   `MpigRegistry`, `MpigMaster`) are opaque. Free them with their
//!   matching `*_free` function. The communicator passed into a parallel
//!   function is borrowed — never free it and never use it after the
//!   function returns; communicators returned by `mpig_comm_split` are
//!   owned and must be freed.
//! - Callbacks run on runtime-managed threads. The `user_data` pointer is
//!   passed through untouched; the caller is responsible for making the
//!   pointed-to state safe to touch from other threads.
//! - A parallel function reports failure by returning NULL; the rank is
//!   then marked failed with the calling thread's last error message.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use mpignite::{
    CodecError, CommError, Communicator, FunctionRegistry, Kind, LocalRuntime, Master, RoutingMode,
    RuntimeError, Ticket, TransportError, Value, Worker,
};

// ---------------------------------------------------------------------------
// status codes and thread-local error text
// ---------------------------------------------------------------------------

/// Status code returned by every fallible entry point.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpigStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    TypeMismatch = 4,
    MalformedPayload = 5,
    UnsupportedKind = 6,
    InvalidRank = 7,
    InvalidTag = 8,
    ReceiveAborted = 9,
    SplitProtocol = 10,
    CollectiveAborted = 11,
    Usage = 12,
    TransportFailure = 13,
    RoutingError = 14,
    AppError = 15,
    UnknownFunction = 16,
    JobFailed = 17,
    NoWorkers = 18,
    MasterError = 19,
    WorkerError = 20,
    Panic = 21,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(status: MpigStatus, message: impl Into<String>) -> MpigStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message.into()));
    status
}

fn take_error() -> Option<String> {
    LAST_ERROR.with(|slot| slot.borrow_mut().take())
}

fn codec_status(e: &CodecError) -> MpigStatus {
    match e {
        CodecError::KindMismatch { .. } => MpigStatus::TypeMismatch,
        CodecError::UnsupportedKind(_) => MpigStatus::UnsupportedKind,
        _ => MpigStatus::MalformedPayload,
    }
}

fn comm_status(e: &CommError) -> MpigStatus {
    match e {
        CommError::InvalidRank { .. } => MpigStatus::InvalidRank,
        CommError::InvalidTag(_) => MpigStatus::InvalidTag,
        CommError::Codec(c) => codec_status(c),
        CommError::Transport(TransportError::UnknownRank { .. }) => MpigStatus::RoutingError,
        CommError::Transport(_) => MpigStatus::TransportFailure,
        CommError::ReceiveAborted(_) => MpigStatus::ReceiveAborted,
        CommError::SplitProtocol(_) => MpigStatus::SplitProtocol,
        CommError::CollectiveAborted(_) => MpigStatus::CollectiveAborted,
        CommError::Usage(_) => MpigStatus::Usage,
        CommError::App(_) => MpigStatus::AppError,
    }
}

fn runtime_status(e: &RuntimeError) -> MpigStatus {
    match e {
        RuntimeError::UnknownFunction(_) => MpigStatus::UnknownFunction,
        RuntimeError::InvalidProcessCount => MpigStatus::InvalidArgument,
        RuntimeError::NoWorkers => MpigStatus::NoWorkers,
        RuntimeError::JobInProgress => MpigStatus::Usage,
        RuntimeError::JobFailed { .. } => MpigStatus::JobFailed,
        RuntimeError::Master(_) => MpigStatus::MasterError,
        RuntimeError::Worker(_) => MpigStatus::WorkerError,
        RuntimeError::Codec(c) => codec_status(c),
    }
}

fn comm_error(e: CommError) -> MpigStatus {
    set_error(comm_status(&e), e.to_string())
}

fn runtime_error(e: RuntimeError) -> MpigStatus {
    set_error(runtime_status(&e), e.to_string())
}

/// Run an entry point body, converting panics into a status.
fn guarded<F: FnOnce() -> MpigStatus>(f: F) -> MpigStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => set_error(MpigStatus::Panic, "panic inside mpignite FFI call"),
    }
}

/// Variant for pointer-returning constructors.
fn guarded_ptr<T, F: FnOnce() -> *mut T>(f: F) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(ptr) => ptr,
        Err(_) => {
            set_error(MpigStatus::Panic, "panic inside mpignite FFI call");
            std::ptr::null_mut()
        }
    }
}

/// Retrieve and clear the calling thread's last error message. Returns NULL
/// when no error is recorded. Free the string with `mpig_string_free`.
#[no_mangle]
pub extern "C" fn mpig_last_error_message() -> *mut c_char {
    match take_error() {
        Some(message) => CString::new(message.replace('\0', "?"))
            .map(CString::into_raw)
            .unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    }
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by an `mpig_` function
/// documented to allocate a string, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// values
// ---------------------------------------------------------------------------

/// Payload kind tags, matching the codec's one-byte wire tags.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpigKind {
    Unit = 0x00,
    I32 = 0x01,
    I64 = 0x02,
    F64 = 0x03,
    Bool = 0x04,
    Str = 0x05,
    Bytes = 0x06,
    ArrayI32 = 0x11,
    ArrayI64 = 0x12,
    ArrayF64 = 0x13,
    ArrayBool = 0x14,
    ArrayStr = 0x15,
    ArrayBytes = 0x16,
}

fn kind_from_c(kind: MpigKind) -> Kind {
    match kind {
        MpigKind::Unit => Kind::Unit,
        MpigKind::I32 => Kind::I32,
        MpigKind::I64 => Kind::I64,
        MpigKind::F64 => Kind::F64,
        MpigKind::Bool => Kind::Bool,
        MpigKind::Str => Kind::Str,
        MpigKind::Bytes => Kind::Bytes,
        MpigKind::ArrayI32 => Kind::ArrayI32,
        MpigKind::ArrayI64 => Kind::ArrayI64,
        MpigKind::ArrayF64 => Kind::ArrayF64,
        MpigKind::ArrayBool => Kind::ArrayBool,
        MpigKind::ArrayStr => Kind::ArrayStr,
        MpigKind::ArrayBytes => Kind::ArrayBytes,
    }
}

fn kind_to_c(kind: Kind) -> MpigKind {
    match kind {
        Kind::Unit => MpigKind::Unit,
        Kind::I32 => MpigKind::I32,
        Kind::I64 => MpigKind::I64,
        Kind::F64 => MpigKind::F64,
        Kind::Bool => MpigKind::Bool,
        Kind::Str => MpigKind::Str,
        Kind::Bytes => MpigKind::Bytes,
        Kind::ArrayI32 => MpigKind::ArrayI32,
        Kind::ArrayI64 => MpigKind::ArrayI64,
        Kind::ArrayF64 => MpigKind::ArrayF64,
        Kind::ArrayBool => MpigKind::ArrayBool,
        Kind::ArrayStr => MpigKind::ArrayStr,
        Kind::ArrayBytes => MpigKind::ArrayBytes,
    }
}

/// An owned typed value.
pub struct MpigValue {
    inner: Value,
}

fn value_out(value: Value) -> *mut MpigValue {
    Box::into_raw(Box::new(MpigValue { inner: value }))
}

/// # Safety
/// `ptr` must be valid or NULL.
unsafe fn borrow<'a, T>(ptr: *const T) -> Option<&'a T> {
    ptr.as_ref()
}

#[no_mangle]
pub extern "C" fn mpig_value_unit() -> *mut MpigValue {
    value_out(Value::Unit)
}

#[no_mangle]
pub extern "C" fn mpig_value_i32(v: i32) -> *mut MpigValue {
    value_out(Value::I32(v))
}

#[no_mangle]
pub extern "C" fn mpig_value_i64(v: i64) -> *mut MpigValue {
    value_out(Value::I64(v))
}

#[no_mangle]
pub extern "C" fn mpig_value_f64(v: f64) -> *mut MpigValue {
    value_out(Value::F64(v))
}

#[no_mangle]
pub extern "C" fn mpig_value_bool(v: bool) -> *mut MpigValue {
    value_out(Value::Bool(v))
}

/// Build a string value from NUL-terminated UTF-8. Returns NULL on invalid
/// input.
///
/// # Safety
/// `s` must be NULL or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_string(s: *const c_char) -> *mut MpigValue {
    guarded_ptr(|| {
        if s.is_null() {
            set_error(MpigStatus::NullPointer, "string pointer is null");
            return std::ptr::null_mut();
        }
        match CStr::from_ptr(s).to_str() {
            Ok(text) => value_out(Value::Str(text.to_string())),
            Err(_) => {
                set_error(MpigStatus::InvalidUtf8, "string is not valid UTF-8");
                std::ptr::null_mut()
            }
        }
    })
}

/// # Safety
/// `data` must point to `len` readable bytes (or `len` must be 0).
#[no_mangle]
pub unsafe extern "C" fn mpig_value_bytes(data: *const u8, len: usize) -> *mut MpigValue {
    guarded_ptr(|| {
        let bytes = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            set_error(MpigStatus::NullPointer, "byte pointer is null");
            return std::ptr::null_mut();
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        value_out(Value::Bytes(bytes))
    })
}

/// # Safety
/// `data` must point to `len` readable elements (or `len` must be 0).
#[no_mangle]
pub unsafe extern "C" fn mpig_value_array_i32(data: *const i32, len: usize) -> *mut MpigValue {
    guarded_ptr(|| {
        let items = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            set_error(MpigStatus::NullPointer, "array pointer is null");
            return std::ptr::null_mut();
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        value_out(Value::ArrayI32(items))
    })
}

/// # Safety
/// `data` must point to `len` readable elements (or `len` must be 0).
#[no_mangle]
pub unsafe extern "C" fn mpig_value_array_i64(data: *const i64, len: usize) -> *mut MpigValue {
    guarded_ptr(|| {
        let items = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            set_error(MpigStatus::NullPointer, "array pointer is null");
            return std::ptr::null_mut();
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        value_out(Value::ArrayI64(items))
    })
}

/// # Safety
/// `data` must point to `len` readable elements (or `len` must be 0).
#[no_mangle]
pub unsafe extern "C" fn mpig_value_array_f64(data: *const f64, len: usize) -> *mut MpigValue {
    guarded_ptr(|| {
        let items = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            set_error(MpigStatus::NullPointer, "array pointer is null");
            return std::ptr::null_mut();
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        value_out(Value::ArrayF64(items))
    })
}

/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_kind(
    value: *const MpigValue,
    out: *mut MpigKind,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        *out = kind_to_c(value.inner.kind());
        MpigStatus::Ok
    })
}

/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_i32(value: *const MpigValue, out: *mut i32) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::I32(v) => {
                *out = *v;
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected i32", other.kind()),
            ),
        }
    })
}

/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_i64(value: *const MpigValue, out: *mut i64) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::I64(v) => {
                *out = *v;
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected i64", other.kind()),
            ),
        }
    })
}

/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_f64(value: *const MpigValue, out: *mut f64) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::F64(v) => {
                *out = *v;
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected f64", other.kind()),
            ),
        }
    })
}

/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_bool(
    value: *const MpigValue,
    out: *mut bool,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::Bool(v) => {
                *out = *v;
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected bool", other.kind()),
            ),
        }
    })
}

/// Copy a string value out as a freshly allocated C string (free with
/// `mpig_string_free`).
///
/// # Safety
/// `value` must be a live value handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_string(
    value: *const MpigValue,
    out: *mut *mut c_char,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(out)) = (borrow(value), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::Str(s) => match CString::new(s.clone()) {
                Ok(c) => {
                    *out = c.into_raw();
                    MpigStatus::Ok
                }
                Err(_) => set_error(
                    MpigStatus::InvalidArgument,
                    "string contains interior NUL bytes",
                ),
            },
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected string", other.kind()),
            ),
        }
    })
}

/// Borrow the contents of a bytes value. The view is valid until the value
/// is freed.
///
/// # Safety
/// `value` must be a live value handle or NULL; `data`/`len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_bytes(
    value: *const MpigValue,
    data: *mut *const u8,
    len: *mut usize,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(data), Some(len)) = (borrow(value), data.as_mut(), len.as_mut())
        else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::Bytes(b) => {
                *data = b.as_ptr();
                *len = b.len();
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected bytes", other.kind()),
            ),
        }
    })
}

/// Borrow an array value's elements. The view is valid until the value is
/// freed.
///
/// # Safety
/// `value` must be a live value handle or NULL; `data`/`len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_array_i32(
    value: *const MpigValue,
    data: *mut *const i32,
    len: *mut usize,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(data), Some(len)) = (borrow(value), data.as_mut(), len.as_mut())
        else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::ArrayI32(v) => {
                *data = v.as_ptr();
                *len = v.len();
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected array<i32>", other.kind()),
            ),
        }
    })
}

/// Borrow an array value's elements. The view is valid until the value is
/// freed.
///
/// # Safety
/// `value` must be a live value handle or NULL; `data`/`len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_array_i64(
    value: *const MpigValue,
    data: *mut *const i64,
    len: *mut usize,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(data), Some(len)) = (borrow(value), data.as_mut(), len.as_mut())
        else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::ArrayI64(v) => {
                *data = v.as_ptr();
                *len = v.len();
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected array<i64>", other.kind()),
            ),
        }
    })
}

/// Borrow an array value's elements. The view is valid until the value is
/// freed.
///
/// # Safety
/// `value` must be a live value handle or NULL; `data`/`len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_get_array_f64(
    value: *const MpigValue,
    data: *mut *const f64,
    len: *mut usize,
) -> MpigStatus {
    guarded(|| {
        let (Some(value), Some(data), Some(len)) = (borrow(value), data.as_mut(), len.as_mut())
        else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match &value.inner {
            Value::ArrayF64(v) => {
                *data = v.as_ptr();
                *len = v.len();
                MpigStatus::Ok
            }
            other => set_error(
                MpigStatus::TypeMismatch,
                format!("value is {}, expected array<f64>", other.kind()),
            ),
        }
    })
}

/// # Safety
/// `value` must be a live value handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_clone(value: *const MpigValue) -> *mut MpigValue {
    guarded_ptr(|| match borrow(value) {
        Some(v) => value_out(v.inner.clone()),
        None => {
            set_error(MpigStatus::NullPointer, "value pointer is null");
            std::ptr::null_mut()
        }
    })
}

/// # Safety
/// `value` must be NULL or an owned value handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_value_free(value: *mut MpigValue) {
    if !value.is_null() {
        drop(Box::from_raw(value));
    }
}

// ---------------------------------------------------------------------------
// communicator operations
// ---------------------------------------------------------------------------

enum CommHandle {
    /// Lives only for the duration of one parallel-function call.
    Borrowed(*const Communicator),
    /// Produced by `mpig_comm_split`; freed by `mpig_comm_free`.
    Owned(Communicator),
}

/// An opaque communicator handle.
pub struct MpigComm {
    inner: CommHandle,
}

impl MpigComm {
    fn comm(&self) -> &Communicator {
        match &self.inner {
            // Valid while the parallel function that received the handle is
            // still on the stack, which is the documented contract.
            CommHandle::Borrowed(ptr) => unsafe { &**ptr },
            CommHandle::Owned(c) => c,
        }
    }
}

/// A pending asynchronous receive.
pub struct MpigTicket {
    inner: Ticket,
}

/// A parallel function body: called once per rank with a borrowed
/// communicator. Return an owned value, or NULL to fail the rank (the
/// thread's last error message, if any, becomes the diagnostic).
pub type MpigParallelFn =
    Option<unsafe extern "C" fn(comm: *mut MpigComm, user_data: *mut c_void) -> *mut MpigValue>;

/// A binary reduction: combine `a` and `b` (both borrowed) into an owned
/// result. Returning NULL aborts the job.
pub type MpigReduceFn = Option<
    unsafe extern "C" fn(
        a: *const MpigValue,
        b: *const MpigValue,
        user_data: *mut c_void,
    ) -> *mut MpigValue,
>;

/// Completion callback for an asynchronous receive. Runs on a
/// runtime-internal thread. On success `value` is owned by the callback;
/// on failure it is NULL.
pub type MpigTicketCallback =
    Option<unsafe extern "C" fn(status: MpigStatus, value: *mut MpigValue, user_data: *mut c_void)>;

#[derive(Clone, Copy)]
struct SendPtr(*mut c_void);
// The caller owns cross-thread safety of user_data; the pointer itself is
// just forwarded.
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// # Safety
/// `comm` must be a live communicator handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_rank(comm: *const MpigComm, out: *mut u32) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        *out = comm.comm().rank();
        MpigStatus::Ok
    })
}

/// # Safety
/// `comm` must be a live communicator handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_size(comm: *const MpigComm, out: *mut u32) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        *out = comm.comm().size();
        MpigStatus::Ok
    })
}

/// Send `value` (borrowed) to local rank `dst` with a non-negative tag.
/// Never blocks awaiting the receiver.
///
/// # Safety
/// `comm` and `value` must be live handles or NULL.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_send(
    comm: *const MpigComm,
    dst: u32,
    tag: i32,
    value: *const MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(value)) = (borrow(comm), borrow(value)) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match comm.comm().send(dst, tag, &value.inner) {
            Ok(()) => MpigStatus::Ok,
            Err(e) => comm_error(e),
        }
    })
}

/// Block until a message from `src` with `tag` arrives, decoded as `kind`.
///
/// # Safety
/// `comm` must be a live handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_receive(
    comm: *const MpigComm,
    src: u32,
    tag: i32,
    kind: MpigKind,
    out: *mut *mut MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match comm.comm().receive(src, tag, kind_from_c(kind)) {
            Ok(value) => {
                *out = value_out(value);
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

/// Post an asynchronous receive; the ticket completes when a matching
/// message arrives. Free the ticket with `mpig_ticket_free`.
///
/// # Safety
/// `comm` must be a live handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_receive_async(
    comm: *const MpigComm,
    src: u32,
    tag: i32,
    kind: MpigKind,
    out: *mut *mut MpigTicket,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match comm.comm().receive_async(src, tag, kind_from_c(kind)) {
            Ok(ticket) => {
                *out = Box::into_raw(Box::new(MpigTicket { inner: ticket }));
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

/// Block until the ticket completes and return the decoded value.
///
/// # Safety
/// `ticket` must be a live ticket handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_ticket_await(
    ticket: *const MpigTicket,
    out: *mut *mut MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(ticket), Some(out)) = (borrow(ticket), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match ticket.inner.wait() {
            Ok(value) => {
                *out = value_out(value);
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

/// # Safety
/// `ticket` must be a live ticket handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_ticket_is_complete(
    ticket: *const MpigTicket,
    out: *mut bool,
) -> MpigStatus {
    guarded(|| {
        let (Some(ticket), Some(out)) = (borrow(ticket), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        *out = ticket.inner.is_complete();
        MpigStatus::Ok
    })
}

/// Register a completion callback; it runs on a runtime-internal thread
/// with the decoded value (owned by the callback).
///
/// # Safety
/// `ticket` must be a live ticket handle or NULL; `user_data` must remain
/// valid until the callback has run.
#[no_mangle]
pub unsafe extern "C" fn mpig_ticket_on_complete(
    ticket: *const MpigTicket,
    callback: MpigTicketCallback,
    user_data: *mut c_void,
) -> MpigStatus {
    guarded(|| {
        let (Some(ticket), Some(callback)) = (borrow(ticket), callback) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        let user = SendPtr(user_data);
        ticket.inner.on_complete(move |outcome| {
            let user = user;
            match outcome {
                Ok(value) => callback(MpigStatus::Ok, value_out(value), user.0),
                Err(e) => callback(comm_status(&e), std::ptr::null_mut(), user.0),
            }
        });
        MpigStatus::Ok
    })
}

/// # Safety
/// `ticket` must be NULL or an owned ticket handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_ticket_free(ticket: *mut MpigTicket) {
    if !ticket.is_null() {
        drop(Box::from_raw(ticket));
    }
}

/// Partition the communicator by color, ordering members by (key, parent
/// rank). Writes NULL to `out` when `color` is -1 (opt out). Free the
/// returned communicator with `mpig_comm_free`.
///
/// # Safety
/// `comm` must be a live handle or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_split(
    comm: *const MpigComm,
    color: i32,
    key: i32,
    out: *mut *mut MpigComm,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match comm.comm().split(color, key) {
            Ok(Some(sub)) => {
                *out = Box::into_raw(Box::new(MpigComm {
                    inner: CommHandle::Owned(sub),
                }));
                MpigStatus::Ok
            }
            Ok(None) => {
                *out = std::ptr::null_mut();
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

/// Free a communicator returned by `mpig_comm_split`. Never call this on
/// the communicator passed into a parallel function.
///
/// # Safety
/// `comm` must be NULL or an owned communicator handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_free(comm: *mut MpigComm) {
    if !comm.is_null() {
        drop(Box::from_raw(comm));
    }
}

/// Collective broadcast: exactly the root passes a non-NULL `value`; every
/// member receives the root's value decoded as `kind`.
///
/// # Safety
/// `comm` must be a live handle or NULL; `value` NULL or live; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_broadcast(
    comm: *const MpigComm,
    root: u32,
    value: *const MpigValue,
    kind: MpigKind,
    out: *mut *mut MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(out)) = (borrow(comm), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        let at_root = borrow(value).map(|v| &v.inner);
        match comm.comm().broadcast(root, at_root, kind_from_c(kind)) {
            Ok(result) => {
                *out = value_out(result);
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

/// Collective all-reduce: fold every member's value with `f` in local-rank
/// order; every member receives the result.
///
/// # Safety
/// `comm` and `value` must be live handles or NULL; `out` writable;
/// `user_data` must be safe to touch from the reducing rank's thread.
#[no_mangle]
pub unsafe extern "C" fn mpig_comm_allreduce(
    comm: *const MpigComm,
    value: *const MpigValue,
    f: MpigReduceFn,
    user_data: *mut c_void,
    out: *mut *mut MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(comm), Some(value), Some(f), Some(out)) =
            (borrow(comm), borrow(value), f, out.as_mut())
        else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        let user = SendPtr(user_data);
        let fold = move |a: Value, b: Value| -> Value {
            let user = user;
            let pa = value_out(a);
            let pb = value_out(b);
            let result = unsafe { f(pa, pb, user.0) };
            unsafe {
                drop(Box::from_raw(pa));
                drop(Box::from_raw(pb));
            }
            if result.is_null() {
                // No error channel exists inside the fold; failing the rank
                // is the honest outcome.
                panic!("reduce function returned NULL");
            }
            unsafe { Box::from_raw(result) }.inner
        };
        match comm.comm().all_reduce(&value.inner, fold) {
            Ok(result) => {
                *out = value_out(result);
                MpigStatus::Ok
            }
            Err(e) => comm_error(e),
        }
    })
}

// ---------------------------------------------------------------------------
// registry, local execution, cluster roles
// ---------------------------------------------------------------------------

/// A name-keyed registry of parallel functions.
pub struct MpigRegistry {
    inner: FunctionRegistry,
}

/// Per-rank results of one job, indexed by rank.
pub struct MpigResults {
    inner: Vec<MpigValue>,
}

/// A running cluster master.
pub struct MpigMaster {
    inner: Master,
}

fn results_out(values: Vec<Value>) -> *mut MpigResults {
    Box::into_raw(Box::new(MpigResults {
        inner: values.into_iter().map(|v| MpigValue { inner: v }).collect(),
    }))
}

#[no_mangle]
pub extern "C" fn mpig_registry_new() -> *mut MpigRegistry {
    Box::into_raw(Box::new(MpigRegistry {
        inner: FunctionRegistry::new(),
    }))
}

/// Register `f` under `name`.
///
/// # Safety
/// `registry` must be a live registry handle; `name` a NUL-terminated
/// string; `user_data` safe to share across rank threads.
#[no_mangle]
pub unsafe extern "C" fn mpig_registry_register(
    registry: *mut MpigRegistry,
    name: *const c_char,
    f: MpigParallelFn,
    user_data: *mut c_void,
) -> MpigStatus {
    guarded(|| {
        let (Some(registry), Some(f)) = (registry.as_mut(), f) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        if name.is_null() {
            return set_error(MpigStatus::NullPointer, "name is null");
        }
        let Ok(name) = CStr::from_ptr(name).to_str() else {
            return set_error(MpigStatus::InvalidUtf8, "name is not valid UTF-8");
        };
        registry
            .inner
            .register(name, wrap_parallel_fn(f, user_data));
        MpigStatus::Ok
    })
}

/// # Safety
/// `registry` must be NULL or an owned registry handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_registry_free(registry: *mut MpigRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

fn wrap_parallel_fn(
    f: unsafe extern "C" fn(*mut MpigComm, *mut c_void) -> *mut MpigValue,
    user_data: *mut c_void,
) -> impl Fn(&Communicator, Option<&Value>) -> Result<Value, CommError> + Send + Sync + 'static {
    let user = SendPtr(user_data);
    move |comm: &Communicator, _params: Option<&Value>| {
        let user = user;
        let mut handle = MpigComm {
            inner: CommHandle::Borrowed(comm as *const Communicator),
        };
        let result = unsafe { f(&mut handle as *mut MpigComm, user.0) };
        if result.is_null() {
            let message =
                take_error().unwrap_or_else(|| "parallel function returned NULL".to_string());
            return Err(CommError::App(message));
        }
        Ok(unsafe { Box::from_raw(result) }.inner)
    }
}

/// Execute a parallel function across `n` ranked logical processes in this
/// process and collect the per-rank results.
///
/// # Safety
/// `f` must be callable from multiple threads; `user_data` must be safe to
/// share across them; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_run_local(
    f: MpigParallelFn,
    user_data: *mut c_void,
    n: u32,
    out: *mut *mut MpigResults,
) -> MpigStatus {
    guarded(|| {
        let (Some(f), Some(out)) = (f, out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        let runtime = LocalRuntime::new(Arc::new(FunctionRegistry::new()));
        let job = runtime.parallelize_fn(wrap_parallel_fn(f, user_data));
        match job.execute(n) {
            Ok(values) => {
                *out = results_out(values);
                MpigStatus::Ok
            }
            Err(e) => runtime_error(e),
        }
    })
}

/// # Safety
/// `results` must be a live results handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_results_len(
    results: *const MpigResults,
    out: *mut usize,
) -> MpigStatus {
    guarded(|| {
        let (Some(results), Some(out)) = (borrow(results), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        *out = results.inner.len();
        MpigStatus::Ok
    })
}

/// Borrow the value at `rank`. The pointer is valid until the results
/// handle is freed; use `mpig_value_clone` to keep it longer.
///
/// # Safety
/// `results` must be a live results handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_results_get(
    results: *const MpigResults,
    rank: usize,
    out: *mut *const MpigValue,
) -> MpigStatus {
    guarded(|| {
        let (Some(results), Some(out)) = (borrow(results), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match results.inner.get(rank) {
            Some(value) => {
                *out = value as *const MpigValue;
                MpigStatus::Ok
            }
            None => set_error(
                MpigStatus::InvalidArgument,
                format!("rank {rank} out of range ({} results)", results.inner.len()),
            ),
        }
    })
}

/// # Safety
/// `results` must be NULL or an owned results handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_results_free(results: *mut MpigResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Bind a master on `listen_addr` (e.g. "127.0.0.1:7077"; port 0 picks
/// one) serving functions from `registry` (cloned; the handle stays owned
/// by the caller).
///
/// # Safety
/// `listen_addr` must be a NUL-terminated string; `registry` a live
/// handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_master_bind(
    listen_addr: *const c_char,
    registry: *const MpigRegistry,
    out: *mut *mut MpigMaster,
) -> MpigStatus {
    guarded(|| {
        let (Some(registry), Some(out)) = (borrow(registry), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        if listen_addr.is_null() {
            return set_error(MpigStatus::NullPointer, "listen address is null");
        }
        let Ok(addr) = CStr::from_ptr(listen_addr).to_str() else {
            return set_error(MpigStatus::InvalidUtf8, "listen address is not valid UTF-8");
        };
        match Master::bind(addr, Arc::new(registry.inner.clone())) {
            Ok(master) => {
                *out = Box::into_raw(Box::new(MpigMaster { inner: master }));
                MpigStatus::Ok
            }
            Err(e) => runtime_error(e),
        }
    })
}

/// The master's bound address as "host:port" (free with
/// `mpig_string_free`).
///
/// # Safety
/// `master` must be a live master handle or NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_master_addr(
    master: *const MpigMaster,
    out: *mut *mut c_char,
) -> MpigStatus {
    guarded(|| {
        let (Some(master), Some(out)) = (borrow(master), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        match CString::new(master.inner.addr().to_string()) {
            Ok(s) => {
                *out = s.into_raw();
                MpigStatus::Ok
            }
            Err(_) => set_error(MpigStatus::InvalidArgument, "address contains NUL"),
        }
    })
}

/// Block until `count` workers have registered or `timeout_ms` elapses.
///
/// # Safety
/// `master` must be a live master handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mpig_master_wait_for_workers(
    master: *const MpigMaster,
    count: usize,
    timeout_ms: u64,
) -> MpigStatus {
    guarded(|| {
        let Some(master) = borrow(master) else {
            return set_error(MpigStatus::NullPointer, "master handle is null");
        };
        match master
            .inner
            .wait_for_workers(count, Duration::from_millis(timeout_ms))
        {
            Ok(()) => MpigStatus::Ok,
            Err(e) => runtime_error(e),
        }
    })
}

/// Execute the registered function `name` across `n` ranks on the cluster.
/// `routing` is 0 for peer-to-peer, 1 for master relay.
///
/// # Safety
/// `master` must be a live master handle; `name` a NUL-terminated string;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpig_master_execute(
    master: *const MpigMaster,
    name: *const c_char,
    n: u32,
    routing: i32,
    out: *mut *mut MpigResults,
) -> MpigStatus {
    guarded(|| {
        let (Some(master), Some(out)) = (borrow(master), out.as_mut()) else {
            return set_error(MpigStatus::NullPointer, "null argument");
        };
        if name.is_null() {
            return set_error(MpigStatus::NullPointer, "function name is null");
        }
        let Ok(name) = CStr::from_ptr(name).to_str() else {
            return set_error(MpigStatus::InvalidUtf8, "function name is not valid UTF-8");
        };
        let routing = match routing {
            0 => RoutingMode::PeerToPeer,
            1 => RoutingMode::MasterRelay,
            other => {
                return set_error(
                    MpigStatus::InvalidArgument,
                    format!("routing must be 0 (p2p) or 1 (relay), got {other}"),
                )
            }
        };
        let job = match master.inner.parallelize_func(name) {
            Ok(job) => job.with_routing(routing),
            Err(e) => return runtime_error(e),
        };
        match job.execute(n) {
            Ok(values) => {
                *out = results_out(values);
                MpigStatus::Ok
            }
            Err(e) => runtime_error(e),
        }
    })
}

/// Shut the cluster down, releasing every worker, and free the handle.
///
/// # Safety
/// `master` must be NULL or an owned master handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mpig_master_shutdown(master: *mut MpigMaster) -> MpigStatus {
    guarded(|| {
        if master.is_null() {
            return set_error(MpigStatus::NullPointer, "master handle is null");
        }
        match Box::from_raw(master).inner.shutdown() {
            Ok(()) => MpigStatus::Ok,
            Err(e) => runtime_error(e),
        }
    })
}

/// Serve as a worker: register with the master, execute assigned ranks,
/// and return when the master shuts the cluster down. Blocks the calling
/// thread for the lifetime of the cluster.
///
/// # Safety
/// `master_addr` and `listen_addr` must be NUL-terminated strings;
/// `registry` a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpig_worker_run(
    master_addr: *const c_char,
    listen_addr: *const c_char,
    registry: *const MpigRegistry,
) -> MpigStatus {
    guarded(|| {
        let Some(registry) = borrow(registry) else {
            return set_error(MpigStatus::NullPointer, "registry handle is null");
        };
        if master_addr.is_null() || listen_addr.is_null() {
            return set_error(MpigStatus::NullPointer, "address is null");
        }
        let (Ok(master_addr), Ok(listen_addr)) = (
            CStr::from_ptr(master_addr).to_str(),
            CStr::from_ptr(listen_addr).to_str(),
        ) else {
            return set_error(MpigStatus::InvalidUtf8, "address is not valid UTF-8");
        };
        let worker =
            match Worker::connect(master_addr, listen_addr, Arc::new(registry.inner.clone())) {
                Ok(w) => w,
                Err(e) => return runtime_error(e),
            };
        match worker.run() {
            Ok(()) => MpigStatus::Ok,
            Err(e) => runtime_error(e),
        }
    })
}
