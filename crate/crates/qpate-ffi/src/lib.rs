//! C ABI over the accountant, the Laplace vote aggregator, and the
//! variational-circuit simulator.
//!
//! Conventions: every function returns a [`QpateStatus`]; results come back
//! through out-pointers. Handles are opaque, created by `*_new` and released
//! by the matching `*_free`. On any non-`Ok` status,
//! [`qpate_last_error_message`] returns a thread-local description valid
//! until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};

use qpate::dp::{noisy_argmax, solve_gamma, LaplaceNoise, PrivacyLedger, VoteHistogram};
use qpate::error::Error;
use qpate::quantum::VqcBlock;

/// Result codes mirrored from the library's error taxonomy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpateStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Config = 3,
    Format = 4,
    Accounting = 5,
    Io = 6,
    Diverged = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let cstring = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &Error) -> QpateStatus {
    match err {
        Error::Config(_) => QpateStatus::Config,
        Error::Usage(_) => QpateStatus::Usage,
        Error::Format(_) => QpateStatus::Format,
        Error::Accounting(_) => QpateStatus::Accounting,
        Error::Diverged { .. } => QpateStatus::Diverged,
        Error::Io(_) => QpateStatus::Io,
    }
}

fn fail(err: Error) -> QpateStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null_pointer(what: &str) -> QpateStatus {
    set_error(format!("{what} must not be null"));
    QpateStatus::NullPointer
}

/// Message describing the most recent failure on this thread, or null when
/// every call so far succeeded. The pointer stays valid until the next
/// failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn qpate_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a `qpate_*` function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn qpate_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

// ---------------------------------------------------------------------------
// Privacy ledger
// ---------------------------------------------------------------------------

/// Opaque moments-accountant handle.
pub struct QpateLedger {
    inner: PrivacyLedger,
}

/// Creates a ledger for Laplace parameter `gamma` at failure probability
/// `delta`.
#[no_mangle]
pub extern "C" fn qpate_ledger_new(
    gamma: f64,
    delta: f64,
    out: *mut *mut QpateLedger,
) -> QpateStatus {
    if out.is_null() {
        return null_pointer("out");
    }
    match PrivacyLedger::new(gamma, delta) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(QpateLedger { inner })) };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Charges one label query to the ledger.
#[no_mangle]
pub extern "C" fn qpate_ledger_record_query(ledger: *mut QpateLedger) -> QpateStatus {
    let Some(ledger) = (unsafe { ledger.as_mut() }) else {
        return null_pointer("ledger");
    };
    ledger.inner.record_query();
    QpateStatus::Ok
}

/// Certified epsilon for the query history so far.
#[no_mangle]
pub extern "C" fn qpate_ledger_epsilon(ledger: *const QpateLedger, out: *mut f64) -> QpateStatus {
    let Some(ledger) = (unsafe { ledger.as_ref() }) else {
        return null_pointer("ledger");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    unsafe { *out = ledger.inner.epsilon() };
    QpateStatus::Ok
}

#[no_mangle]
pub extern "C" fn qpate_ledger_query_count(
    ledger: *const QpateLedger,
    out: *mut u64,
) -> QpateStatus {
    let Some(ledger) = (unsafe { ledger.as_ref() }) else {
        return null_pointer("ledger");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    unsafe { *out = ledger.inner.query_count() };
    QpateStatus::Ok
}

/// Human-readable accounting report; release it with `qpate_string_free`.
#[no_mangle]
pub extern "C" fn qpate_ledger_report(
    ledger: *const QpateLedger,
    out: *mut *mut c_char,
) -> QpateStatus {
    let Some(ledger) = (unsafe { ledger.as_ref() }) else {
        return null_pointer("ledger");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    let report = CString::new(ledger.inner.report()).expect("report has no NUL bytes");
    unsafe { *out = report.into_raw() };
    QpateStatus::Ok
}

/// Releases a ledger handle; a null pointer is ignored.
///
/// # Safety
/// `ledger` must come from `qpate_ledger_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qpate_ledger_free(ledger: *mut QpateLedger) {
    if !ledger.is_null() {
        drop(unsafe { Box::from_raw(ledger) });
    }
}

/// Largest gamma whose certified epsilon over `queries` label queries stays
/// at or below `target_epsilon`.
#[no_mangle]
pub extern "C" fn qpate_solve_gamma(
    target_epsilon: f64,
    queries: u64,
    delta: f64,
    out: *mut f64,
) -> QpateStatus {
    if out.is_null() {
        return null_pointer("out");
    }
    match solve_gamma(target_epsilon, queries, delta) {
        Ok(gamma) => {
            unsafe { *out = gamma };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Laplace noise and vote aggregation
// ---------------------------------------------------------------------------

/// Opaque seeded Laplace noise stream with scale `1/gamma`.
pub struct QpateLaplace {
    inner: LaplaceNoise,
}

#[no_mangle]
pub extern "C" fn qpate_laplace_new(
    gamma: f64,
    seed: u64,
    out: *mut *mut QpateLaplace,
) -> QpateStatus {
    if out.is_null() {
        return null_pointer("out");
    }
    match LaplaceNoise::new(gamma, seed) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(QpateLaplace { inner })) };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub extern "C" fn qpate_laplace_sample(noise: *mut QpateLaplace, out: *mut f64) -> QpateStatus {
    let Some(noise) = (unsafe { noise.as_mut() }) else {
        return null_pointer("noise");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    unsafe { *out = noise.inner.sample() };
    QpateStatus::Ok
}

/// # Safety
/// `noise` must come from `qpate_laplace_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qpate_laplace_free(noise: *mut QpateLaplace) {
    if !noise.is_null() {
        drop(unsafe { Box::from_raw(noise) });
    }
}

/// Noisy argmax over a vote histogram: each count is perturbed with one draw
/// from the stream and the index of the maximum is written to `out`.
#[no_mangle]
pub extern "C" fn qpate_noisy_argmax(
    counts: *const u32,
    len: usize,
    noise: *mut QpateLaplace,
    out: *mut usize,
) -> QpateStatus {
    if counts.is_null() {
        return null_pointer("counts");
    }
    let Some(noise) = (unsafe { noise.as_mut() }) else {
        return null_pointer("noise");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    let histogram = VoteHistogram::new(unsafe { std::slice::from_raw_parts(counts, len) }.to_vec());
    match noisy_argmax(&histogram, &mut noise.inner) {
        Ok(label) => {
            unsafe { *out = label };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Variational circuit
// ---------------------------------------------------------------------------

/// Opaque variational-circuit handle.
pub struct QpateVqc {
    inner: VqcBlock,
}

/// Builds a circuit block; `params` holds 3 * num_qubits * num_layers angles
/// as (phi, theta, omega) triples per qubit per layer.
#[no_mangle]
pub extern "C" fn qpate_vqc_new(
    num_qubits: usize,
    num_layers: usize,
    params: *const f64,
    params_len: usize,
    out: *mut *mut QpateVqc,
) -> QpateStatus {
    if params.is_null() {
        return null_pointer("params");
    }
    if out.is_null() {
        return null_pointer("out");
    }
    let params = unsafe { std::slice::from_raw_parts(params, params_len) }.to_vec();
    match VqcBlock::new(num_qubits, num_layers, params) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(QpateVqc { inner })) };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub extern "C" fn qpate_vqc_num_params(vqc: *const QpateVqc, out: *mut usize) -> QpateStatus {
    let Some(vqc) = (unsafe { vqc.as_ref() }) else {
        return null_pointer("vqc");
    };
    if out.is_null() {
        return null_pointer("out");
    }
    unsafe { *out = vqc.inner.num_params() };
    QpateStatus::Ok
}

/// Runs the circuit on an input feature vector; writes the two Pauli-Z
/// readout logits to `logits_out`.
#[no_mangle]
pub extern "C" fn qpate_vqc_forward(
    vqc: *const QpateVqc,
    input: *const f64,
    input_len: usize,
    logits_out: *mut f64,
) -> QpateStatus {
    let Some(vqc) = (unsafe { vqc.as_ref() }) else {
        return null_pointer("vqc");
    };
    if input.is_null() {
        return null_pointer("input");
    }
    if logits_out.is_null() {
        return null_pointer("logits_out");
    }
    let input = unsafe { std::slice::from_raw_parts(input, input_len) };
    match vqc.inner.forward(input) {
        Ok(logits) => {
            unsafe {
                *logits_out = logits[0];
                *logits_out.add(1) = logits[1];
            }
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parameter-shift gradient of `upstream . logits` with respect to every
/// circuit parameter; `grad_len` must equal the parameter count.
#[no_mangle]
pub extern "C" fn qpate_vqc_param_grad(
    vqc: *const QpateVqc,
    input: *const f64,
    input_len: usize,
    upstream: *const f64,
    grad_out: *mut f64,
    grad_len: usize,
) -> QpateStatus {
    let Some(vqc) = (unsafe { vqc.as_ref() }) else {
        return null_pointer("vqc");
    };
    if input.is_null() || upstream.is_null() {
        return null_pointer("input/upstream");
    }
    if grad_out.is_null() {
        return null_pointer("grad_out");
    }
    if grad_len != vqc.inner.num_params() {
        set_error(format!(
            "grad_len {grad_len} does not match the parameter count {}",
            vqc.inner.num_params()
        ));
        return QpateStatus::Usage;
    }
    let input = unsafe { std::slice::from_raw_parts(input, input_len) };
    let upstream = unsafe { [*upstream, *upstream.add(1)] };
    match vqc.inner.parameter_shift_grad(input, &upstream) {
        Ok(grad) => {
            unsafe { std::ptr::copy_nonoverlapping(grad.as_ptr(), grad_out, grad.len()) };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Shift-rule gradient of `upstream . logits` with respect to the input
/// features; `grad_len` must equal the input length.
#[no_mangle]
pub extern "C" fn qpate_vqc_input_grad(
    vqc: *const QpateVqc,
    input: *const f64,
    input_len: usize,
    upstream: *const f64,
    grad_out: *mut f64,
    grad_len: usize,
) -> QpateStatus {
    let Some(vqc) = (unsafe { vqc.as_ref() }) else {
        return null_pointer("vqc");
    };
    if input.is_null() || upstream.is_null() {
        return null_pointer("input/upstream");
    }
    if grad_out.is_null() {
        return null_pointer("grad_out");
    }
    if grad_len != input_len {
        set_error(format!(
            "grad_len {grad_len} does not match input_len {input_len}"
        ));
        return QpateStatus::Usage;
    }
    let input = unsafe { std::slice::from_raw_parts(input, input_len) };
    let upstream = unsafe { [*upstream, *upstream.add(1)] };
    match vqc.inner.input_gradient(input, &upstream) {
        Ok(grad) => {
            unsafe { std::ptr::copy_nonoverlapping(grad.as_ptr(), grad_out, grad.len()) };
            QpateStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `vqc` must come from `qpate_vqc_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qpate_vqc_free(vqc: *mut QpateVqc) {
    if !vqc.is_null() {
        drop(unsafe { Box::from_raw(vqc) });
    }
}
