//! C ABI over the geodyn core.
//!
//! Handles are opaque pointers created by `*_create`/`*_open` and released by
//! the matching `*_free`. Every fallible call returns a `GeodynStatus`; on
//! failure a description is kept per thread and can be copied out with
//! `geodyn_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use geodyn::corrdim::{Monitor, MonitorConfig};
use geodyn::decoding::{solve_entropy_temperature, DecodeError};
use geodyn::rmr::{Regulator, RegulatorConfig};
use geodyn::trace::{self, TraceError, TraceReader, TraceWriter};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeodynStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// No scaling region or an ill-conditioned estimate.
    Numerical = 5,
    EndOfTrace = 6,
    /// The entropy target lies above what the largest temperature reaches.
    EntropyClamp = 7,
    /// The entropy target lies below what the smallest temperature reaches.
    EntropyUnreachable = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: GeodynStatus, msg: impl Into<String>) -> GeodynStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> GeodynStatus) -> GeodynStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(GeodynStatus::Panic, "internal panic"),
    }
}

fn trace_status(e: &TraceError) -> GeodynStatus {
    match e {
        TraceError::Io(_) => GeodynStatus::Io,
        _ => GeodynStatus::Format,
    }
}

/// Copies the calling thread's last error message into `buf` as a NUL-terminated
/// string and returns the full message length in bytes, excluding the NUL.
/// Passing a null `buf` or zero `len` only reports the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn geodyn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn geodyn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, GeodynStatus> {
    if p.is_null() {
        return Err(fail(GeodynStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(GeodynStatus::InvalidArgument, "path is not UTF-8")),
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], GeodynStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(GeodynStatus::NullPointer, "buffer is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! handle {
    ($p:expr) => {
        match $p.as_mut() {
            Some(h) => h,
            None => return fail(GeodynStatus::NullPointer, "handle is null"),
        }
    };
}

macro_rules! out {
    ($p:expr) => {
        if $p.is_null() {
            return fail(GeodynStatus::NullPointer, "output pointer is null");
        }
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Sums entries `i` with equal `i mod k` into `out[0..k]`.
///
/// # Safety
/// `v` must be valid for `n` floats and `out` for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn geodyn_bin_project(
    v: *const f32,
    n: usize,
    k: usize,
    out: *mut f32,
    out_len: usize,
) -> GeodynStatus {
    guard(|| {
        let v = tri!(slice_arg(v, n));
        out!(out);
        if out_len < k {
            return fail(GeodynStatus::BufferTooSmall, format!("output holds {out_len} values, need {k}"));
        }
        match trace::bin_project(v, k) {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.0.as_ptr(), out, k);
                GeodynStatus::Ok
            }
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Temperature whose softmax over `logits` has entropy `target` nats.
/// On a clamp status `*temperature` holds the bound that was hit.
///
/// # Safety
/// `logits` must be valid for `n` doubles; `temperature` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_solve_entropy_temperature(
    logits: *const f64,
    n: usize,
    target: f64,
    tol: f64,
    temperature: *mut f64,
) -> GeodynStatus {
    guard(|| {
        let z = tri!(slice_arg(logits, n));
        out!(temperature);
        match solve_entropy_temperature(z, target, tol) {
            Ok(t) => {
                *temperature = t;
                GeodynStatus::Ok
            }
            Err(e @ DecodeError::EntropyClamp { temperature: t, .. }) => {
                *temperature = t;
                fail(GeodynStatus::EntropyClamp, e.to_string())
            }
            Err(e @ DecodeError::EntropyUnreachable { temperature: t, .. }) => {
                *temperature = t;
                fail(GeodynStatus::EntropyUnreachable, e.to_string())
            }
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

pub struct GeodynTraceWriter {
    inner: Option<TraceWriter>,
}

/// Creates a trace file; `dim == 0` takes the dimension from the first row.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_writer_create(
    path: *const c_char,
    dim: u32,
    out: *mut *mut GeodynTraceWriter,
) -> GeodynStatus {
    guard(|| {
        out!(out);
        let path = tri!(path_arg(path));
        let dim = (dim > 0).then_some(dim as usize);
        match TraceWriter::create(&path, dim) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(GeodynTraceWriter { inner: Some(w) }));
                GeodynStatus::Ok
            }
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `w` must come from `geodyn_trace_writer_create`; `row` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_writer_push(w: *mut GeodynTraceWriter, row: *const f32, len: usize) -> GeodynStatus {
    guard(|| {
        let w = handle!(w);
        let row = tri!(slice_arg(row, len));
        let Some(inner) = w.inner.as_mut() else {
            return fail(GeodynStatus::InvalidArgument, "writer already finished");
        };
        match inner.push(row) {
            Ok(()) => GeodynStatus::Ok,
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// Writes the final header. The handle stays valid until freed but accepts no rows.
///
/// # Safety
/// `w` must come from `geodyn_trace_writer_create`; `count` may be null.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_writer_finish(w: *mut GeodynTraceWriter, count: *mut u64) -> GeodynStatus {
    guard(|| {
        let w = handle!(w);
        let Some(inner) = w.inner.take() else {
            return fail(GeodynStatus::InvalidArgument, "writer already finished");
        };
        match inner.finish() {
            Ok(h) => {
                if !count.is_null() {
                    *count = h.count;
                }
                GeodynStatus::Ok
            }
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `w` must be null or come from `geodyn_trace_writer_create`, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_writer_free(w: *mut GeodynTraceWriter) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

pub struct GeodynTraceReader {
    inner: TraceReader,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_reader_open(path: *const c_char, out: *mut *mut GeodynTraceReader) -> GeodynStatus {
    guard(|| {
        out!(out);
        let path = tri!(path_arg(path));
        match TraceReader::open(&path) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(GeodynTraceReader { inner: r }));
                GeodynStatus::Ok
            }
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `r` must come from `geodyn_trace_reader_open`; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_reader_header(
    r: *mut GeodynTraceReader,
    dim: *mut u32,
    count: *mut u64,
) -> GeodynStatus {
    guard(|| {
        let r = handle!(r);
        let h = r.inner.header();
        if !dim.is_null() {
            *dim = h.dim;
        }
        if !count.is_null() {
            *count = h.count;
        }
        GeodynStatus::Ok
    })
}

/// Reads the next row into `buf`; returns `EndOfTrace` after the last row.
///
/// # Safety
/// `r` must come from `geodyn_trace_reader_open`; `buf` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_reader_next(r: *mut GeodynTraceReader, buf: *mut f32, len: usize) -> GeodynStatus {
    guard(|| {
        let r = handle!(r);
        out!(buf);
        let d = r.inner.dim();
        if len < d {
            return fail(GeodynStatus::BufferTooSmall, format!("buffer holds {len} values, row has {d}"));
        }
        match r.inner.read_row() {
            Ok(Some(row)) => {
                std::ptr::copy_nonoverlapping(row.0.as_ptr(), buf, d);
                GeodynStatus::Ok
            }
            Ok(None) => GeodynStatus::EndOfTrace,
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `r` must be null or come from `geodyn_trace_reader_open`, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodyn_trace_reader_free(r: *mut GeodynTraceReader) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

pub struct GeodynMonitor {
    inner: Monitor,
}

/// Exact streaming dimension monitor over `scales` log-spaced radii in `[eps0, eps1]`.
/// `bins == 0` feeds rows as given; otherwise rows are bin-projected to `bins` entries.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_monitor_create(
    eps0: f64,
    eps1: f64,
    scales: usize,
    bins: usize,
    out: *mut *mut GeodynMonitor,
) -> GeodynStatus {
    guard(|| {
        out!(out);
        let cfg = MonitorConfig {
            bins: (bins > 0).then_some(bins),
            eps0,
            eps1,
            scales,
            stride: 1,
            reservoir: None,
        };
        match Monitor::new(cfg, 0) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(GeodynMonitor { inner: m }));
                GeodynStatus::Ok
            }
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Appends one state. `*d` receives the current dimension and `*has_d` whether
/// a scaling region exists; either may be null.
///
/// # Safety
/// `m` must come from `geodyn_monitor_create`; `row` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn geodyn_monitor_push(
    m: *mut GeodynMonitor,
    row: *const f32,
    len: usize,
    d: *mut f64,
    has_d: *mut bool,
) -> GeodynStatus {
    guard(|| {
        let m = handle!(m);
        let row = tri!(slice_arg(row, len));
        match m.inner.push(row) {
            Ok(rec) => {
                let value = rec.and_then(|r| r.d);
                if !has_d.is_null() {
                    *has_d = value.is_some();
                }
                if let (Some(x), false) = (value, d.is_null()) {
                    *d = x;
                }
                GeodynStatus::Ok
            }
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `m` must come from `geodyn_monitor_create`; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_monitor_len(m: *mut GeodynMonitor, count: *mut u64) -> GeodynStatus {
    guard(|| {
        let m = handle!(m);
        out!(count);
        *count = m.inner.ledger().len();
        GeodynStatus::Ok
    })
}

/// Pair counts strictly inside each scale, cumulative over all points so far.
///
/// # Safety
/// `m` must come from `geodyn_monitor_create`; `buf` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn geodyn_monitor_counts(m: *mut GeodynMonitor, buf: *mut u64, len: usize) -> GeodynStatus {
    guard(|| {
        let m = handle!(m);
        out!(buf);
        let counts = m.inner.ledger().counts();
        if len < counts.len() {
            return fail(GeodynStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", counts.len()));
        }
        std::ptr::copy_nonoverlapping(counts.as_ptr(), buf, counts.len());
        GeodynStatus::Ok
    })
}

/// # Safety
/// `m` must be null or come from `geodyn_monitor_create`, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodyn_monitor_free(m: *mut GeodynMonitor) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

pub struct GeodynRegulator {
    inner: Regulator,
}

/// Regulator parameters; `geodyn_regulator_defaults` fills the standard values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GeodynRegulatorParams {
    pub interval: u32,
    pub lambda_min: f64,
    pub eta: f64,
    pub gamma_damp: f64,
    pub top: u32,
    /// Nonzero selects the as-written damping mode.
    pub as_written: u8,
    pub seed: u64,
}

#[no_mangle]
pub extern "C" fn geodyn_regulator_defaults() -> GeodynRegulatorParams {
    let c = RegulatorConfig::default();
    GeodynRegulatorParams {
        interval: c.interval,
        lambda_min: c.lambda_min,
        eta: c.eta,
        gamma_damp: c.gamma_damp,
        top: c.top as u32,
        as_written: 0,
        seed: c.seed,
    }
}

/// # Safety
/// `params` may be null for defaults; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_regulator_create(
    dim: usize,
    params: *const GeodynRegulatorParams,
    layer: u32,
    head: u32,
    out: *mut *mut GeodynRegulator,
) -> GeodynStatus {
    guard(|| {
        out!(out);
        let p = params.as_ref().copied().unwrap_or_else(|| geodyn_regulator_defaults());
        let cfg = RegulatorConfig {
            interval: p.interval,
            lambda_min: p.lambda_min,
            eta: p.eta,
            gamma_damp: p.gamma_damp,
            top: p.top as usize,
            mode: if p.as_written != 0 {
                geodyn::rmr::DampingMode::AsWritten
            } else {
                geodyn::rmr::DampingMode::SubspaceOnly
            },
            seed: p.seed,
            ..RegulatorConfig::default()
        };
        match Regulator::new(dim, cfg, layer, head) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(GeodynRegulator { inner: r }));
                GeodynStatus::Ok
            }
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Feeds one value row. `lambdas` receives up to `lambdas_len` estimates and
/// `*n_lambdas` their count; `*applied` reports whether the cache was damped.
/// Output pointers may be null.
///
/// # Safety
/// `r` must come from `geodyn_regulator_create`; `row` valid for `len`
/// doubles and `lambdas` for `lambdas_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn geodyn_regulator_observe(
    r: *mut GeodynRegulator,
    row: *const f64,
    len: usize,
    applied: *mut bool,
    lambdas: *mut f64,
    lambdas_len: usize,
    n_lambdas: *mut usize,
) -> GeodynStatus {
    guard(|| {
        let r = handle!(r);
        let row = tri!(slice_arg(row, len));
        match r.inner.observe(row) {
            Ok(rec) => {
                if !applied.is_null() {
                    *applied = rec.applied;
                }
                if !n_lambdas.is_null() {
                    *n_lambdas = rec.lambdas.len();
                }
                if !lambdas.is_null() {
                    let n = rec.lambdas.len().min(lambdas_len);
                    std::ptr::copy_nonoverlapping(rec.lambdas.as_ptr(), lambdas, n);
                }
                GeodynStatus::Ok
            }
            Err(geodyn::rmr::RmrError::Conditioning) => fail(GeodynStatus::Numerical, "ill-conditioned window"),
            Err(e) => fail(GeodynStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `r` must come from `geodyn_regulator_create`; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodyn_regulator_cache_len(r: *mut GeodynRegulator, count: *mut usize) -> GeodynStatus {
    guard(|| {
        let r = handle!(r);
        out!(count);
        *count = r.inner.cache().len();
        GeodynStatus::Ok
    })
}

/// Copies cached row `index` (oldest first, damping applied) into `buf`.
///
/// # Safety
/// `r` must come from `geodyn_regulator_create`; `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn geodyn_regulator_cache_row(
    r: *mut GeodynRegulator,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> GeodynStatus {
    guard(|| {
        let r = handle!(r);
        out!(buf);
        let Some(row) = r.inner.cache().get(index) else {
            return fail(GeodynStatus::InvalidArgument, format!("row {index} out of range"));
        };
        if len < row.len() {
            return fail(GeodynStatus::BufferTooSmall, format!("buffer holds {len} values, row has {}", row.len()));
        }
        std::ptr::copy_nonoverlapping(row.as_ptr(), buf, row.len());
        GeodynStatus::Ok
    })
}

/// # Safety
/// `r` must be null or come from `geodyn_regulator_create`, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodyn_regulator_free(r: *mut GeodynRegulator) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
