//! C ABI for gpmnet.
//!
//! Objects cross the boundary as opaque handles (`GpmDataset`, `GpmGraph`,
//! `GpmFit`) owned by the caller and released with the matching `*_free`.
//! Every fallible call returns a [`GpmStatus`]; on failure the message is
//! kept per thread and read with [`gpm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gpmnet::gpm::{extract_graph, Convention, GpmMatrix};
use gpmnet::graphs::{hamming, UndirectedGraph};
use gpmnet::oracle::{verify, VerifyOptions};
use gpmnet::penalty::{PenaltyConfig, PenaltyKind};
use gpmnet::synthgen::{generate, Family, GenSpec};
use gpmnet::train::{fit, BasisConfig, TrainConfig};
use gpmnet::types::{load_dataset, Dataset, Schema};
use gpmnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpmPenalty {
    L1 = 0,
    AdaptiveL1 = 1,
    Scad = 2,
    Mcp = 3,
}

/// Fit options; fill with [`gpm_fit_options_default`] before editing.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpmFitOptions {
    pub penalty: GpmPenalty,
    pub lambda: f64,
    pub max_iters: u32,
    pub lr: f64,
    /// Number of RBF centers; 0 picks the default.
    pub k: u32,
    /// Minibatch size; 0 is full batch.
    pub batch: u32,
    pub seed: u64,
    /// Absolute edge threshold; negative selects the gap rule.
    pub tau: f64,
}

pub struct GpmDataset(Dataset);

pub struct GpmGraph(UndirectedGraph);

pub struct GpmFit {
    gpm: GpmMatrix,
    graph: UndirectedGraph,
    iterations: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GpmStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => GpmStatus::Parse,
        Error::Io { .. } => GpmStatus::Io,
        Error::NonFinite(_) => GpmStatus::Numeric,
        _ => GpmStatus::InvalidArgument,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), (GpmStatus, String)>) -> GpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpmStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            GpmStatus::Panic
        }
    }
}

fn lib(e: Error) -> (GpmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GpmStatus, String) {
    (GpmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (GpmStatus, String) {
    (GpmStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GpmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, v: T) {
    *out = Box::into_raw(Box::new(v));
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn gpm_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message (NUL-terminated) into `buf`. Returns the
/// number of bytes written excluding the NUL, or -1 if `buf` is null or too
/// small.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gpm_last_error_message(buf: *mut c_char, len: usize) -> i64 {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        if buf.is_null() || len < bytes.len() + 1 {
            return -1;
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        bytes.len() as i64
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a dataset from a CSV or JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_dataset_load(path: *const c_char, out: *mut *mut GpmDataset) -> GpmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let ds = load_dataset(&PathBuf::from(p), None).map_err(lib)?;
        put(out, GpmDataset(ds));
        Ok(())
    })
}

/// Builds an all-continuous dataset from `n × d` row-major values.
///
/// # Safety
/// `values` must point to `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_dataset_from_continuous(values: *const f64, n: usize, d: usize, out: *mut *mut GpmDataset) -> GpmStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let ds = Dataset::new(Schema::continuous(d), data).map_err(lib)?;
        put(out, GpmDataset(ds));
        Ok(())
    })
}

/// Generates a synthetic dataset and its true graph. `family` is one of
/// `butterfly-c`, `butterfly-d`, `butterfly-m`, `random-c`, `random-d`,
/// `random-m`.
///
/// # Safety
/// `family` must be NUL-terminated; `out_data` and `out_truth` writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_generate(
    family: *const c_char,
    d: usize,
    n: usize,
    seed: u64,
    out_data: *mut *mut GpmDataset,
    out_truth: *mut *mut GpmGraph,
) -> GpmStatus {
    guard(|| {
        if out_data.is_null() || out_truth.is_null() {
            return Err(null("output pointer"));
        }
        let fam: Family = str_arg(family, "family")?.parse().map_err(lib)?;
        let (ds, g) = generate(&GenSpec::new(fam, d, n, seed)).map_err(lib)?;
        put(out_data, GpmDataset(ds));
        put(out_truth, GpmGraph(g));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpm_dataset_free(ds: *mut GpmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_dataset_rows(ds: *const GpmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_dataset_cols(ds: *const GpmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.d())
}

/// # Safety
/// `opts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_options_default(opts: *mut GpmFitOptions) -> GpmStatus {
    guard(|| {
        let o = opts.as_mut().ok_or_else(|| null("opts"))?;
        let p = PenaltyConfig::default();
        let t = TrainConfig::default();
        *o = GpmFitOptions {
            penalty: GpmPenalty::Scad,
            lambda: p.lambda,
            max_iters: t.max_iters as u32,
            lr: t.lr,
            k: 0,
            batch: 0,
            seed: t.seed,
            tau: -1.0,
        };
        Ok(())
    })
}

/// Fits a model to `ds` and extracts its graph.
///
/// # Safety
/// `ds` must be a live handle; `opts` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit(ds: *const GpmDataset, opts: *const GpmFitOptions, out: *mut *mut GpmFit) -> GpmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match o.penalty {
            GpmPenalty::L1 => PenaltyKind::L1,
            GpmPenalty::AdaptiveL1 => PenaltyKind::AdaptiveL1,
            GpmPenalty::Scad => PenaltyKind::Scad,
            GpmPenalty::Mcp => PenaltyKind::Mcp,
        };
        let basis = BasisConfig { k: (o.k > 0).then_some(o.k as usize), ..BasisConfig::default() };
        let mut train = TrainConfig {
            lr: o.lr,
            max_iters: o.max_iters as usize,
            batch: (o.batch > 0).then_some(o.batch as usize),
            seed: o.seed,
            ..TrainConfig::default()
        };
        if o.tau >= 0.0 {
            train.threshold = gpmnet::gpm::ThresholdPolicy::Absolute(o.tau);
        }
        let r = fit(&ds.0, &basis, &PenaltyConfig::new(kind, o.lambda), &train).map_err(lib)?;
        let graph = extract_graph(&r.gpm, train.threshold);
        put(out, GpmFit { gpm: r.gpm, graph, iterations: r.iterations, converged: r.converged });
        Ok(())
    })
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_free(f: *mut GpmFit) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_iterations(f: *const GpmFit) -> usize {
    f.as_ref().map_or(0, |f| f.iterations)
}

/// 1 when training met the convergence rule, 0 otherwise.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_converged(f: *const GpmFit) -> i32 {
    f.as_ref().map_or(0, |f| f.converged as i32)
}

/// Copies the `d × d` GPM (row-major) into `buf`. `rooted` nonzero selects
/// the rooted convention.
///
/// # Safety
/// `f` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_omega(f: *const GpmFit, rooted: i32, buf: *mut f64, len: usize) -> GpmStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let m = if rooted != 0 { f.gpm.with_convention(Convention::Rooted) } else { f.gpm.clone() };
        let vals = m.matrix();
        if len < vals.len() {
            return Err((GpmStatus::BufferTooSmall, format!("need {} doubles, got {len}", vals.len())));
        }
        std::ptr::copy_nonoverlapping(vals.as_ptr(), buf, vals.len());
        Ok(())
    })
}

/// New graph handle holding the fitted graph.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_fit_graph(f: *const GpmFit, out: *mut *mut GpmGraph) -> GpmStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, GpmGraph(f.graph.clone()));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_graph_free(g: *mut GpmGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpm_graph_edge_count(g: *const GpmGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// Writes edges as `(i, j)` pairs with `i < j`, in ascending order, into
/// `buf` (`2 * edge_count` entries).
///
/// # Safety
/// `g` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gpm_graph_edges(g: *const GpmGraph, buf: *mut u32, len: usize) -> GpmStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let edges = g.0.edges();
        if len < 2 * edges.len() {
            return Err((GpmStatus::BufferTooSmall, format!("need {} values, got {len}", 2 * edges.len())));
        }
        for (t, (i, j)) in edges.into_iter().enumerate() {
            *buf.add(2 * t) = i as u32;
            *buf.add(2 * t + 1) = j as u32;
        }
        Ok(())
    })
}

/// Hamming distance between two graphs over the same variables.
///
/// # Safety
/// `a`, `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_graph_hamming(a: *const GpmGraph, b: *const GpmGraph, out: *mut usize) -> GpmStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = hamming(&a.0, &b.0).map_err(lib)?;
        Ok(())
    })
}

/// Runs the exact oracle battery; `*passed` is 1 iff every check passed.
///
/// # Safety
/// `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpm_verify(trials: usize, seed: u64, passed: *mut i32) -> GpmStatus {
    guard(|| {
        let passed = passed.as_mut().ok_or_else(|| null("passed"))?;
        if trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let report = verify(&VerifyOptions { trials, seed, ..Default::default() });
        if !report.passed {
            set_error(format!("failed checks: {}", report.failing().join(", ")));
        }
        *passed = report.passed as i32;
        Ok(())
    })
}
