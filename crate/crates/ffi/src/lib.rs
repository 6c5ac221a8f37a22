//! C ABI for the `dkps` library.
//!
//! Every fallible function returns a [`DkpsStatus`]. On failure a message is
//! kept per thread and can be read with [`dkps_last_error_message`] until the
//! next call on that thread. Datasets are opaque handles released with
//! [`dkps_dataset_free`]; strings returned by the library are released with
//! [`dkps_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dkps::cache::{self, BenchmarkDataset, EmbeddingFormat, ModelId, QueryId};
use dkps::config::{parse_toml, ExperimentFile, SynthFile};
use dkps::geometry::{classical_mds, DistanceMatrix};
use dkps::harness::{lofo_evaluate, predict_targets, PredictOptions};
use dkps::irt::{fit_ability, fit_difficulties, CorrectnessMatrix};
use dkps::predictors::{ClipOrder, Method};
use dkps::synth::generate_population;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Dataset = 5,
    UnknownId = 6,
    Numerical = 7,
    Config = 8,
    Utf8 = 9,
    Panic = 10,
}

/// Ensemble clipping order for [`DkpsPredictOptions`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkpsClipOrder {
    ComponentsThenEnsemble = 0,
    EnsembleOnly = 1,
}

/// A loaded benchmark dataset.
pub struct DkpsDataset {
    inner: BenchmarkDataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DkpsShape {
    pub num_models: usize,
    pub num_queries: usize,
    pub embedding_dim: usize,
    pub replicates: usize,
    pub num_families: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DkpsPredictOptions {
    pub dim: usize,
    /// Ensemble weight; NaN selects m / M.
    pub alpha: f64,
    pub clip_order: DkpsClipOrder,
    pub irt_threshold: f64,
    /// Leave the target's whole family out of the references.
    pub exclude_family: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DkpsRaschDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Marks a missing response in Rasch response matrices.
pub const DKPS_RESPONSE_MISSING: u8 = 255;

struct Failure {
    status: DkpsStatus,
    message: String,
}

impl Failure {
    fn new(status: DkpsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Failure::new(DkpsStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<dkps::Error> for Failure {
    fn from(e: dkps::Error) -> Self {
        let status = match &e {
            dkps::Error::Io { .. } => DkpsStatus::Io,
            dkps::Error::Parse { .. } => DkpsStatus::Parse,
            dkps::Error::Dataset(_) => DkpsStatus::Dataset,
            dkps::Error::UnknownId { .. } => DkpsStatus::UnknownId,
            dkps::Error::InvalidArgument(_) => DkpsStatus::InvalidArgument,
            dkps::Error::Numerical(_) => DkpsStatus::Numerical,
            dkps::Error::Config(_) => DkpsStatus::Config,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> DkpsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            DkpsStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            DkpsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DkpsStatus::Utf8, format!("{what} is not UTF-8")))
}

unsafe fn dataset<'a>(p: *const DkpsDataset) -> Result<&'a BenchmarkDataset, Failure> {
    p.as_ref()
        .map(|d| &d.inner)
        .ok_or_else(|| Failure::null("dataset"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::new(DkpsStatus::InvalidArgument, msg)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn dkps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dkps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn dkps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory, detecting the embedding storage format.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_load(
    dir: *const c_char,
    out: *mut *mut DkpsDataset,
) -> DkpsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let dir = Path::new(text(dir, "dir")?);
        let format = EmbeddingFormat::detect(dir)?;
        let inner = cache::load_dataset(dir, format)?;
        *out = Box::into_raw(Box::new(DkpsDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset handle.
///
/// # Safety
/// `ds` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_free(ds: *mut DkpsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes a dataset directory; `columnar` selects packed binary embeddings.
///
/// # Safety
/// `ds` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_save(
    ds: *const DkpsDataset,
    dir: *const c_char,
    columnar: bool,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        let format = if columnar {
            EmbeddingFormat::Columnar
        } else {
            EmbeddingFormat::RecordLines
        };
        cache::save_dataset(ds, Path::new(text(dir, "dir")?), format)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_shape(
    ds: *const DkpsDataset,
    out: *mut DkpsShape,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        *out = DkpsShape {
            num_models: ds.num_models(),
            num_queries: ds.num_queries(),
            embedding_dim: ds.embedding_dim(),
            replicates: ds.replicates(),
            num_families: ds.families().len(),
        };
        Ok(())
    })
}

/// Id of model `index`; release with [`dkps_string_free`].
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_model_id(
    ds: *const DkpsDataset,
    index: usize,
    out: *mut *mut c_char,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        if index >= ds.num_models() {
            return Err(invalid(format!("model index {index} out of range")));
        }
        *out = owned_string(ds.model(index).id.to_string());
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_benchmark_score(
    ds: *const DkpsDataset,
    index: usize,
    out: *mut f64,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        if index >= ds.num_models() {
            return Err(invalid(format!("model index {index} out of range")));
        }
        *out = ds.benchmark_score(index);
        Ok(())
    })
}

/// Checks a dataset directory without loading it. `passed` is false when
/// some model misses a query or a replicate; the reason is left in the last
/// error message while the call still returns `Ok`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `passed` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dkps_dataset_validate(
    dir: *const c_char,
    passed: *mut bool,
) -> DkpsStatus {
    let mut reason = None;
    let status = guard(|| {
        let passed = passed.as_mut().ok_or_else(|| Failure::null("passed"))?;
        let dir = Path::new(text(dir, "dir")?);
        let records = cache::read_records(dir, EmbeddingFormat::detect(dir)?)?;
        let report = cache::validate_common_query_set(&records);
        *passed = report.passed;
        if report.passed {
            if let Err(e) = BenchmarkDataset::from_records(records) {
                *passed = false;
                reason = Some(e.to_string());
            }
        } else {
            reason = Some(report.messages.join("; "));
        }
        Ok(())
    });
    if let Some(r) = reason {
        set_last_error(&r);
    }
    status
}

/// Classical MDS of a row-major `n x n` distance matrix into `dim`
/// dimensions. Writes `n * dim` row-major coordinates, optionally the full
/// descending spectrum (`n` values) and the count of clamped eigenvalues.
///
/// # Safety
/// `distances` must hold `n * n` values and `coordinates` room for
/// `n * dim`; `eigenvalues` must be null or hold `n` values; `clamped` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn dkps_classical_mds(
    distances: *const f64,
    n: usize,
    dim: usize,
    coordinates: *mut f64,
    eigenvalues: *mut f64,
    clamped: *mut usize,
) -> DkpsStatus {
    guard(|| {
        let cells = n.checked_mul(n).ok_or_else(|| invalid("n is too large"))?;
        let d = slice(distances, cells, "distances")?;
        let matrix = DistanceMatrix::new(n, d.to_vec())?;
        let mds = classical_mds(&matrix, dim)?;
        let coords = slice_mut(coordinates, n * dim, "coordinates")?;
        for i in 0..n {
            coords[i * dim..(i + 1) * dim].copy_from_slice(mds.coordinate(i));
        }
        if !eigenvalues.is_null() {
            let ev = slice_mut(eigenvalues, n, "eigenvalues")?;
            for (slot, v) in ev
                .iter_mut()
                .zip(mds.eigenvalues.iter().chain(std::iter::repeat(&0.0)))
            {
                *slot = *v;
            }
        }
        if let Some(c) = clamped.as_mut() {
            *c = mds.clamped;
        }
        Ok(())
    })
}

fn response(v: u8) -> Result<Option<bool>, Failure> {
    match v {
        0 => Ok(Some(false)),
        1 => Ok(Some(true)),
        DKPS_RESPONSE_MISSING => Ok(None),
        other => Err(invalid(format!("response {other} is not 0, 1 or missing"))),
    }
}

/// Fits Rasch item difficulties to a row-major `rows x cols` matrix of
/// responses (0, 1 or [`DKPS_RESPONSE_MISSING`]); writes `cols`
/// mean-centred difficulties.
///
/// # Safety
/// `responses` must hold `rows * cols` bytes, `difficulties` room for
/// `cols` values; `diagnostics` may be null.
#[no_mangle]
pub unsafe extern "C" fn dkps_rasch_fit(
    responses: *const u8,
    rows: usize,
    cols: usize,
    difficulties: *mut f64,
    diagnostics: *mut DkpsRaschDiagnostics,
) -> DkpsStatus {
    guard(|| {
        let cells = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("matrix is too large"))?;
        let data = slice(responses, cells, "responses")?
            .iter()
            .map(|&v| response(v))
            .collect::<Result<Vec<_>, _>>()?;
        let matrix = CorrectnessMatrix::new(rows, cols, data)?;
        let ids = (0..cols).map(|j| QueryId::new(format!("q{j}"))).collect();
        let bank = fit_difficulties(&matrix, ids)?;
        slice_mut(difficulties, cols, "difficulties")?.copy_from_slice(&bank.difficulties);
        if let Some(d) = diagnostics.as_mut() {
            *d = DkpsRaschDiagnostics {
                iterations: bank.diagnostics.iterations,
                converged: bank.diagnostics.converged,
                log_likelihood: bank.diagnostics.log_likelihood,
            };
        }
        Ok(())
    })
}

/// Maximum-likelihood ability for `n` binary responses to items of known
/// difficulty. `standard_error` and `clamped` may be null.
///
/// # Safety
/// `responses` and `difficulties` must hold `n` values; `theta` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dkps_rasch_ability(
    responses: *const u8,
    difficulties: *const f64,
    n: usize,
    theta: *mut f64,
    standard_error: *mut f64,
    clamped: *mut bool,
) -> DkpsStatus {
    guard(|| {
        let answers = slice(responses, n, "responses")?
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(invalid(format!("response {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let b = slice(difficulties, n, "difficulties")?;
        let theta = theta.as_mut().ok_or_else(|| Failure::null("theta"))?;
        let est = fit_ability(&answers, b)?;
        *theta = est.theta;
        if let Some(se) = standard_error.as_mut() {
            *se = est.standard_error;
        }
        if let Some(c) = clamped.as_mut() {
            *c = est.clamped;
        }
        Ok(())
    })
}

/// Defaults: d = 8, alpha = m / M, components clipped before ensembling,
/// IRT threshold 0.5, target family kept in the references.
#[no_mangle]
pub extern "C" fn dkps_predict_options_default() -> DkpsPredictOptions {
    let d = PredictOptions::default();
    DkpsPredictOptions {
        dim: d.dim,
        alpha: f64::NAN,
        clip_order: DkpsClipOrder::ComponentsThenEnsemble,
        irt_threshold: d.irt_threshold,
        exclude_family: false,
    }
}

/// Predicts `target`'s benchmark score with `method` (a method name such as
/// `"ensemble"` or `"dkps_knn1"`) from its responses to `queries`. Every
/// other model is a reference. `options` may be null for the defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `queries` must hold
/// `num_queries` strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dkps_predict(
    ds: *const DkpsDataset,
    target: *const c_char,
    queries: *const *const c_char,
    num_queries: usize,
    method: *const c_char,
    options: *const DkpsPredictOptions,
    out: *mut f64,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        let target = ModelId::new(text(target, "target")?);
        let t = ds.model_index(&target)?;
        let method: Method = text(method, "method")?.parse()?;
        let query_ids = slice(queries, num_queries, "queries")?
            .iter()
            .map(|&q| text(q, "query").map(QueryId::new))
            .collect::<Result<Vec<_>, _>>()?;
        let opts = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| dkps_predict_options_default());
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        let family = &ds.model(t).family;
        let references: Vec<ModelId> = ds
            .models()
            .iter()
            .filter(|r| r.id != target && !(opts.exclude_family && &r.family == family))
            .map(|r| r.id.clone())
            .collect();
        let options = PredictOptions {
            dim: opts.dim,
            alpha: (!opts.alpha.is_nan()).then_some(opts.alpha),
            clip_order: match opts.clip_order {
                DkpsClipOrder::ComponentsThenEnsemble => ClipOrder::ComponentsThenEnsemble,
                DkpsClipOrder::EnsembleOnly => ClipOrder::EnsembleOnly,
            },
            irt_threshold: opts.irt_threshold,
        };
        let predictions =
            predict_targets(ds, &references, &[target], &query_ids, &[method], &options)?;
        *out = predictions[0].value;
        Ok(())
    })
}

/// Generates a synthetic population from TOML text with a `[population]`
/// table (null for the defaults).
///
/// # Safety
/// `spec_toml` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dkps_synth_generate(
    spec_toml: *const c_char,
    out: *mut *mut DkpsDataset,
) -> DkpsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let spec = if spec_toml.is_null() {
            Default::default()
        } else {
            parse_toml::<SynthFile>(text(spec_toml, "spec_toml")?)?.population
        };
        let population = generate_population(&spec)?;
        *out = Box::into_raw(Box::new(DkpsDataset {
            inner: population.dataset,
        }));
        Ok(())
    })
}

/// Runs a leave-one-family-out evaluation described by TOML text (the
/// `dkps evaluate` file format) and returns the summary CSV and, when
/// `report_csv` is non-null, the per-cell report CSV. `workers = 0` uses
/// every logical core. Release both strings with [`dkps_string_free`].
///
/// # Safety
/// `ds` must be a live handle, `config_toml` NUL-terminated, `summary_csv`
/// valid and `report_csv` null or valid.
#[no_mangle]
pub unsafe extern "C" fn dkps_evaluate(
    ds: *const DkpsDataset,
    config_toml: *const c_char,
    workers: usize,
    summary_csv: *mut *mut c_char,
    report_csv: *mut *mut c_char,
) -> DkpsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        if summary_csv.is_null() {
            return Err(Failure::null("summary_csv"));
        }
        let file: ExperimentFile = parse_toml(text(config_toml, "config_toml")?)?;
        let mut config = file.to_config();
        config.workers = (workers > 0).then_some(workers);
        let report = lofo_evaluate(ds, &config)?;
        let render = |write: &dyn Fn(&mut Vec<u8>) -> dkps::Result<()>| -> Result<String, Failure> {
            let mut buf = Vec::new();
            write(&mut buf)?;
            String::from_utf8(buf)
                .map_err(|_| Failure::new(DkpsStatus::Utf8, "report is not UTF-8"))
        };
        let summary = render(&|b| report.write_summary_csv(b))?;
        let cells = if report_csv.is_null() {
            None
        } else {
            Some(render(&|b| report.write_report_csv(b))?)
        };
        *summary_csv = owned_string(summary);
        if let Some(cells) = cells {
            *report_csv = owned_string(cells);
        }
        Ok(())
    })
}
