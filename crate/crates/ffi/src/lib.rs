//! C interface to the label refinement engine.
//!
//! Every function returns a [`C2fStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`c2f_last_error_message`] until
//! the next call on the same thread. Panics are caught at the boundary and
//! reported as `C2F_STATUS_PANIC`.
//!
//! Run configurations live behind an opaque [`C2fConfig`] handle created by
//! [`c2f_config_load`] or [`c2f_config_new`] and released with
//! [`c2f_config_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use c2f_core::config::{RSetting, RunConfig};
use c2f_core::corpus::{select_r, Corpus, SeedRatio, R_CANDIDATES};
use c2f_core::eval::{evaluate, f1_scores};
use c2f_core::pipeline::{read_predictions, run_pipeline};
use c2f_core::similarity::{score_all, Metric, SimilarityConfig};
use c2f_core::taxonomy::{CoarseId, Taxonomy};
use c2f_core::Error;
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum C2fStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Training = 6,
    Evaluation = 7,
    Panic = 8,
}

impl From<&Error> for C2fStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => C2fStatus::Io,
            Error::Format(_) | Error::NonFinite { .. } | Error::ZeroNorm { .. } | Error::Json(_) => {
                C2fStatus::Format
            }
            Error::Config(_) | Error::Taxonomy(_) | Error::Corpus(_) => C2fStatus::Config,
            Error::Similarity(_) => C2fStatus::InvalidArgument,
            Error::Training(_) => C2fStatus::Training,
            Error::Evaluation(_) => C2fStatus::Evaluation,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(C2fStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(C2fStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(C2fStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> C2fStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => C2fStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            C2fStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread; empty after success.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn c2f_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn c2f_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Picks the confident-set percentage from per-coarse seed counts.
///
/// `seeds[i]` and `totals[i]` describe coarse label `i`. Candidates are
/// 1, 5, 10, 15 and 20.
///
/// # Safety
/// `seeds` and `totals` must point to `n` readable values and `out_r` to a
/// writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn c2f_select_r(
    seeds: *const usize,
    totals: *const usize,
    n: usize,
    out_r: *mut u32,
) -> C2fStatus {
    guard(|| {
        let seeds = slice_arg(seeds, n, "seeds")?;
        let totals = slice_arg(totals, n, "totals")?;
        let out = out_arg(out_r, "out_r")?;
        if let Some(i) = (0..n).find(|&i| totals[i] == 0 || seeds[i] > totals[i]) {
            return Err(invalid(format!(
                "coarse {i}: need 0 <= seeds <= totals and totals > 0"
            )));
        }
        let ratios: Vec<SeedRatio> = (0..n)
            .map(|i| SeedRatio {
                coarse: CoarseId(i),
                seeds: seeds[i],
                total: totals[i],
            })
            .collect();
        *out = select_r(&ratios, &R_CANDIDATES)?;
        Ok(())
    })
}

/// Hub-corrected similarity of one passage to every prototype.
///
/// `prototypes` is row-major, `n_prototypes` rows of `dim` values. `metric`
/// is one of `"csls"`, `"cosine"`, `"manhattan"`, `"euclidean"`. Writes
/// `n_prototypes` scores to `out`.
///
/// # Safety
/// `passage` must hold `dim` values, `prototypes` `n_prototypes * dim`
/// values and `out` room for `n_prototypes` values. `metric` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn c2f_similarity(
    passage: *const f64,
    prototypes: *const f64,
    n_prototypes: usize,
    dim: usize,
    metric: *const c_char,
    k: usize,
    out: *mut f64,
) -> C2fStatus {
    guard(|| {
        if dim == 0 || n_prototypes == 0 {
            return Err(invalid("dim and n_prototypes must be positive"));
        }
        let p = slice_arg(passage, dim, "passage")?;
        let rows = slice_arg(prototypes, n_prototypes * dim, "prototypes")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let metric: Metric = str_arg(metric, "metric")?.parse()?;
        let view = ArrayView2::from_shape((n_prototypes, dim), rows)
            .map_err(|e| invalid(e.to_string()))?;
        let scores = score_all(p.into(), view, &SimilarityConfig { metric, k })?;
        slice::from_raw_parts_mut(out, n_prototypes).copy_from_slice(&scores);
        Ok(())
    })
}

/// Micro and macro F1 for class-index label arrays.
///
/// # Safety
/// `gold` and `predicted` must hold `n` values; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2f_f1_scores(
    gold: *const usize,
    predicted: *const usize,
    n: usize,
    n_classes: usize,
    out_micro: *mut f64,
    out_macro: *mut f64,
) -> C2fStatus {
    guard(|| {
        let gold = slice_arg(gold, n, "gold")?;
        let predicted = slice_arg(predicted, n, "predicted")?;
        let micro = out_arg(out_micro, "out_micro")?;
        let macro_ = out_arg(out_macro, "out_macro")?;
        (*micro, *macro_) = f1_scores(gold, predicted, n_classes)?;
        Ok(())
    })
}

/// Opaque run configuration.
pub struct C2fConfig {
    inner: RunConfig,
}

/// Headline numbers from a finished run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct C2fRunSummary {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub r_percent: u32,
    pub n_passages: usize,
    pub n_seeds: usize,
    pub n_warnings: usize,
}

/// Creates a configuration with default settings and the given inputs.
///
/// # Safety
/// All paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_new(
    taxonomy: *const c_char,
    corpus: *const c_char,
    passages: *const c_char,
    prototypes: *const c_char,
    output: *const c_char,
    out: *mut *mut C2fConfig,
) -> C2fStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = RunConfig {
            taxonomy: path_arg(taxonomy, "taxonomy")?,
            corpus: path_arg(corpus, "corpus")?,
            passages: path_arg(passages, "passages")?,
            prototypes: path_arg(prototypes, "prototypes")?,
            output: path_arg(output, "output")?,
            ..RunConfig::default()
        };
        *out = Box::into_raw(Box::new(C2fConfig { inner }));
        Ok(())
    })
}

/// Reads a TOML or JSON configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_load(path: *const c_char, out: *mut *mut C2fConfig) -> C2fStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = RunConfig::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(C2fConfig { inner }));
        Ok(())
    })
}

/// Sets the random seed.
///
/// # Safety
/// `config` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_set_seed(config: *mut C2fConfig, seed: u64) -> C2fStatus {
    guard(|| {
        out_arg(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

/// Sets the similarity metric by name.
///
/// # Safety
/// `config` must come from this library; `metric` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_set_metric(config: *mut C2fConfig, metric: *const c_char) -> C2fStatus {
    guard(|| {
        let c = out_arg(config, "config")?;
        c.inner.metric = str_arg(metric, "metric")?.parse()?;
        Ok(())
    })
}

/// Sets the confident-set percentage; 0 selects it from the seed ratios.
///
/// # Safety
/// `config` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_set_r(config: *mut C2fConfig, r_percent: u32) -> C2fStatus {
    guard(|| {
        let c = out_arg(config, "config")?;
        c.inner.r = match r_percent {
            0 => RSetting::Auto,
            n => n.to_string().parse()?,
        };
        Ok(())
    })
}

/// Turns the bootstrapping phase off or on.
///
/// # Safety
/// `config` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_set_no_bootstrap(config: *mut C2fConfig, no_bootstrap: bool) -> C2fStatus {
    guard(|| {
        out_arg(config, "config")?.inner.no_bootstrap = no_bootstrap;
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn c2f_config_free(config: *mut C2fConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Trains, predicts, writes artifacts to the output directory and fills
/// `out` with the headline numbers. F1 fields are NaN when the corpus has no
/// gold labels.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2f_run(config: *const C2fConfig, out: *mut C2fRunSummary) -> C2fStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        let s = run_pipeline(&config.inner)?;
        *out = C2fRunSummary {
            micro_f1: s.micro_f1.unwrap_or(f64::NAN),
            macro_f1: s.macro_f1.unwrap_or(f64::NAN),
            r_percent: s.r_percent,
            n_passages: s.n_passages,
            n_seeds: s.n_seeds,
            n_warnings: s.warnings,
        };
        Ok(())
    })
}

/// Scores a predictions TSV against the gold labels in a corpus file.
///
/// # Safety
/// Paths must be NUL-terminated strings; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2f_evaluate_files(
    taxonomy: *const c_char,
    corpus: *const c_char,
    predictions: *const c_char,
    out_micro: *mut f64,
    out_macro: *mut f64,
) -> C2fStatus {
    guard(|| {
        let tax = Taxonomy::load(path_arg(taxonomy, "taxonomy")?)?;
        let (corpus, gold) = Corpus::load(path_arg(corpus, "corpus")?, &tax)?;
        let preds = read_predictions(path_arg(predictions, "predictions")?, &corpus, &tax)?;
        let micro = out_arg(out_micro, "out_micro")?;
        let macro_ = out_arg(out_macro, "out_macro")?;
        let report = evaluate(&preds, &gold, &tax)?;
        *micro = report.micro_f1;
        *macro_ = report.macro_f1;
        Ok(())
    })
}
