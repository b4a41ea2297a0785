//! C ABI for scoring and optimizing site allocations.
//!
//! Every entry point returns an [`SaStatus`]; on failure a message is kept
//! per thread and read with [`sa_last_error`]. Instances are opaque handles
//! released with [`sa_instance_free`]. Run options are passed as a TOML
//! string using the same keys as the command-line config file (for example
//! `"k = 4\nlambda3 = 1\nseed = 7"`); a null pointer selects the defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sitealloc::config::RunConfig;
use sitealloc::ingest::SynthParams;
use sitealloc::run::{self, Dataset, RunError};
use sitealloc::solver::Control;
use sitealloc::ScoreTriple;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Input files could not be read or parsed.
    Input = 3,
    /// Bad configuration string or parameters.
    Config = 4,
    UnknownSite = 5,
    InvalidAllocation = 6,
    SolveFailed = 7,
    /// The output buffer is shorter than the result.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Scores of one allocation. `d_optimality` is NaN when not computed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaScores {
    pub coverage: usize,
    pub d_optimality: f64,
    pub equity: f64,
    pub combined: f64,
}

/// Parameters of a synthetic county; zero fields take the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaSynthParams {
    pub m: usize,
    pub n_sites: usize,
    pub segregation: f64,
    pub seed: u64,
}

/// Opaque handle over a loaded region and its candidate sites.
pub struct SaInstance {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SaStatus, String);

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match &e {
            RunError::Config(_) | RunError::Setup(_) => SaStatus::Config,
            RunError::Ingest(_) => SaStatus::Input,
            RunError::UnknownSite(_) => SaStatus::UnknownSite,
            RunError::InvalidAllocation(_) => SaStatus::InvalidAllocation,
            RunError::Solve(_) => SaStatus::SolveFailed,
        };
        Self(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside sitealloc");
            SaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn config(p: *const c_char) -> Result<RunConfig, Failure> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    RunConfig::from_toml(text(p, "config")?).map_err(|e| Failure(SaStatus::Config, e.0))
}

unsafe fn handle<'a>(p: *const SaInstance) -> Result<&'a SaInstance, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SaStatus::NullArgument, "instance is null".into()))
}

fn scores(s: &ScoreTriple, combined: f64) -> SaScores {
    SaScores {
        coverage: s.coverage,
        d_optimality: s.d_optimality.unwrap_or(f64::NAN),
        equity: s.equity,
        combined,
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a region and its candidate sites. `strata` may be null.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_from_files(
    areas: *const c_char,
    strata: *const c_char,
    sites: *const c_char,
    out: *mut *mut SaInstance,
) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(SaStatus::NullArgument, "out is null".into()));
        }
        let areas = PathBuf::from(text(areas, "areas")?);
        let strata = if strata.is_null() {
            None
        } else {
            Some(PathBuf::from(text(strata, "strata")?))
        };
        let sites = PathBuf::from(text(sites, "sites")?);
        let data = Dataset::load(&areas, strata.as_deref(), &sites)
            .map_err(|e| Failure(SaStatus::Input, e.to_string()))?;
        *out = Box::into_raw(Box::new(SaInstance { data }));
        Ok(())
    })
}

/// Generates a seeded synthetic county.
///
/// # Safety
/// `params` must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_synth(
    params: *const SaSynthParams,
    out: *mut *mut SaInstance,
) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(SaStatus::NullArgument, "out is null".into()));
        }
        let base = SynthParams::default();
        let mut p = base.clone();
        if let Some(q) = params.as_ref() {
            p.m = if q.m == 0 { base.m } else { q.m };
            p.n_sites = if q.n_sites == 0 {
                base.n_sites.min(p.m)
            } else {
                q.n_sites
            };
            p.segregation = q.segregation;
            p.seed = q.seed;
        }
        let data = Dataset::synth(&p).map_err(|e| Failure(SaStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(SaInstance { data }));
        Ok(())
    })
}

/// Releases an instance. Null is ignored.
///
/// # Safety
/// `instance` must be null or come from a constructor above, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_free(instance: *mut SaInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Number of areas; 0 for a null handle.
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_num_areas(instance: *const SaInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.data.region.len())
}

/// Number of candidate sites before ownership filtering; 0 for a null handle.
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_num_sites(instance: *const SaInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.data.sites.len())
}

/// Copies the id of site `index` into `buf` as a NUL-terminated string.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sa_instance_site_id(
    instance: *const SaInstance,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> SaStatus {
    guard(|| {
        let inst = handle(instance)?;
        let site = inst.data.sites.get(index).ok_or_else(|| {
            Failure(
                SaStatus::UnknownSite,
                format!("site index {index} out of range"),
            )
        })?;
        if buf.is_null() {
            return Err(Failure(SaStatus::NullArgument, "buf is null".into()));
        }
        let bytes = site.id.as_bytes();
        if bytes.len() + 1 > len {
            return Err(Failure(
                SaStatus::BufferTooSmall,
                format!("site id needs {} bytes", bytes.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

fn ids_of(inst: &SaInstance, selected: &[usize]) -> Result<Vec<String>, Failure> {
    selected
        .iter()
        .map(|&i| {
            inst.data.sites.get(i).map(|s| s.id.clone()).ok_or_else(|| {
                Failure(
                    SaStatus::UnknownSite,
                    format!("site index {i} out of range"),
                )
            })
        })
        .collect()
}

/// Scores the allocation given as 0-based site indices.
///
/// # Safety
/// `selected` must point to `len` indices (may be null when `len` is 0);
/// `config` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_score(
    instance: *const SaInstance,
    config: *const c_char,
    selected: *const usize,
    len: usize,
    out: *mut SaScores,
) -> SaStatus {
    guard(|| {
        let inst = handle(instance)?;
        let cfg = self::config(config)?;
        if out.is_null() || (selected.is_null() && len > 0) {
            return Err(Failure(
                SaStatus::NullArgument,
                "selected or out is null".into(),
            ));
        }
        let selected = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(selected, len)
        };
        let ids = ids_of(inst, selected)?;
        let settings = cfg.resolve().map_err(|e| Failure(SaStatus::Config, e.0))?;
        let report = run::score(&inst.data, &settings, &ids)?;
        *out = scores(&report.scores, report.combined);
        Ok(())
    })
}

/// Optimizes and writes the chosen 0-based site indices, ascending, to
/// `selected_out`. `config` must set `k`.
///
/// # Safety
/// `selected_out` must point to `capacity` writable indices; `count_out`
/// and `out` must be writable; `config` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sa_optimize(
    instance: *const SaInstance,
    config: *const c_char,
    selected_out: *mut usize,
    capacity: usize,
    count_out: *mut usize,
    out: *mut SaScores,
) -> SaStatus {
    guard(|| {
        let inst = handle(instance)?;
        let cfg = self::config(config)?;
        if out.is_null() || count_out.is_null() || (selected_out.is_null() && capacity > 0) {
            return Err(Failure(
                SaStatus::NullArgument,
                "an output pointer is null".into(),
            ));
        }
        let settings = cfg.resolve().map_err(|e| Failure(SaStatus::Config, e.0))?;
        let report = run::optimize(&inst.data, &settings, Control::default())?;
        let mut idx: Vec<usize> = report
            .selected
            .iter()
            .filter_map(|id| inst.data.sites.iter().position(|s| &s.id == id))
            .collect();
        idx.sort_unstable();
        *count_out = idx.len();
        if idx.len() > capacity {
            return Err(Failure(
                SaStatus::BufferTooSmall,
                format!("{} indices do not fit in {capacity}", idx.len()),
            ));
        }
        if !idx.is_empty() {
            ptr::copy_nonoverlapping(idx.as_ptr(), selected_out, idx.len());
        }
        *out = scores(&report.scores, report.combined);
        Ok(())
    })
}
