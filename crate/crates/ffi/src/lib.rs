//! C ABI over the `sflpon` simulator.
//!
//! Every entry point returns an [`SflponStatus`]. On failure a description is
//! kept per thread and can be read with [`sflpon_last_error`]. Experiments are
//! opaque handles created by `sflpon_experiment_new*` and released with
//! [`sflpon_experiment_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sflpon::aggregation::{aggregate_two_step, cps_aggregate_one_step};
use sflpon::config::parse_config;
use sflpon::ponsim::round_bandwidth_saving;
use sflpon::reporting::write_csv;
use sflpon::{ClientId, ClientUpdate, Error, Experiment, ExperimentConfig, Mode, ModelParams, RoundRecord};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SflponStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    EmptyInput = 5,
    MixedOnu = 6,
    ConfigError = 7,
    RuntimeError = 8,
    IoError = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SflponMode {
    Classical = 0,
    Sfl = 1,
}

/// One round of telemetry, mirrored field for field.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SflponRoundRecord {
    pub round: u32,
    pub mode: SflponMode,
    pub n_selected: usize,
    pub n_involved: usize,
    pub upstream_bits: f64,
    pub saving_fraction: f64,
    pub accuracy: f64,
    pub t_total_min_s: f64,
    pub t_total_mean_s: f64,
    pub t_total_max_s: f64,
    pub round_time_s: f64,
    pub k_total: u64,
}

impl From<&RoundRecord> for SflponRoundRecord {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            mode: match r.mode {
                Mode::Classical => SflponMode::Classical,
                Mode::Sfl => SflponMode::Sfl,
            },
            n_selected: r.n_selected,
            n_involved: r.n_involved,
            upstream_bits: r.upstream_bits,
            saving_fraction: r.saving_fraction,
            accuracy: r.accuracy,
            t_total_min_s: r.t_total_min_s,
            t_total_mean_s: r.t_total_mean_s,
            t_total_max_s: r.t_total_max_s,
            round_time_s: r.round_time_s,
            k_total: r.k_total,
        }
    }
}

/// Opaque experiment handle.
pub struct SflponExperiment {
    inner: Experiment,
    records: Vec<RoundRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(SflponStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => SflponStatus::DimensionMismatch,
            Error::NonFiniteWeight { .. } => SflponStatus::NonFinite,
            Error::EmptyInput | Error::EmptySelection => SflponStatus::EmptyInput,
            Error::MixedOnu { .. } => SflponStatus::MixedOnu,
            Error::ZeroSamples | Error::InvalidCounts(_) => SflponStatus::InvalidArgument,
            Error::Io { .. } => SflponStatus::IoError,
            _ if e.is_config_error() => SflponStatus::ConfigError,
            _ => SflponStatus::RuntimeError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SflponStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SflponStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SflponStatus::Ok,
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
            SflponStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SflponStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sflpon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL if the last call
/// succeeded. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sflpon_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

fn publish(exp: Experiment, out: *mut *mut SflponExperiment) {
    let handle = Box::new(SflponExperiment {
        inner: exp,
        records: Vec::new(),
    });
    // SAFETY: checked non-null by the caller of `publish`.
    unsafe { *out = Box::into_raw(handle) };
}

/// Creates an experiment with the default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_new_default(out: *mut *mut SflponExperiment) -> SflponStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        publish(Experiment::new(ExperimentConfig::default())?, out);
        Ok(())
    })
}

/// Creates an experiment from a JSON configuration. Missing fields take
/// their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_from_json(
    json: *const c_char,
    out: *mut *mut SflponExperiment,
) -> SflponStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let cfg = parse_config(text, Path::new("<json>"))?;
        publish(Experiment::new(cfg)?, out);
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `exp` must come from one of the constructors and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_free(exp: *mut SflponExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Runs one round and writes its record to `out` (which may be NULL).
///
/// # Safety
/// `exp` must be a live handle; `out`, if non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_run_round(
    exp: *mut SflponExperiment,
    out: *mut SflponRoundRecord,
) -> SflponStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null("exp"))?;
        let rec = exp.inner.run_round()?;
        if !out.is_null() {
            *out = SflponRoundRecord::from(&rec);
        }
        exp.records.push(rec);
        Ok(())
    })
}

/// Number of rounds run so far, or 0 for a null handle.
///
/// # Safety
/// `exp` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_rounds_run(exp: *const SflponExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.records.len())
}

/// Length of the global parameter vector, or 0 for a null handle.
///
/// # Safety
/// `exp` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_model_dim(exp: *const SflponExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.inner.global().params.dim())
}

/// Copies the current global parameters into `buf`, which holds `len` values.
///
/// # Safety
/// `exp` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_global_params(
    exp: *const SflponExperiment,
    buf: *mut f64,
    len: usize,
) -> SflponStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        let params = exp.inner.global().params.as_slice();
        if len < params.len() {
            return Err(Failure(
                SflponStatus::BufferTooSmall,
                format!("buffer holds {len} values, model has {}", params.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(params.as_ptr(), buf, params.len());
        Ok(())
    })
}

/// Writes the records of all rounds run so far as CSV.
///
/// # Safety
/// `exp` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sflpon_experiment_write_csv(
    exp: *const SflponExperiment,
    path: *const c_char,
) -> SflponStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        let path = str_arg(path, "path")?;
        write_csv(&exp.records, Path::new(path))?;
        Ok(())
    })
}

unsafe fn read_updates(
    n: usize,
    dim: usize,
    onu: *const u32,
    client: *const u32,
    samples: *const u64,
    weights: *const f64,
) -> Result<Vec<ClientUpdate>, Failure> {
    if n == 0 {
        return Err(Failure(SflponStatus::EmptyInput, "no clients".into()));
    }
    let onu = slice_arg(onu, n, "onu")?;
    let client = slice_arg(client, n, "client")?;
    let samples = slice_arg(samples, n, "samples")?;
    let total = n
        .checked_mul(dim)
        .ok_or_else(|| Failure(SflponStatus::InvalidArgument, "n * dim overflows".into()))?;
    let weights = slice_arg(weights, total, "weights")?;
    (0..n)
        .map(|i| {
            if onu[i] == 0 || client[i] == 0 {
                return Err(Failure(
                    SflponStatus::InvalidArgument,
                    format!("row {i}: onu and client indices are 1-based"),
                ));
            }
            let id = ClientId {
                onu: onu[i],
                client: client[i],
            };
            let params = ModelParams::new(weights[i * dim..(i + 1) * dim].to_vec())?;
            Ok(ClientUpdate::new(id, params, samples[i])?)
        })
        .collect()
}

unsafe fn write_out(params: &[f64], out: *mut f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(params.as_ptr(), out, params.len());
    Ok(())
}

/// Sample-weighted FedAvg over `n` client models stored row-major in
/// `weights` (`n * dim` values). The result (`dim` values) goes to `out`.
///
/// # Safety
/// `onu`, `client` and `samples` must each hold `n` values, `weights` must
/// hold `n * dim` values and `out` must hold `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sflpon_fedavg_one_step(
    n: usize,
    dim: usize,
    onu: *const u32,
    client: *const u32,
    samples: *const u64,
    weights: *const f64,
    out: *mut f64,
) -> SflponStatus {
    guard(|| {
        let updates = read_updates(n, dim, onu, client, samples, weights)?;
        let model = cps_aggregate_one_step(&updates, 0)?;
        write_out(model.params.as_slice(), out)
    })
}

/// Same inputs as [`sflpon_fedavg_one_step`], aggregated per ONU first and
/// then at the server.
///
/// # Safety
/// As for [`sflpon_fedavg_one_step`].
#[no_mangle]
pub unsafe extern "C" fn sflpon_fedavg_two_step(
    n: usize,
    dim: usize,
    onu: *const u32,
    client: *const u32,
    samples: *const u64,
    weights: *const f64,
    out: *mut f64,
) -> SflponStatus {
    guard(|| {
        let updates = read_updates(n, dim, onu, client, samples, weights)?;
        let model = aggregate_two_step(&updates, 0)?;
        write_out(model.params.as_slice(), out)
    })
}

/// `1 - n_onus / n_selected`, the upstream share saved by per-ONU aggregation.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn sflpon_bandwidth_saving(
    n_onus: usize,
    n_selected: usize,
    model_bits: f64,
    out: *mut f64,
) -> SflponStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = round_bandwidth_saving(n_onus, n_selected, model_bits)?;
        Ok(())
    })
}
