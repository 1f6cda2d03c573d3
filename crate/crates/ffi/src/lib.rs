//! C ABI over `zog`.
//!
//! Models and oracles are opaque handles created and destroyed through this
//! interface. Every fallible call returns a [`ZogStatus`]; on failure the
//! calling thread's last error message is available from
//! [`zog_last_error`]. Panics never cross the boundary: they are reported as
//! `ZOG_STATUS_PANIC`.
//!
//! Array arguments are passed as pointer plus length. Output arrays are
//! written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use zog::attack::{AttackConfig, AttackError, FailureReason};
use zog::estimator::{estimate_gradient, EstimateError, EstimatorConfig};
use zog::harness::desk_benchmark;
use zog::mlp::{gen_model, MlpModel, ModelError, Probe};
use zog::oracle::{Classifier, LocalOracle, Oracle, OracleError, TargetLoss};
use zog::remote::RemoteOracle;
use zog::{run_attack, DirectionKind, SeededRng, Sidedness};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZogStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    BudgetExhausted = 4,
    Io = 5,
    InvalidModel = 6,
    Transport = 7,
    Remote = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZogDirection {
    /// Standard normal components (NES).
    Gaussian = 0,
    /// Uniform signs (SPSA).
    Rademacher = 1,
    /// Uniform on (-1, 1) (RDSA).
    Uniform = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZogFailure {
    None = 0,
    Budget = 1,
    IterationCap = 2,
    ZeroRadius = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZogEstimatorConfig {
    /// A `ZogDirection` value.
    pub direction: u32,
    /// 1 or 2.
    pub sides: u32,
    /// Directions per estimate.
    pub samples: u32,
    pub delta: f64,
    /// Bound on the magnitude of each reciprocal component.
    pub reciprocal_cap: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZogAttackConfig {
    pub estimator: ZogEstimatorConfig,
    pub epsilon: f64,
    pub step_size: f64,
    pub max_iterations: u64,
    pub budget: u64,
    /// Nonzero to clamp iterates into `[clip_lo, clip_hi]`.
    pub clip: u8,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZogAttackResult {
    pub success: u8,
    pub failure: ZogFailure,
    pub target: u32,
    pub queries: u64,
    pub iterations: u64,
    pub linf_dist: f64,
}

/// A classifier, optionally with a labeled probe set.
pub struct ZogModel {
    model: Arc<MlpModel>,
    probes: Vec<Probe>,
}

/// A query-metered black box: a local model or a remote server.
pub struct ZogOracle {
    inner: Box<dyn Oracle>,
}

struct Failure {
    status: ZogStatus,
    message: String,
}

impl Failure {
    fn new(status: ZogStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let status = match e {
            OracleError::BudgetExhausted { .. } => ZogStatus::BudgetExhausted,
            OracleError::DimensionMismatch { .. } => ZogStatus::DimensionMismatch,
            OracleError::BadTarget { .. } => ZogStatus::InvalidArgument,
            OracleError::Transport(_) => ZogStatus::Transport,
            OracleError::Remote(_) => ZogStatus::Remote,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<EstimateError> for Failure {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Oracle { ref source, .. } => Failure::new(Failure::from(source.clone()).status, e.to_string()),
            other => Failure::new(ZogStatus::InvalidArgument, other.to_string()),
        }
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Oracle(source) => source.into(),
            AttackError::Estimate(source) => source.into(),
            other => Failure::new(ZogStatus::InvalidArgument, other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io { .. } => ZogStatus::Io,
            _ => ZogStatus::InvalidModel,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ZogStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ZogStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            ZogStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(ZogStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn string(ptr: *const c_char, what: &str) -> Result<String, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure::new(ZogStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn check_len(expected: usize, got: usize) -> Result<(), Failure> {
    if expected == got {
        Ok(())
    } else {
        Err(OracleError::DimensionMismatch { expected, got }.into())
    }
}

/// Boxes `value` into `*out`; drops it when `out` is null.
unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len` bytes) and returns the full message length
/// excluding the terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn zog_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(message) => {
            let bytes = message.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults: 50 samples, δ = 1e-3, reciprocal cap 1e6.
#[no_mangle]
pub extern "C" fn zog_estimator_config_default(direction: u32, sides: u32) -> ZogEstimatorConfig {
    let base = EstimatorConfig::new(DirectionKind::Rademacher, Sidedness::TwoSided);
    ZogEstimatorConfig {
        direction,
        sides,
        samples: base.n as u32,
        delta: base.delta,
        reciprocal_cap: base.reciprocal_cap,
    }
}

/// Defaults for inputs on `[0, 1]`: ε = 0.05, step ε/10, clipping on.
#[no_mangle]
pub extern "C" fn zog_attack_config_default(estimator: ZogEstimatorConfig) -> ZogAttackConfig {
    let base = AttackConfig::new(EstimatorConfig::new(DirectionKind::Rademacher, Sidedness::TwoSided));
    let (clip_lo, clip_hi) = base.clip.unwrap_or((0.0, 1.0));
    ZogAttackConfig {
        estimator,
        epsilon: base.epsilon,
        step_size: base.step_size,
        max_iterations: base.max_iterations,
        budget: base.budget,
        clip: u8::from(base.clip.is_some()),
        clip_lo,
        clip_hi,
    }
}

fn estimator_config(c: &ZogEstimatorConfig) -> Result<EstimatorConfig, Failure> {
    let kind = match c.direction {
        d if d == ZogDirection::Gaussian as u32 => DirectionKind::Gaussian,
        d if d == ZogDirection::Rademacher as u32 => DirectionKind::Rademacher,
        d if d == ZogDirection::Uniform as u32 => DirectionKind::UniformSym,
        other => return Err(Failure::new(ZogStatus::InvalidArgument, format!("unknown direction {other}"))),
    };
    let sidedness = match c.sides {
        1 => Sidedness::OneSided,
        2 => Sidedness::TwoSided,
        other => return Err(Failure::new(ZogStatus::InvalidArgument, format!("sides must be 1 or 2, got {other}"))),
    };
    let mut cfg = EstimatorConfig::new(kind, sidedness)
        .with_samples(c.samples as usize)
        .with_delta(c.delta);
    cfg.reciprocal_cap = c.reciprocal_cap;
    cfg.validate()?;
    Ok(cfg)
}

fn attack_config(c: &ZogAttackConfig) -> Result<AttackConfig, Failure> {
    let mut cfg = AttackConfig::new(estimator_config(&c.estimator)?).with_epsilon(c.epsilon);
    cfg.step_size = c.step_size;
    cfg.max_iterations = c.max_iterations;
    cfg.budget = c.budget;
    cfg.clip = (c.clip != 0).then_some((c.clip_lo, c.clip_hi));
    Ok(cfg)
}

/// Loads a model file. The handle has no probes.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_model_load(path: *const c_char, out: *mut *mut ZogModel) -> ZogStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        let model = MlpModel::load(&path)?;
        write_handle(
            out,
            ZogModel {
                model: Arc::new(model),
                probes: Vec::new(),
            },
        )
    })
}

/// Generates a seeded random classifier with `num_probes` labeled probes.
/// `dims` holds the input width followed by hidden widths.
///
/// # Safety
/// `dims` must be valid for `num_dims` reads; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_model_generate(
    dims: *const u32,
    num_dims: usize,
    num_classes: u32,
    num_probes: u32,
    seed: u64,
    out: *mut *mut ZogModel,
) -> ZogStatus {
    guard(|| {
        if dims.is_null() && num_dims > 0 {
            return Err(null("dims"));
        }
        let dims: Vec<usize> = if num_dims == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(dims, num_dims).iter().map(|&d| d as usize).collect()
        };
        let (model, probes) = gen_model(&dims, num_classes as usize, num_probes as usize, seed)?;
        write_handle(out, ZogModel { model: Arc::new(model), probes })
    })
}

/// The bundled 64-input, 10-class benchmark with its 50 probes.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_model_benchmark(out: *mut *mut ZogModel) -> ZogStatus {
    guard(|| {
        let (model, probes) = desk_benchmark();
        write_handle(out, ZogModel { model: Arc::new(model), probes })
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn zog_model_save(model: *const ZogModel, path: *const c_char) -> ZogStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let path = PathBuf::from(string(path, "path")?);
        model.model.save(&path)?;
        Ok(())
    })
}

/// Input width; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zog_model_input_dim(model: *const ZogModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim())
}

/// Class count; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zog_model_num_classes(model: *const ZogModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// Probe count; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zog_model_num_probes(model: *const ZogModel) -> usize {
    model.as_ref().map_or(0, |m| m.probes.len())
}

/// Copies probe `index` into `x` (length `len` = input width) and its label.
///
/// # Safety
/// `model` must be a live handle; `x` valid for `len` writes; `label` for one.
#[no_mangle]
pub unsafe extern "C" fn zog_model_probe(
    model: *const ZogModel,
    index: usize,
    x: *mut f64,
    len: usize,
    label: *mut u32,
) -> ZogStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let probe = model.probes.get(index).ok_or_else(|| {
            Failure::new(
                ZogStatus::InvalidArgument,
                format!("probe index {index} out of range ({} probes)", model.probes.len()),
            )
        })?;
        check_len(probe.x.len(), len)?;
        let x = slice_mut(x, len, "x")?;
        write_out(label, probe.label as u32, "label")?;
        x.copy_from_slice(&probe.x);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zog_model_free(model: *mut ZogModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// An in-process oracle over `model` with its own budget. The model handle
/// may be freed afterwards.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_local(model: *const ZogModel, budget: u64, out: *mut *mut ZogOracle) -> ZogStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let oracle = LocalOracle::new(Arc::clone(&model.model), budget);
        write_handle(out, ZogOracle { inner: Box::new(oracle) })
    })
}

/// Connects to a `zog serve` instance at `address` ("host:port").
///
/// # Safety
/// `address` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_connect(address: *const c_char, out: *mut *mut ZogOracle) -> ZogStatus {
    guard(|| {
        let address = string(address, "address")?;
        let oracle = RemoteOracle::connect(address.as_str())?;
        write_handle(out, ZogOracle { inner: Box::new(oracle) })
    })
}

/// # Safety
/// `oracle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_free(oracle: *mut ZogOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_input_dim(oracle: *const ZogOracle) -> usize {
    oracle.as_ref().map_or(0, |o| o.inner.input_dim())
}

/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_num_classes(oracle: *const ZogOracle) -> usize {
    oracle.as_ref().map_or(0, |o| o.inner.num_classes())
}

/// Queries served so far and the budget.
///
/// # Safety
/// `oracle` must be a live handle; `used` and `budget` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_ledger(oracle: *const ZogOracle, used: *mut u64, budget: *mut u64) -> ZogStatus {
    guard(|| {
        let ledger = borrow(oracle, "oracle")?.inner.ledger();
        if !used.is_null() {
            used.write(ledger.used());
        }
        if !budget.is_null() {
            budget.write(ledger.budget());
        }
        Ok(())
    })
}

/// One metered query: logits of `x` into `out`.
///
/// # Safety
/// `oracle` must be a live handle; `x` valid for `len` reads; `out` for
/// `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn zog_oracle_logits(
    oracle: *const ZogOracle,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> ZogStatus {
    guard(|| {
        let oracle = &borrow(oracle, "oracle")?.inner;
        check_len(oracle.num_classes(), out_len)?;
        let x = slice(x, len, "x")?;
        let out = slice_mut(out, out_len, "out")?;
        out.copy_from_slice(&oracle.logits(x)?);
        Ok(())
    })
}

/// Estimates the gradient of the cross-entropy loss toward `target` at `x`.
/// `queries` receives the queries spent, also when the estimate fails.
///
/// # Safety
/// `oracle` and `config` must be valid; `x` valid for `len` reads; `grad` for
/// `len` writes; `queries` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_estimate_gradient(
    oracle: *const ZogOracle,
    config: *const ZogEstimatorConfig,
    x: *const f64,
    len: usize,
    target: u32,
    seed: u64,
    grad: *mut f64,
    queries: *mut u64,
) -> ZogStatus {
    guard(|| {
        let oracle = &borrow(oracle, "oracle")?.inner;
        let cfg = estimator_config(borrow(config, "config")?)?;
        let x = slice(x, len, "x")?;
        let grad = slice_mut(grad, len, "grad")?;
        let loss = TargetLoss::new(oracle.as_ref(), target as usize)?;
        let result = estimate_gradient(&loss, x, &cfg, &mut SeededRng::new(seed));
        if !queries.is_null() {
            queries.write(match &result {
                Ok(est) => est.queries_used,
                Err(e) => e.spent(),
            });
        }
        grad.copy_from_slice(&result?.grad);
        Ok(())
    })
}

/// Runs a targeted attack from `x0`. A negative `target` picks the least
/// likely class. The final iterate goes to `x_adv` (length `len`), also on
/// failure.
///
/// # Safety
/// `oracle` and `config` must be valid; `x0` valid for `len` reads; `x_adv`
/// null or valid for `len` writes; `result` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn zog_attack(
    oracle: *const ZogOracle,
    config: *const ZogAttackConfig,
    x0: *const f64,
    len: usize,
    target: i64,
    seed: u64,
    x_adv: *mut f64,
    result: *mut ZogAttackResult,
) -> ZogStatus {
    guard(|| {
        let oracle = &borrow(oracle, "oracle")?.inner;
        let cfg = attack_config(borrow(config, "config")?)?;
        let x0 = slice(x0, len, "x0")?;
        if result.is_null() {
            return Err(null("result"));
        }
        let target = usize::try_from(target).ok();
        let outcome = run_attack(oracle.as_ref(), x0, &cfg, &mut SeededRng::new(seed), target)?;
        if !x_adv.is_null() {
            slice_mut(x_adv, len, "x_adv")?.copy_from_slice(&outcome.x_adv);
        }
        result.write(ZogAttackResult {
            success: u8::from(outcome.success),
            failure: match outcome.failure_reason {
                None => ZogFailure::None,
                Some(FailureReason::Budget) => ZogFailure::Budget,
                Some(FailureReason::IterationCap) => ZogFailure::IterationCap,
                Some(FailureReason::ZeroRadius) => ZogFailure::ZeroRadius,
            },
            target: outcome.target as u32,
            queries: outcome.queries,
            iterations: outcome.iterations,
            linf_dist: outcome.linf_dist,
        });
        Ok(())
    })
}
