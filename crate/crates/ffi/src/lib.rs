//! C ABI over `probfuse`.
//!
//! Conventions:
//! - Every fallible function returns a [`PfStatus`]; on failure the message is
//!   available from [`pf_last_error`] on the same thread.
//! - Handles ([`PfBundle`], [`PfMetaModel`]) are opaque and owned by the caller
//!   once returned; release them with their `_free` function.
//! - Strings returned by the library are freed with [`pf_string_free`].
//! - Probability buffers are row-major `n * c` (`k * n * c` for bundles, model-major).
//! - Panics never cross the boundary; they surface as `PF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use probfuse::dataset::{align, load_class_list, load_labels, load_probability_matrix, AlignedBundle, LabelVector, ProbFormat, ProbabilityMatrix};
use probfuse::energy::{compute_emissions, integrate_energy, EnergyBreakdown, PowerSample};
use probfuse::fusion::{average_probabilities, optimize_weights, predict_argmax, EnsembleWeights, OptimizerConfig};
use probfuse::metrics::evaluate;
use probfuse::stacking::{build_meta_features, predict_meta, train_meta_model, MetaHyper, MetaKind, MetaModel};
use probfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Runtime = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfMetaKind {
    Logistic = 0,
    LinearSvm = 1,
    Mlp = 2,
    RandomForest = 3,
}

fn meta_kind(raw: u32) -> Result<MetaKind, Fail> {
    const LOGISTIC: u32 = PfMetaKind::Logistic as u32;
    const LINEAR_SVM: u32 = PfMetaKind::LinearSvm as u32;
    const MLP: u32 = PfMetaKind::Mlp as u32;
    const RANDOM_FOREST: u32 = PfMetaKind::RandomForest as u32;
    match raw {
        LOGISTIC => Ok(MetaKind::Logistic),
        LINEAR_SVM => Ok(MetaKind::LinearSvm),
        MLP => Ok(MetaKind::Mlp),
        RANDOM_FOREST => Ok(MetaKind::RandomForest),
        other => Err(invalid(format!("unknown meta kind {other}"))),
    }
}

/// Opaque aligned set of model probability matrices plus labels.
pub struct PfBundle {
    inner: AlignedBundle,
}

/// Opaque trained stacking meta-model.
pub struct PfMetaModel {
    inner: MetaModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfPowerSample {
    pub timestamp_s: f64,
    pub cpu_w: f64,
    pub gpu_w: f64,
    pub ram_w: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfEnergy {
    pub duration_s: f64,
    pub cpu_kwh: f64,
    pub gpu_kwh: f64,
    pub ram_kwh: f64,
    pub total_kwh: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfEmissions {
    pub energy: PfEnergy,
    pub grid_intensity: f64,
    pub emissions_kg: f64,
    pub rate_kg_per_s: f64,
}

impl From<EnergyBreakdown> for PfEnergy {
    fn from(b: EnergyBreakdown) -> Self {
        PfEnergy {
            duration_s: b.duration_s,
            cpu_kwh: b.cpu_kwh,
            gpu_kwh: b.gpu_kwh,
            ram_kwh: b.ram_kwh,
            total_kwh: b.total_kwh,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Lib(Error::InvalidArgument(msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PfStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            if e.is_validation() {
                PfStatus::InvalidInput
            } else {
                PfStatus::Runtime
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains NUL"))
}

fn write_predictions(probs: &ProbabilityMatrix, labels: &LabelVector, out_probs: &mut [f64], out_labels: &mut [usize]) {
    if !out_probs.is_empty() {
        out_probs.copy_from_slice(probs.as_flat());
    }
    if !out_labels.is_empty() {
        out_labels.copy_from_slice(labels.labels());
    }
}

/// Message of the last failed call on this thread, or NULL. Free with `pf_string_free`.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a bundle from `k` row-major `n x c` matrices laid out back to back and
/// `n` labels. Samples are named `s0..`, classes `class0..`, models `model0..`.
///
/// # Safety
/// `probs` must point to `k * n * c` doubles, `labels` to `n` values, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn pf_bundle_from_arrays(
    k: usize,
    n: usize,
    c: usize,
    probs: *const f64,
    labels: *const usize,
    out: *mut *mut PfBundle,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let total = k
            .checked_mul(n)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| invalid("k * n * c overflows"))?;
        let probs = slice(probs, total, "probs")?;
        let labels = slice(labels, n, "labels")?;
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let names: Vec<String> = (0..c).map(|j| format!("class{j}")).collect();
        let models = (0..k)
            .map(|m| {
                let block = probs[m * n * c..(m + 1) * n * c].to_vec();
                ProbabilityMatrix::from_flat(format!("model{m}"), ids.clone(), names.clone(), block)
            })
            .collect::<probfuse::Result<Vec<_>>>()?;
        let labels = LabelVector::new(ids, names, labels.to_vec())?;
        let inner = align(models, labels)?;
        *out = Box::into_raw(Box::new(PfBundle { inner }));
        Ok(())
    })
}

/// Loads `k` probability files (CSV or JSON by extension), a label CSV and a class list.
///
/// # Safety
/// `model_paths` must point to `k` NUL-terminated strings; other strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pf_bundle_load(
    model_paths: *const *const c_char,
    k: usize,
    label_path: *const c_char,
    class_list_path: *const c_char,
    out: *mut *mut PfBundle,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let paths = slice(model_paths, k, "model_paths")?;
        let classes = load_class_list(&path(class_list_path, "class_list_path")?)?;
        let labels = load_labels(&path(label_path, "label_path")?, &classes)?;
        let mut models = Vec::with_capacity(k);
        for &p in paths {
            let p = path(p, "model path")?;
            models.push(load_probability_matrix(&p, ProbFormat::from_path(&p))?);
        }
        let inner = align(models, labels)?;
        *out = Box::into_raw(Box::new(PfBundle { inner }));
        Ok(())
    })
}

/// # Safety
/// `bundle` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pf_bundle_free(bundle: *mut PfBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// # Safety
/// `bundle` must be a live handle; each out pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn pf_bundle_shape(
    bundle: *const PfBundle,
    k: *mut usize,
    n: *mut usize,
    c: *mut usize,
) -> PfStatus {
    guard(|| {
        let b = &reference(bundle, "bundle")?.inner;
        for (p, v) in [(k, b.k()), (n, b.n_samples()), (c, b.n_classes())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Simple (`weights == NULL`) or weighted averaging with argmax predictions.
///
/// # Safety
/// `weights` is NULL or `k` doubles; `out_probs` is NULL or `n * c` doubles; `out_labels` is NULL or `n` values.
#[no_mangle]
pub unsafe extern "C" fn pf_average(
    bundle: *const PfBundle,
    weights: *const f64,
    out_probs: *mut f64,
    out_labels: *mut usize,
) -> PfStatus {
    guard(|| {
        let b = &reference(bundle, "bundle")?.inner;
        let w = if weights.is_null() {
            None
        } else {
            Some(EnsembleWeights::new(slice(weights, b.k(), "weights")?.to_vec())?)
        };
        let probs = average_probabilities(b, w.as_ref())?;
        let labels = predict_argmax(&probs);
        let n = b.n_samples();
        let out_probs = if out_probs.is_null() { &mut [][..] } else { slice_mut(out_probs, n * b.n_classes(), "out_probs")? };
        let out_labels = if out_labels.is_null() { &mut [][..] } else { slice_mut(out_labels, n, "out_labels")? };
        write_predictions(&probs, &labels, out_probs, out_labels);
        Ok(())
    })
}

/// Accuracy-maximizing simplex weights over the whole bundle.
///
/// # Safety
/// `out_weights` must hold `k` doubles; `out_accuracy` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn pf_optimize_weights(
    bundle: *const PfBundle,
    grid_step: f64,
    restarts: usize,
    seed: u64,
    out_weights: *mut f64,
    out_accuracy: *mut f64,
) -> PfStatus {
    guard(|| {
        let b = &reference(bundle, "bundle")?.inner;
        let out_weights = slice_mut(out_weights, b.k(), "out_weights")?;
        let config = OptimizerConfig {
            grid_step,
            restarts,
            seed,
            ..OptimizerConfig::default()
        };
        let fit = optimize_weights(b, &config)?;
        out_weights.copy_from_slice(fit.weights.as_slice());
        if let Some(acc) = out_accuracy.as_mut() {
            *acc = fit.achieved_accuracy;
        }
        Ok(())
    })
}

/// Accuracy and macro precision/recall/F1 of `pred` against `truth` (both `n` labels in `[0, c)`).
///
/// # Safety
/// `pred` and `truth` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_metrics(
    n: usize,
    c: usize,
    pred: *const usize,
    truth: *const usize,
    out: *mut PfMetrics,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let names: Vec<String> = (0..c).map(|j| format!("class{j}")).collect();
        let pred = LabelVector::new(ids.clone(), names.clone(), slice(pred, n, "pred")?.to_vec())?;
        let truth = LabelVector::new(ids, names, slice(truth, n, "truth")?.to_vec())?;
        let r = evaluate(&pred, &truth)?;
        *out = PfMetrics {
            accuracy: r.accuracy,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
        };
        Ok(())
    })
}

/// Trains a meta-model on the bundle's concatenated probabilities and labels.
/// `kind` is a `PfMetaKind` value.
///
/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_stack_train(
    bundle: *const PfBundle,
    kind: u32,
    seed: u64,
    out: *mut *mut PfMetaModel,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = &reference(bundle, "bundle")?.inner;
        let features = build_meta_features(b);
        let inner = train_meta_model(&features, b.labels(), meta_kind(kind)?, &MetaHyper::default(), seed)?;
        *out = Box::into_raw(Box::new(PfMetaModel { inner }));
        Ok(())
    })
}

/// Predicts with a meta-model; the bundle's labels are ignored.
///
/// # Safety
/// `out_probs` is NULL or `n * c` doubles; `out_labels` is NULL or `n` values.
#[no_mangle]
pub unsafe extern "C" fn pf_stack_predict(
    model: *const PfMetaModel,
    bundle: *const PfBundle,
    out_probs: *mut f64,
    out_labels: *mut usize,
) -> PfStatus {
    guard(|| {
        let m = &reference(model, "model")?.inner;
        let b = &reference(bundle, "bundle")?.inner;
        let (labels, probs) = predict_meta(m, &build_meta_features(b))?;
        let n = b.n_samples();
        let out_probs = if out_probs.is_null() { &mut [][..] } else { slice_mut(out_probs, n * probs.n_classes(), "out_probs")? };
        let out_labels = if out_labels.is_null() { &mut [][..] } else { slice_mut(out_labels, n, "out_labels")? };
        write_predictions(&probs, &labels, out_probs, out_labels);
        Ok(())
    })
}

/// Serializes a meta-model; free the result with `pf_string_free`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_meta_model_to_json(model: *const PfMetaModel, out: *mut *mut c_char) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = &reference(model, "model")?.inner;
        *out = into_c_string(m.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_meta_model_from_json(json: *const c_char, out: *mut *mut PfMetaModel) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if json.is_null() {
            return Err(Fail::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| invalid("json is not valid UTF-8"))?;
        let inner = MetaModel::from_json(text)?;
        *out = Box::into_raw(Box::new(PfMetaModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pf_meta_model_free(model: *mut PfMetaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trapezoidal energy of a power trace over `[0, duration_s]`.
///
/// # Safety
/// `samples` must hold `len` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_integrate_energy(
    samples: *const PfPowerSample,
    len: usize,
    duration_s: f64,
    out: *mut PfEnergy,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let samples: Vec<PowerSample> = slice(samples, len, "samples")?
            .iter()
            .map(|s| PowerSample {
                timestamp: s.timestamp_s,
                cpu_w: s.cpu_w,
                gpu_w: s.gpu_w,
                ram_w: s.ram_w,
            })
            .collect();
        *out = integrate_energy(&samples, duration_s)?.into();
        Ok(())
    })
}

/// Emissions and emission rate for an energy breakdown at `grid_intensity` kgCO2eq/kWh.
///
/// # Safety
/// `energy` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_compute_emissions(
    energy: *const PfEnergy,
    grid_intensity: f64,
    out: *mut PfEmissions,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let e = reference(energy, "energy")?;
        let b = EnergyBreakdown {
            duration_s: e.duration_s,
            cpu_kwh: e.cpu_kwh,
            gpu_kwh: e.gpu_kwh,
            ram_kwh: e.ram_kwh,
            total_kwh: e.total_kwh,
        };
        let r = compute_emissions(&b, grid_intensity)?;
        *out = PfEmissions {
            energy: r.breakdown.into(),
            grid_intensity: r.grid_intensity,
            emissions_kg: r.emissions_kg,
            rate_kg_per_s: r.rate_kg_per_s,
        };
        Ok(())
    })
}
