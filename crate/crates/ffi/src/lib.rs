//! C ABI over the repr-audit toolkit: opaque dataset handles, the
//! statistical kernels on raw arrays, and a JSON facade for the feature-bias
//! test, so other languages can drive the audit.
//!
//! Conventions: every fallible function returns an [`RaStatus`]; on any
//! non-OK status a thread-local message is available through
//! [`ra_last_error_message`] until the next call on the same thread. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`ra_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::c_char;

use repr_audit::cohort::{
    check_alignment, load_cohort, load_embeddings, Cohort, EmbeddingFormat, EmbeddingSet,
};
use repr_audit::error::Error;
use repr_audit::metrics::{auc, calibrate_threshold, relative_change};
use repr_audit::projection::{pca_fit, pca_transform, ModeSelector};
use repr_audit::sampling::{mix_seed, GroupingAttr};
use repr_audit::stats::{benjamini_yekutieli, ks_two_sample, run_feature_bias_test};

/// Status code of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaStatus {
    Ok = 0,
    /// Null pointer, bad enum value or otherwise unusable argument.
    InvalidArgument = 1,
    /// File could not be read or written.
    Io = 2,
    /// File contents violate the documented formats.
    Format = 3,
    /// Input data violates a numerical precondition.
    Numeric = 4,
    /// The requested quantity is undefined on this input.
    Undefined = 5,
    /// Internal panic; the message carries diagnostics.
    Panic = 6,
}

/// On-disk embedding encodings accepted by [`ra_dataset_load`].
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaEmbeddingFormat {
    Binary = 0,
    Csv = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(error: &Error) -> RaStatus {
    match error {
        Error::Io { .. } => RaStatus::Io,
        Error::MalformedHeader { .. }
        | Error::PayloadTruncated { .. }
        | Error::NonFiniteValue { .. }
        | Error::DuplicateId { .. }
        | Error::MissingColumn { .. }
        | Error::ParseField { .. }
        | Error::Config { .. } => RaStatus::Format,
        Error::EmptyGroup { .. }
        | Error::GroupTooSmall { .. }
        | Error::EmptySample { .. }
        | Error::SingleClass { .. }
        | Error::SingleClassLabel { .. }
        | Error::NoNegatives
        | Error::NoSupervisedSignal
        | Error::UndefinedMetric { .. }
        | Error::BootstrapUndefined { .. } => RaStatus::Undefined,
        Error::DegenerateVariance
        | Error::DuplicatePoints { .. }
        | Error::NonFiniteLoss { .. }
        | Error::PValueOutOfRange { .. }
        | Error::PerplexityOutOfRange { .. }
        | Error::TooFewSamples { .. } => RaStatus::Numeric,
        _ => RaStatus::InvalidArgument,
    }
}

fn fail(error: &Error) -> RaStatus {
    set_error(&error.to_string());
    status_of(error)
}

fn invalid(message: &str) -> RaStatus {
    set_error(message);
    RaStatus::InvalidArgument
}

/// Runs the body with panics converted into `RaStatus::Panic`.
fn guarded<F: FnOnce() -> RaStatus>(body: F) -> RaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&message);
            RaStatus::Panic
        }
    }
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() && len > 0 {
        None
    } else if len == 0 {
        Some(&[])
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Option<&'a Path> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok().map(Path::new)
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next FFI call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn ra_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Toolkit version as a static string; never free it.
#[no_mangle]
pub extern "C" fn ra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned through an out-parameter.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ra_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The substream seed mixer: derives the seed of substream `ordinal`.
#[no_mangle]
pub extern "C" fn ra_mix_seed(seed: u64, ordinal: u64) -> u64 {
    mix_seed(seed, ordinal)
}

/// An embedding matrix joined with its cohort metadata.
pub struct RaDataset {
    embeddings: EmbeddingSet,
    cohort: Cohort,
}

/// Loads embeddings (plus the `.ids` sidecar for the binary format) and the
/// metadata CSV, validating the joint alignment. On success `*out` owns the
/// dataset; release it with [`ra_dataset_free`].
///
/// # Safety
/// `embeddings_path` and `metadata_path` must be NUL-terminated strings and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_dataset_load(
    embeddings_path: *const c_char,
    format: RaEmbeddingFormat,
    metadata_path: *const c_char,
    out: *mut *mut RaDataset,
) -> RaStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out pointer is null");
        }
        let (Some(emb_path), Some(meta_path)) =
            (unsafe { path_arg(embeddings_path) }, unsafe { path_arg(metadata_path) })
        else {
            return invalid("path arguments must be valid UTF-8 and non-null");
        };
        let format = match format {
            RaEmbeddingFormat::Binary => EmbeddingFormat::Binary,
            RaEmbeddingFormat::Csv => EmbeddingFormat::Csv,
        };
        let embeddings = match load_embeddings(emb_path, format) {
            Ok(e) => e,
            Err(e) => return fail(&e),
        };
        let cohort = match load_cohort(meta_path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        if let Err(e) = check_alignment(&embeddings, &cohort) {
            return fail(&e);
        }
        unsafe {
            *out = Box::into_raw(Box::new(RaDataset { embeddings, cohort }));
        }
        RaStatus::Ok
    })
}

/// # Safety
/// `dataset` must come from [`ra_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ra_dataset_free(dataset: *mut RaDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// # Safety
/// `dataset` must be a live handle from [`ra_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn ra_dataset_num_samples(dataset: *const RaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.embeddings.len()
}

/// # Safety
/// `dataset` must be a live handle from [`ra_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn ra_dataset_dim(dataset: *const RaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.embeddings.dim()
}

/// Two-sample Kolmogorov-Smirnov test: exact D statistic and asymptotic
/// two-sided p-value.
///
/// # Safety
/// `a` and `b` must point to `a_len` / `b_len` doubles; `out_d_stat` and
/// `out_p_value` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ra_ks_two_sample(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out_d_stat: *mut f64,
    out_p_value: *mut f64,
) -> RaStatus {
    guarded(|| {
        if out_d_stat.is_null() || out_p_value.is_null() {
            return invalid("out pointers are null");
        }
        let (Some(a), Some(b)) = (unsafe { slice_arg(a, a_len) }, unsafe { slice_arg(b, b_len) })
        else {
            return invalid("sample pointers are null");
        };
        match ks_two_sample(a, b) {
            Ok(result) => {
                unsafe {
                    *out_d_stat = result.d_stat;
                    *out_p_value = result.p_raw;
                }
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Benjamini-Yekutieli adjustment; writes `len` adjusted p-values to `out`
/// in the input order.
///
/// # Safety
/// `p_values` must point to `len` doubles and `out` to space for `len`.
#[no_mangle]
pub unsafe extern "C" fn ra_benjamini_yekutieli(
    p_values: *const f64,
    len: usize,
    out: *mut f64,
) -> RaStatus {
    guarded(|| {
        let Some(p) = (unsafe { slice_arg(p_values, len) }) else {
            return invalid("p_values pointer is null");
        };
        if out.is_null() && len > 0 {
            return invalid("out pointer is null");
        }
        match benjamini_yekutieli(p) {
            Ok(adjusted) => {
                for (i, v) in adjusted.iter().enumerate() {
                    unsafe { *out.add(i) = *v };
                }
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Mann-Whitney AUC with ties counting one half. `targets` holds 0/1.
///
/// # Safety
/// `scores` and `targets` must point to `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn ra_auc(
    scores: *const f64,
    targets: *const u8,
    len: usize,
    out: *mut f64,
) -> RaStatus {
    guarded(|| {
        let (Some(scores), Some(targets)) =
            (unsafe { slice_arg(scores, len) }, unsafe { slice_arg(targets, len) })
        else {
            return invalid("input pointers are null");
        };
        if out.is_null() {
            return invalid("out pointer is null");
        }
        let targets: Vec<bool> = targets.iter().map(|&t| t != 0).collect();
        match auc(scores, &targets) {
            Ok(v) => {
                unsafe { *out = v };
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Threshold whose achieved FPR is maximal while not exceeding the target;
/// the decision rule is score > threshold.
///
/// # Safety
/// `scores` and `targets` must point to `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn ra_calibrate_threshold(
    scores: *const f64,
    targets: *const u8,
    len: usize,
    target_fpr: f64,
    out: *mut f64,
) -> RaStatus {
    guarded(|| {
        let (Some(scores), Some(targets)) =
            (unsafe { slice_arg(scores, len) }, unsafe { slice_arg(targets, len) })
        else {
            return invalid("input pointers are null");
        };
        if out.is_null() {
            return invalid("out pointer is null");
        }
        let targets: Vec<bool> = targets.iter().map(|&t| t != 0).collect();
        match calibrate_threshold(scores, &targets, target_fpr) {
            Ok(v) => {
                unsafe { *out = v };
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Percentage change of each value against the mean over all values; writes
/// `len` percentages to `out`.
///
/// # Safety
/// `values` must point to `len` doubles and `out` to space for `len`.
#[no_mangle]
pub unsafe extern "C" fn ra_relative_change(
    values: *const f64,
    len: usize,
    out: *mut f64,
) -> RaStatus {
    guarded(|| {
        let Some(values) = (unsafe { slice_arg(values, len) }) else {
            return invalid("values pointer is null");
        };
        if out.is_null() && len > 0 {
            return invalid("out pointer is null");
        }
        let named: Vec<(String, Option<f64>)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i.to_string(), Some(v)))
            .collect();
        match relative_change(&named) {
            Ok(changes) => {
                for (i, (_, pct)) in changes.iter().enumerate() {
                    match pct {
                        Some(v) => unsafe { *out.add(i) = *v },
                        None => {
                            return {
                                set_error("relative change undefined: zero mean");
                                RaStatus::Undefined
                            }
                        }
                    }
                }
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the feature-bias inspection on a loaded dataset: optional per-group
/// subsampling on race, PCA to `modes` components, and the KS grid over the
/// default subgroup pairs (race pairs, sex, first-label contrast), BY
/// adjusted as one family. Returns the report as a JSON document through
/// `out_json`; release it with [`ra_string_free`].
///
/// `subsample_per_group` of 0 uses the full dataset.
///
/// # Safety
/// `dataset` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_dataset_feature_bias_json(
    dataset: *const RaDataset,
    modes: usize,
    subsample_per_group: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> RaStatus {
    guarded(|| {
        if dataset.is_null() || out_json.is_null() {
            return invalid("dataset or out_json pointer is null");
        }
        let ds = unsafe { &*dataset };

        let result = (|| -> repr_audit::Result<String> {
            let (set, cohort) = if subsample_per_group > 0 {
                let aligned_rows: Vec<usize> = ds
                    .embeddings
                    .ids()
                    .iter()
                    .map(|id| ds.cohort.row_of(id).expect("alignment checked at load"))
                    .collect();
                let aligned = ds.cohort.subset(&aligned_rows)?;
                let rows = repr_audit::sampling::subsample_per_group(
                    &aligned,
                    GroupingAttr::Race,
                    subsample_per_group,
                    seed,
                )?;
                (ds.embeddings.subset(&rows)?, aligned.subset(&rows)?)
            } else {
                let aligned_rows: Vec<usize> = ds
                    .embeddings
                    .ids()
                    .iter()
                    .map(|id| ds.cohort.row_of(id).expect("alignment checked at load"))
                    .collect();
                (ds.embeddings.clone(), ds.cohort.subset(&aligned_rows)?)
            };

            let model = pca_fit(set.matrix(), ModeSelector::Count(modes))?;
            let coords = pca_transform(&model, set.matrix())?;
            let pairs = default_pairs(&cohort);
            let mut report = run_feature_bias_test(
                &coords,
                set.ids(),
                &cohort,
                &pairs,
                modes,
                &model.explained_variance_ratio,
            )?;
            report.metadata.seed = Some(seed);
            report.metadata.subsample = Some(format!(
                "subsample_per_group={subsample_per_group} attribute=Race n={}",
                set.len()
            ));
            Ok(report.to_json())
        })();

        match result {
            Ok(json) => {
                let s = CString::new(json.replace('\0', " ")).unwrap_or_default();
                unsafe { *out_json = s.into_raw() };
                RaStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

fn default_pairs(
    cohort: &Cohort,
) -> Vec<(repr_audit::GroupSelector, repr_audit::GroupSelector)> {
    use repr_audit::{GroupSelector, Sex};
    let mut pairs = Vec::new();
    let races = cohort.race_values();
    for i in 0..races.len() {
        for j in (i + 1)..races.len() {
            pairs.push((
                GroupSelector::Race(races[i].clone()),
                GroupSelector::Race(races[j].clone()),
            ));
        }
    }
    pairs.push((GroupSelector::Sex(Sex::Male), GroupSelector::Sex(Sex::Female)));
    if let Some(label) = cohort.label_names().first() {
        pairs.push((
            GroupSelector::Label {
                name: label.clone(),
                value: true,
            },
            GroupSelector::Label {
                name: label.clone(),
                value: false,
            },
        ));
    }
    pairs
}
