//! C ABI over the drawdim library.
//!
//! Objects cross the boundary as opaque handles (`DdRecord`, `DdTensor`,
//! `DdNetwork`) that the caller releases with the matching `*_free`
//! function. Every fallible call returns a [`DdStatus`]; on failure the
//! error class and message of the last error on the calling thread are
//! available from [`dd_last_error_class`] and [`dd_last_error_message`].
//! Panics never unwind into C: they are reported as `DD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drawdim::encode::{encode_record, Dimension, EncodeConfig};
use drawdim::ingest::{parse_record, DrawingRecord, Feature, FeatureSet, Label, RecordMeta, Schema, Source};
use drawdim::net::{param_count, Mode, Network, NetworkConfig, Prediction};
use drawdim::preprocess::Normalization;
use drawdim::synthetic::{gen_spiral, SpiralParams};
use drawdim::tensor::Tensor;
use drawdim::trainer::{compute_metrics, ConfusionMatrix};
use drawdim::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration or argument (CLI exit code 2).
    Config = 3,
    /// Bad or inconsistent input data (CLI exit code 3).
    Data = 4,
    /// Non-finite values during computation (CLI exit code 4).
    Numeric = 5,
    /// The library panicked; this is a bug.
    Panic = 6,
    /// The caller's buffer is too small; nothing was written.
    BufferTooSmall = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdLabel {
    Hc = 0,
    Pd = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdSchema {
    Drawritepd = 0,
    Pahaw = 1,
}

/// Scores of a confusion matrix, PD positive. Bit i of `undefined_mask` is
/// set when score i (precision, sensitivity, specificity, f1 in that order)
/// had a zero denominator and was reported as 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DdMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub undefined_mask: u32,
}

/// Class decision and probabilities.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdPrediction {
    pub label: DdLabel,
    pub p_hc: f64,
    pub p_pd: f64,
}

/// A parsed drawing record.
pub struct DdRecord(DrawingRecord);

/// A dense f32 tensor.
pub struct DdTensor(Tensor<f32>);

/// A network with f32 parameters.
pub struct DdNetwork(Network<f32>);

struct LastError {
    class: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(class: &str, message: String) {
    let clean = |s: String| CString::new(s.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            class: clean(class.to_string()),
            message: clean(message),
        })
    });
}

fn status_of(err: &Error) -> DdStatus {
    match err.exit_code() {
        2 => DdStatus::Config,
        4 => DdStatus::Numeric,
        _ => DdStatus::Data,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Utf8(&'static str),
    Buffer(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording any failure as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.class(), e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(arg))) => {
            set_error("NullArgument", format!("`{arg}` is null"));
            DdStatus::NullArgument
        }
        Ok(Err(Fail::Utf8(arg))) => {
            set_error("InvalidUtf8", format!("`{arg}` is not valid UTF-8"));
            DdStatus::InvalidUtf8
        }
        Ok(Err(Fail::Buffer(need))) => {
            set_error("BufferTooSmall", format!("buffer needs {need} elements"));
            DdStatus::BufferTooSmall
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error("Panic", msg);
            DdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(name))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

fn label_of(l: DdLabel) -> Label {
    match l {
        DdLabel::Hc => Label::Hc,
        DdLabel::Pd => Label::Pd,
    }
}

fn dd_label(l: Label) -> DdLabel {
    match l {
        Label::Hc => DdLabel::Hc,
        Label::Pd => DdLabel::Pd,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Error class of the last failed call on this thread, e.g.
/// `"PlanInvalidForDimension"`, or null if none. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn dd_last_error_class() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.class.as_ptr()))
}

/// Human-readable message of the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn dd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Trainable parameter count of the network for `rank` (1, 2 or 3) spatial
/// dimensions, `in_channels` input channels and input side `extent`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn dd_param_count(rank: u32, in_channels: u32, extent: u32, out: *mut u64) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dim = Dimension::from_rank(rank as usize)?;
        let cfg = NetworkConfig::new(dim, in_channels as usize).with_extent(extent as usize);
        *out = param_count(&cfg)? as u64;
        Ok(())
    })
}

/// Computes scores from confusion counts.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn dd_metrics(tp: u64, fn_: u64, fp: u64, tn: u64, out: *mut DdMetrics) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = compute_metrics(&ConfusionMatrix::new(tp, fn_, fp, tn))?;
        let names = ["precision", "sensitivity", "specificity", "f1"];
        let undefined_mask = names
            .iter()
            .enumerate()
            .filter(|(_, n)| m.undefined.contains(n))
            .fold(0, |acc, (i, _)| acc | 1 << i);
        *out = DdMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            f1: m.f1,
            undefined_mask,
        };
        Ok(())
    })
}

/// Parses a record from CSV text with a header row.
///
/// # Safety
/// `csv` and `subject_id` must be null or NUL-terminated strings; `out` must
/// be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_record_parse(
    csv: *const c_char,
    schema: DdSchema,
    label: DdLabel,
    subject_id: *const c_char,
    out: *mut *mut DdRecord,
) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(csv, "csv")?;
        let subject = str_arg(subject_id, "subject_id")?;
        let schema = match schema {
            DdSchema::Drawritepd => Schema::DraWritePd,
            DdSchema::Pahaw => Schema::PaHaW,
        };
        let meta = RecordMeta::new(label_of(label), subject, Source::from(schema));
        let record = parse_record(text, schema, meta)?;
        *out = Box::into_raw(Box::new(DdRecord(record)));
        Ok(())
    })
}

/// Generates one synthetic spiral with class-typical tremor.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_record_synthetic(label: DdLabel, seed: u64, out: *mut *mut DdRecord) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (params, subject) = match label {
            DdLabel::Pd => (SpiralParams::pd_like(seed), "PD-synthetic"),
            DdLabel::Hc => (SpiralParams::hc_like(seed), "HC-synthetic"),
        };
        let record = gen_spiral(&params, label_of(label), subject)?;
        *out = Box::into_raw(Box::new(DdRecord(record)));
        Ok(())
    })
}

/// Number of samples in a record, or 0 for null.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_record_len(record: *const DdRecord) -> usize {
    record.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `record` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_record_free(record: *mut DdRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// Encodes a record with per-record normalization. `dim` is 1, 2 or 3;
/// `feature_mask` has bit 0 = x, 1 = y, 2 = azimuth, 3 = altitude,
/// 4 = pressure, 5 = velocity (x and y are always on); `size` is the series
/// length, image side or voxel side.
///
/// # Safety
/// `record` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_encode(
    record: *const DdRecord,
    dim: u32,
    feature_mask: u32,
    size: u32,
    out: *mut *mut DdTensor,
) -> DdStatus {
    guard(|| {
        let record = ref_arg(record, "record")?;
        let out = out_arg(out, "out")?;
        let dim = Dimension::from_rank(dim as usize)?;
        let fs = FeatureSet::from_mask(feature_mask);
        let size = size as usize;
        let cfg = EncodeConfig {
            length: size,
            image_size: size,
            voxel_size: size,
            ..EncodeConfig::default()
        };
        cfg.validate()?;
        if dim == Dimension::Three && !fs.contains(Feature::Velocity) {
            return Err(Error::PlanInvalidForDimension {
                dim: 3,
                reason: "velocity supplies the third axis and must be enabled".into(),
            }
            .into());
        }
        let t = encode_record(&record.0, dim, &fs, &cfg, Normalization::PerRecord)?.into_tensor();
        *out = Box::into_raw(Box::new(DdTensor(t)));
        Ok(())
    })
}

/// Wraps a copy of `len` floats as a tensor of the given shape.
///
/// # Safety
/// `shape` must point to `rank` values and `data` to `len` floats; `out`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_new(
    shape: *const usize,
    rank: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut DdTensor,
) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        let shape = std::slice::from_raw_parts(shape, rank);
        let data = std::slice::from_raw_parts(data, len).to_vec();
        *out = Box::into_raw(Box::new(DdTensor(Tensor::from_vec(shape, data)?)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_rank(t: *const DdTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// Number of elements, or 0 for null.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_len(t: *const DdTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Copies the shape into `dims`. With a too-small `cap` nothing is copied
/// and `DD_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `t` must be null or a live handle; `dims` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_shape(t: *const DdTensor, dims: *mut usize, cap: usize) -> DdStatus {
    guard(|| {
        let t = ref_arg(t, "tensor")?;
        let shape = t.0.shape();
        if cap < shape.len() {
            return Err(Fail::Buffer(shape.len()));
        }
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, shape.len()).copy_from_slice(shape);
        Ok(())
    })
}

/// Row-major element storage, valid while the handle lives; null for null.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_data(t: *const DdTensor) -> *const f32 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_tensor_free(t: *mut DdTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Builds a freshly initialized network.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_network_build(
    rank: u32,
    in_channels: u32,
    extent: u32,
    seed: u64,
    out: *mut *mut DdNetwork,
) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dim = Dimension::from_rank(rank as usize)?;
        let cfg = NetworkConfig::new(dim, in_channels as usize).with_extent(extent as usize);
        *out = Box::into_raw(Box::new(DdNetwork(Network::build(cfg, seed)?)));
        Ok(())
    })
}

/// Loads a checkpoint directory written by `drawdim train`.
///
/// # Safety
/// `dir` must be null or a NUL-terminated string; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_network_load(dir: *const c_char, out: *mut *mut DdNetwork) -> DdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        *out = Box::into_raw(Box::new(DdNetwork(Network::load(Path::new(dir))?)));
        Ok(())
    })
}

/// Writes a checkpoint directory.
///
/// # Safety
/// `net` must be null or a live handle; `dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dd_network_save(net: *const DdNetwork, dir: *const c_char) -> DdStatus {
    guard(|| {
        let net = ref_arg(net, "network")?;
        let dir = str_arg(dir, "dir")?;
        net.0.save(Path::new(dir))?;
        Ok(())
    })
}

/// Parameter count of a built network, or 0 for null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_network_param_count(net: *const DdNetwork) -> u64 {
    net.as_ref().map_or(0, |n| n.0.param_count() as u64)
}

/// Classifies one encoded input in evaluation mode.
///
/// # Safety
/// `net` and `input` must be null or live handles; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn dd_network_predict(
    net: *const DdNetwork,
    input: *const DdTensor,
    out: *mut DdPrediction,
) -> DdStatus {
    guard(|| {
        let net = ref_arg(net, "network")?;
        let input = ref_arg(input, "input")?;
        let out = out_arg(out, "out")?;
        let logits = net.0.forward(&input.0, Mode::Eval)?;
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit(*bad as f64).into());
        }
        let p = Prediction::from_logits(&logits);
        *out = DdPrediction {
            label: dd_label(p.label),
            p_hc: p.probs[0],
            p_pd: p.probs[1],
        };
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_network_free(net: *mut DdNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
