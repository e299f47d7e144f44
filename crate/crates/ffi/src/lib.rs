//! C interface over `gap_core`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every function returns a [`GapStatus`]; on failure
//! `gap_last_error_message` describes the error raised on the calling thread.
//! Strings returned through out-parameters must be released with
//! `gap_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};

use gap_core::anonymizer::{coverage, Anonymizer, AnonymizerOptions, Expansion, PlaceholderSet};
use gap_core::corpus::{parse_gap_tsv, GapExample, Label};
use gap_core::embedding::{stub_vector, Role};
use gap_core::eval::{self, PredictionTriple};
use gap_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    MissingArtifact = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Probabilities for (A, B, Neither).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTriple {
    pub a: f64,
    pub b: f64,
    pub neither: f64,
}

/// Character offsets of the three mentions in one variant.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapOffsets {
    pub pronoun: usize,
    pub a: usize,
    pub b: usize,
}

pub struct GapCorpus(Vec<GapExample>);

pub struct GapAnonymizer(Anonymizer);

pub struct GapExpansion(Expansion);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GapStatus {
    match e {
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => GapStatus::Parse,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::MissingLayer(_) | Error::Config(_) => {
            GapStatus::InvalidArgument
        }
        _ if e.exit_code() == 3 => GapStatus::MissingArtifact,
        _ => GapStatus::Validation,
    }
}

enum Fail {
    Status(GapStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GapStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GapStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GapStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(GapStatus::NullPointer, format!("{what} is null"))
}

fn bad_arg(msg: impl Into<String>) -> Fail {
    Fail::Status(GapStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::Status(GapStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn give_string(s: String, dst: &mut *mut c_char) -> Result<(), Fail> {
    *dst = CString::new(s).map_err(|e| bad_arg(e.to_string()))?.into_raw();
    Ok(())
}

fn into_handle<T>(v: T, dst: &mut *mut T) {
    *dst = Box::into_raw(Box::new(v));
}

fn triple(t: &GapTriple) -> PredictionTriple {
    PredictionTriple::new(t.a, t.b, t.neither)
}

fn label(code: u8) -> Result<Label, Fail> {
    Label::from_index(code as usize).ok_or_else(|| bad_arg(format!("label {code} is not 0 (A), 1 (B) or 2 (Neither)")))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a GAP TSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_corpus` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_corpus_parse_file(path: *const c_char, out_corpus: *mut *mut GapCorpus) -> GapStatus {
    guard(|| {
        let dst = out(out_corpus, "out_corpus")?;
        let path = str_arg(path, "path")?;
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Fail::Core(Error::MissingArtifact(path.into()))
            } else {
                Fail::Core(e.into())
            }
        })?;
        into_handle(GapCorpus(parse_gap_tsv(file)?), dst);
        Ok(())
    })
}

/// Parse GAP TSV text held in memory.
///
/// # Safety
/// `tsv` must be a NUL-terminated string; `out_corpus` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_corpus_parse_str(tsv: *const c_char, out_corpus: *mut *mut GapCorpus) -> GapStatus {
    guard(|| {
        let dst = out(out_corpus, "out_corpus")?;
        let tsv = str_arg(tsv, "tsv")?;
        into_handle(GapCorpus(parse_gap_tsv(tsv.as_bytes())?), dst);
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a handle from `gap_corpus_parse_*`; `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_corpus_len(corpus: *const GapCorpus, out_len: *mut usize) -> GapStatus {
    guard(|| {
        *out(out_len, "out_len")? = deref(corpus, "corpus")?.0.len();
        Ok(())
    })
}

/// Example id at `index`, as a new string.
///
/// # Safety
/// `corpus` must be a valid handle; `out_id` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_corpus_id(corpus: *const GapCorpus, index: usize, out_id: *mut *mut c_char) -> GapStatus {
    guard(|| {
        let dst = out(out_id, "out_id")?;
        let c = deref(corpus, "corpus")?;
        let ex = c.0.get(index).ok_or_else(|| bad_arg(format!("index {index} out of range ({})", c.0.len())))?;
        give_string(ex.id.clone(), dst)
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gap_corpus_free(corpus: *mut GapCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Anonymizer with the four standard placeholder sets.
///
/// # Safety
/// `out_anonymizer` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_anonymizer_new(widen_cond1: bool, out_anonymizer: *mut *mut GapAnonymizer) -> GapStatus {
    guard(|| {
        let dst = out(out_anonymizer, "out_anonymizer")?;
        let anon = Anonymizer::new(PlaceholderSet::standard(), AnonymizerOptions { widen_cond1 });
        into_handle(GapAnonymizer(anon), dst);
        Ok(())
    })
}

/// # Safety
/// `anonymizer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gap_anonymizer_free(anonymizer: *mut GapAnonymizer) {
    if !anonymizer.is_null() {
        drop(Box::from_raw(anonymizer));
    }
}

/// Expand the example at `index` into its original and anonymized variants.
///
/// # Safety
/// Handles must be valid; `out_expansion` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_expand(
    anonymizer: *const GapAnonymizer,
    corpus: *const GapCorpus,
    index: usize,
    out_expansion: *mut *mut GapExpansion,
) -> GapStatus {
    guard(|| {
        let dst = out(out_expansion, "out_expansion")?;
        let anon = deref(anonymizer, "anonymizer")?;
        let c = deref(corpus, "corpus")?;
        let ex = c.0.get(index).ok_or_else(|| bad_arg(format!("index {index} out of range ({})", c.0.len())))?;
        into_handle(GapExpansion(anon.0.expand(ex)), dst);
        Ok(())
    })
}

/// Number of usable variants, the original included.
///
/// # Safety
/// `expansion` must be a valid handle; `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_expansion_len(expansion: *const GapExpansion, out_len: *mut usize) -> GapStatus {
    guard(|| {
        *out(out_len, "out_len")? = deref(expansion, "expansion")?.0.variants.len();
        Ok(())
    })
}

/// Variant `index` as a JSON object, the same shape as one line of variants.jsonl.
///
/// # Safety
/// `expansion` must be a valid handle; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_expansion_variant_json(
    expansion: *const GapExpansion,
    index: usize,
    out_json: *mut *mut c_char,
) -> GapStatus {
    guard(|| {
        let dst = out(out_json, "out_json")?;
        let e = deref(expansion, "expansion")?;
        let v = e.0.variants.get(index).ok_or_else(|| bad_arg(format!("variant {index} out of range")))?;
        give_string(serde_json::to_string(v).map_err(Error::from)?, dst)
    })
}

/// # Safety
/// `expansion` must be a valid handle; `out_offsets` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_expansion_offsets(
    expansion: *const GapExpansion,
    index: usize,
    out_offsets: *mut GapOffsets,
) -> GapStatus {
    guard(|| {
        let dst = out(out_offsets, "out_offsets")?;
        let e = deref(expansion, "expansion")?;
        let v = e.0.variants.get(index).ok_or_else(|| bad_arg(format!("variant {index} out of range")))?;
        *dst = GapOffsets { pronoun: v.pronoun_offset, a: v.a_offset, b: v.b_offset };
        Ok(())
    })
}

/// # Safety
/// `expansion` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gap_expansion_free(expansion: *mut GapExpansion) {
    if !expansion.is_null() {
        drop(Box::from_raw(expansion));
    }
}

/// Skip-condition coverage of the whole corpus, as JSON.
///
/// # Safety
/// Handles must be valid; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_coverage_json(
    anonymizer: *const GapAnonymizer,
    corpus: *const GapCorpus,
    out_json: *mut *mut c_char,
) -> GapStatus {
    guard(|| {
        let dst = out(out_json, "out_json")?;
        let anon = &deref(anonymizer, "anonymizer")?.0;
        let exps: Vec<_> = deref(corpus, "corpus")?.0.iter().map(|e| anon.expand(e)).collect();
        let report = coverage(&exps, anon.sets().len());
        give_string(serde_json::to_string(&report).map_err(Error::from)?, dst)
    })
}

/// Mean log loss; `labels` holds 0 (A), 1 (B) or 2 (Neither).
///
/// # Safety
/// `preds` and `labels` must point to `n` elements; `out_loss` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_log_loss(preds: *const GapTriple, labels: *const u8, n: usize, out_loss: *mut f64) -> GapStatus {
    guard(|| {
        let dst = out(out_loss, "out_loss")?;
        let preds: Vec<_> = slice(preds, n, "preds")?.iter().map(triple).collect();
        let labels = slice(labels, n, "labels")?.iter().map(|&l| label(l)).collect::<Result<Vec<_>, _>>()?;
        *dst = eval::log_loss(&preds, &labels)?;
        Ok(())
    })
}

/// Floor each probability at `threshold`, in place.
///
/// # Safety
/// `preds` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn gap_clip(preds: *mut GapTriple, n: usize, threshold: f64) -> GapStatus {
    guard(|| {
        eval::validate_clip(threshold)?;
        if n == 0 {
            return Ok(());
        }
        if preds.is_null() {
            return Err(null("preds"));
        }
        for t in std::slice::from_raw_parts_mut(preds, n) {
            let c = eval::clip_probs(triple(t), threshold);
            *t = GapTriple { a: c.a, b: c.b, neither: c.neither };
        }
        Ok(())
    })
}

/// Masculine over feminine log loss.
///
/// # Safety
/// `out_ratio` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gap_bias_ratio(feminine: f64, masculine: f64, out_ratio: *mut f64) -> GapStatus {
    guard(|| {
        let dst = out(out_ratio, "out_ratio")?;
        if !(feminine > 0.0) || !feminine.is_finite() || !masculine.is_finite() {
            return Err(bad_arg("losses must be finite and feminine loss positive"));
        }
        *dst = eval::bias_ratio(feminine, masculine);
        Ok(())
    })
}

/// Deterministic stub embedding of `surface`; `role` is 0 (A), 1 (B) or 2 (pronoun).
///
/// # Safety
/// `surface` must be a NUL-terminated string; `out_vec` must hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn gap_stub_vector(
    surface: *const c_char,
    role: u8,
    layer: i32,
    dim: usize,
    seed: u64,
    out_vec: *mut f32,
) -> GapStatus {
    guard(|| {
        let surface = str_arg(surface, "surface")?;
        let role = *Role::ALL.get(role as usize).ok_or_else(|| bad_arg(format!("role {role}")))?;
        if dim == 0 {
            return Err(bad_arg("dim must be positive"));
        }
        if out_vec.is_null() {
            return Err(null("out_vec"));
        }
        std::slice::from_raw_parts_mut(out_vec, dim).copy_from_slice(&stub_vector(surface, role, layer, dim, seed));
        Ok(())
    })
}
