//! C ABI over the elastica core.
//!
//! Trees and codes cross the boundary as opaque heap handles owned by the
//! caller and released with the matching `*_free`. Every fallible function
//! returns an [`ElasticaStatus`]; on failure the message is kept per thread
//! and read back with [`elastica_last_error`]. Output buffers follow the
//! usual two-call protocol: a too-small buffer yields
//! `ELASTICA_STATUS_BUFFER_TOO_SMALL` and the required length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use elastica::codec::{self, EncodedBlob, HuffmanCode};
use elastica::elasticity::{self, Component, ElasticityConfig};
use elastica::error::Error;
use elastica::mass::MassLaw;
use elastica::token_tree::{self, PrunedTree, Response, WeightedDataset};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElasticaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    EmptyDataset = 10,
    InvalidToken = 11,
    Unterminated = 12,
    DepthMismatch = 13,
    SupportMismatch = 14,
    OutOfModel = 15,
    InvalidArgument = 16,
    ParseError = 17,
    BlobError = 18,
    Other = 98,
    Panic = 99,
}

impl From<&Error> for ElasticaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::EmptyDataset => ElasticaStatus::EmptyDataset,
            Error::InvalidToken(_) => ElasticaStatus::InvalidToken,
            Error::Unterminated(_) => ElasticaStatus::Unterminated,
            Error::DepthMismatch { .. } => ElasticaStatus::DepthMismatch,
            Error::SupportMismatch(_) => ElasticaStatus::SupportMismatch,
            Error::OutOfModel(_) => ElasticaStatus::OutOfModel,
            Error::InvalidArgument(_) | Error::Spec(_) => ElasticaStatus::InvalidArgument,
            Error::Parse { .. } => ElasticaStatus::ParseError,
            Error::Blob(_) => ElasticaStatus::BlobError,
            _ => ElasticaStatus::Other,
        }
    }
}

/// Which normalized rate [`elastica_gamma_mc`] estimates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElasticaComponent {
    Pretrain = 0,
    Alignment = 1,
}

/// Pruned token tree.
pub struct ElasticaTree {
    tree: PrunedTree,
}

/// Huffman code over a tree's leaves, with the tree it was built for.
pub struct ElasticaCode {
    tree: PrunedTree,
    code: HuffmanCode,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Status(ElasticaStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null() -> Fail {
    Fail::Status(ElasticaStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ElasticaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ElasticaStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            ElasticaStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic");
            ElasticaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Status(ElasticaStatus::InvalidUtf8, "argument is not UTF-8".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

/// Copies `bytes` into a caller buffer, always reporting the needed length.
unsafe fn fill(bytes: &[u8], buf: *mut u8, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out_arg(out_len)? = bytes.len();
    if bytes.len() > cap {
        return Err(Fail::Status(ElasticaStatus::BufferTooSmall, format!("buffer needs {} bytes", bytes.len())));
    }
    if !bytes.is_empty() {
        if buf.is_null() {
            return Err(null());
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn elastica_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn elastica_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the token tree of a dataset in the text format (one response per
/// line, optional ` x<count>`, `-` for the empty response) and prunes it at
/// `depth`.
///
/// # Safety
/// `dataset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn elastica_tree_from_dataset(
    dataset: *const c_char,
    depth: usize,
    out: *mut *mut ElasticaTree,
) -> ElasticaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = std::ptr::null_mut();
        let ds = WeightedDataset::parse(str_arg(dataset)?)?;
        let tree = token_tree::prune(&token_tree::build_tree(&ds)?, depth)?;
        *out = Box::into_raw(Box::new(ElasticaTree { tree }));
        Ok(())
    })
}

/// # Safety
/// `tree` must come from `elastica_tree_from_dataset` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn elastica_tree_free(tree: *mut ElasticaTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_tree_leaf_count(tree: *const ElasticaTree, out: *mut usize) -> ElasticaStatus {
    guard(|| {
        *out_arg(out)? = ref_arg(tree)?.tree.leaf_count();
        Ok(())
    })
}

/// Leaf entropy in bits.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_tree_entropy(tree: *const ElasticaTree, out: *mut f64) -> ElasticaStatus {
    guard(|| {
        *out_arg(out)? = token_tree::entropy(&ref_arg(tree)?.tree);
        Ok(())
    })
}

/// Cross-entropy of `data` under `model`, in bits.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_cross_entropy(
    data: *const ElasticaTree,
    model: *const ElasticaTree,
    out: *mut f64,
) -> ElasticaStatus {
    guard(|| {
        *out_arg(out)? = token_tree::cross_entropy(&ref_arg(data)?.tree, &ref_arg(model)?.tree)?;
        Ok(())
    })
}

/// Cross-entropy minus `log2 M`, `M` the data tree's leaf count.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_normalized_rate(
    data: *const ElasticaTree,
    model: *const ElasticaTree,
    out: *mut f64,
) -> ElasticaStatus {
    guard(|| {
        *out_arg(out)? = codec::normalized_rate(&ref_arg(data)?.tree, &ref_arg(model)?.tree)?;
        Ok(())
    })
}

/// `ceil(len/d) * ceil(H)` bits for a response of `response_len` tokens.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_ideal_code_length(
    tree: *const ElasticaTree,
    response_len: usize,
    out: *mut u64,
) -> ElasticaStatus {
    guard(|| {
        *out_arg(out)? = codec::ideal_code_length(&ref_arg(tree)?.tree, response_len);
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_code_build(tree: *const ElasticaTree, out: *mut *mut ElasticaCode) -> ElasticaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = std::ptr::null_mut();
        let tree = ref_arg(tree)?.tree.clone();
        let code = codec::huffman_build(&tree)?;
        *out = Box::into_raw(Box::new(ElasticaCode { tree, code }));
        Ok(())
    })
}

/// # Safety
/// `code` must come from `elastica_code_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn elastica_code_free(code: *mut ElasticaCode) {
    if !code.is_null() {
        drop(Box::from_raw(code));
    }
}

/// Expected codeword length under the tree's own leaf distribution.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_code_expected_length(code: *const ElasticaCode, out: *mut f64) -> ElasticaStatus {
    guard(|| {
        let c = ref_arg(code)?;
        *out_arg(out)? = c.code.expected_length(c.tree.probs());
        Ok(())
    })
}

/// Encodes a `'0'`/`'1'` response (empty string for the empty response) into
/// one blob in the on-disk blob format.
///
/// # Safety
/// `response` must be NUL-terminated; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn elastica_encode(
    code: *const ElasticaCode,
    response: *const c_char,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ElasticaStatus {
    guard(|| {
        let c = ref_arg(code)?;
        let r = Response::parse(str_arg(response)?)?;
        let blob = codec::encode(&c.code, &c.tree, &r)?;
        let mut bytes = Vec::new();
        codec::write_blob(&mut bytes, &c.code, &blob)?;
        fill(&bytes, buf, cap, out_len)
    })
}

/// Decodes one blob into a NUL-terminated `'0'`/`'1'` string. `out_len`
/// receives the length including the terminator.
///
/// # Safety
/// `blob` must hold `blob_len` bytes and `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn elastica_decode(
    code: *const ElasticaCode,
    blob: *const u8,
    blob_len: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> ElasticaStatus {
    guard(|| {
        let c = ref_arg(code)?;
        if blob.is_null() && blob_len > 0 {
            return Err(null());
        }
        let data = if blob_len == 0 { &[][..] } else { std::slice::from_raw_parts(blob, blob_len) };
        let blobs: Vec<EncodedBlob> = codec::read_blobs(data, &c.code)?;
        if blobs.len() != 1 {
            return Err(Fail::Core(Error::Blob(format!("expected one blob, found {}", blobs.len()))));
        }
        let r = codec::decode(&c.code, &blobs[0])?;
        let mut bytes = r.bits().into_bytes();
        bytes.push(0);
        fill(&bytes, buf.cast(), cap, out_len)
    })
}

/// Monte-Carlo estimate of one normalized rate at `(k, l)` under the
/// unit-mean Pareto law with tail index `alpha` (`alpha <= 0` selects the
/// point mass `X = 1`).
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastica_gamma_mc(
    k: f64,
    alpha: f64,
    l: f64,
    n_samples: u64,
    seed: u64,
    component: ElasticaComponent,
    out_mean: *mut f64,
    out_se: *mut f64,
) -> ElasticaStatus {
    guard(|| {
        let law = if alpha <= 0.0 { MassLaw::Degenerate } else { MassLaw::pareto(alpha)? };
        let cfg = ElasticityConfig::new(k, vec![l], law, n_samples, seed, 1e-4)?;
        let comp = match component {
            ElasticaComponent::Pretrain => Component::Pretrain,
            ElasticaComponent::Alignment => Component::Alignment,
        };
        let est = elasticity::gamma_component_mc(&cfg, comp, l)?;
        *out_arg(out_mean)? = est.mean;
        *out_arg(out_se)? = est.se;
        Ok(())
    })
}
