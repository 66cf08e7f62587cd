//! C ABI over the taxonomy, the meta-sense mapper, encoder checkpoints and
//! the correlation routine.
//!
//! Every function returns an [`MsStatus`]. On failure the message is kept in
//! thread-local storage and read with [`ms_last_error_message`]. Handles are
//! opaque and freed with their `*_free` function; freeing null is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use metasense::corelex::{MetaSenseInventory, MetaSenseMapper};
use metasense::encoder::{checkpoint, EncoderModel};
use metasense::error::Error;
use metasense::eval::correlate;
use metasense::wordnet::{Pos, SynsetId, Taxonomy};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    UnknownSynset = 5,
    Config = 6,
    Data = 7,
    Contract = 8,
    UndefinedCorrelation = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

/// A synset: part-of-speech tag (`n`, `v`, `a`, `r`) and database offset.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MsSynset {
    pub pos: c_char,
    pub offset: u32,
}

pub struct MsTaxonomy {
    tax: Arc<Taxonomy>,
}

pub struct MsMapper {
    mapper: MetaSenseMapper,
}

pub struct MsModel {
    model: EncoderModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Io { .. } | Error::MissingFiles { .. } => MsStatus::Io,
        Error::Parse { .. } => MsStatus::Parse,
        Error::UnknownSynset(_) => MsStatus::UnknownSynset,
        Error::Config { .. } => MsStatus::Config,
        Error::Data(_) | Error::Skip(_) => MsStatus::Data,
        Error::Contract(_) | Error::NoCommonSubsumer(..) => MsStatus::Contract,
        Error::UndefinedCorrelation(_) => MsStatus::UndefinedCorrelation,
        _ => MsStatus::Other,
    }
}

struct Fail(MsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MsStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn synset(s: MsSynset) -> Result<SynsetId, Fail> {
    let tag = (s.pos as u8 as char).to_string();
    let pos = Pos::from_tag(&tag).ok_or_else(|| Fail(MsStatus::Contract, format!("bad part of speech `{tag}`")))?;
    Ok(SynsetId::new(pos, s.offset))
}

fn out_synset(s: SynsetId) -> MsSynset {
    MsSynset {
        pos: s.pos.tag() as u8 as c_char,
        offset: s.offset,
    }
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a WordNet `dict` directory.
///
/// # Safety
/// `dir` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_load(dir: *const c_char, out: *mut *mut MsTaxonomy) -> MsStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tax = Taxonomy::load(PathBuf::from(dir))?;
        *out = Box::into_raw(Box::new(MsTaxonomy { tax: Arc::new(tax) }));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from [`ms_taxonomy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_free(t: *mut MsTaxonomy) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of synsets, excluding the virtual root.
///
/// # Safety
/// `t` must be a live taxonomy handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_len(t: *const MsTaxonomy, out: *mut usize) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = t.tax.len();
        Ok(())
    })
}

/// Resolves `lemma.pos.NN` or `pos:offset` to a synset.
///
/// # Safety
/// `t` must be a live handle, `key` a valid C string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_resolve(t: *const MsTaxonomy, key: *const c_char, out: *mut MsSynset) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let key = text(key, "key")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = out_synset(t.tax.resolve(key)?);
        Ok(())
    })
}

/// Hypernym-path depth with the virtual root at depth 1.
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_depth(t: *const MsTaxonomy, s: MsSynset, out: *mut u32) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = t.tax.depth(synset(s)?)?;
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_taxonomy_lcs(t: *const MsTaxonomy, a: MsSynset, b: MsSynset, out: *mut MsSynset) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = out_synset(t.tax.lcs(synset(a)?, synset(b)?)?);
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_wu_palmer(t: *const MsTaxonomy, a: MsSynset, b: MsSynset, out: *mut f64) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = t.tax.wu_palmer(synset(a)?, synset(b)?)?;
        Ok(())
    })
}

/// Builds a mapper over the shipped anchor table, or over the table at
/// `table_path` when it is not null. The taxonomy handle may be freed
/// afterwards.
///
/// # Safety
/// `t` must be a live handle, `table_path` null or a valid C string, `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_mapper_new(t: *const MsTaxonomy, table_path: *const c_char, out: *mut *mut MsMapper) -> MsStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inv = if table_path.is_null() {
            MetaSenseInventory::load(&t.tax)?
        } else {
            MetaSenseInventory::load_file(&t.tax, text(table_path, "table_path")?)?
        };
        let mapper = MetaSenseMapper::new(t.tax.clone(), inv)?;
        *out = Box::into_raw(Box::new(MsMapper { mapper }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`ms_mapper_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_mapper_free(m: *mut MsMapper) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Writes the meta-sense code of a noun synset into `buf` (NUL-terminated)
/// and its path distance to the anchor into `distance` when not null.
///
/// # Safety
/// `m` must be a live handle and `buf` valid for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_mapper_map(
    m: *const MsMapper,
    s: MsSynset,
    buf: *mut c_char,
    buf_len: usize,
    distance: *mut u32,
) -> MsStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("mapper"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let mapping = m.mapper.mapping(synset(s)?)?;
        let code = &m.mapper.inventory().entries()[mapping.index].code;
        if code.len() + 1 > buf_len {
            return Err(Fail(MsStatus::BufferTooSmall, format!("need {} bytes", code.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(code.as_ptr(), buf as *mut u8, code.len());
        *buf.add(code.len()) = 0;
        if let Some(d) = distance.as_mut() {
            *d = mapping.distance;
        }
        Ok(())
    })
}

/// Loads an encoder checkpoint directory.
///
/// # Safety
/// `dir` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(dir: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(dir)?;
        *out = Box::into_raw(Box::new(MsModel { model }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`ms_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(m: *mut MsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Hidden size of the model.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_dim(m: *const MsModel, out: *mut usize) -> MsStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.model.cfg.d_model;
        Ok(())
    })
}

/// Vocabulary id of `token`; fails with `Data` when it is unknown.
///
/// # Safety
/// `m` must be a live handle, `token` a valid C string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_token_id(m: *const MsModel, token: *const c_char, out: *mut u32) -> MsStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let token = text(token, "token")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m
            .model
            .tokenizer
            .id(token)
            .ok_or_else(|| Fail(MsStatus::Data, format!("`{token}` is not in the vocabulary")))?;
        Ok(())
    })
}

/// Final-layer hidden state at `position` of the sentence `ids[..n_ids]`,
/// written to `out[..out_len]`; `out_len` must equal the model dimension.
///
/// # Safety
/// `m` must be a live handle, `ids` valid for `n_ids` reads and `out` valid
/// for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ms_model_encode(
    m: *const MsModel,
    ids: *const u32,
    n_ids: usize,
    position: usize,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        if ids.is_null() || out.is_null() {
            return Err(null("ids or out"));
        }
        if out_len != m.model.cfg.d_model {
            return Err(Fail(MsStatus::BufferTooSmall, format!("out_len must be {}", m.model.cfg.d_model)));
        }
        let ids = std::slice::from_raw_parts(ids, n_ids);
        let vocab = m.model.vocab_size() as u32;
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Fail(MsStatus::Contract, format!("id {bad} outside a vocabulary of {vocab}")));
        }
        let h = m.model.encode(ids, position)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(h.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Pearson correlation of `x[..n]` and `y[..n]` with a two-sided p-value.
///
/// # Safety
/// `x` and `y` must be valid for `n` reads; `rho` and `p` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ms_pearson(x: *const f64, y: *const f64, n: usize, rho: *mut f64, p: *mut f64) -> MsStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return Err(null("x or y"));
        }
        let rho = rho.as_mut().ok_or_else(|| null("rho"))?;
        let p = p.as_mut().ok_or_else(|| null("p"))?;
        let (r, pv) = correlate(std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n))?;
        *rho = r;
        *p = pv;
        Ok(())
    })
}
