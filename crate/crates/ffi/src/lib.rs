//! C ABI over `ilgroup`.
//!
//! Datasets and models are opaque handles created by `*_load` and released
//! by `*_free`. Every fallible call returns an [`IlgStatus`]; on failure
//! [`ilg_last_error`] describes the problem for the calling thread.
//! Partitions cross the boundary as one group index per item, numbered in
//! order of each group's smallest item.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ilgroup::bench::eval::group_albums;
use ilgroup::bench::io::{read_dataset, ModelFile};
use ilgroup::engine::{run_episode, Mode, Policy};
use ilgroup::{bcubed, op_cost, Album, CostModel, Error, FaceItem, Geometry, Label, Partition};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlgStatus {
    Ok = 0,
    InvalidArgument = 1,
    Precondition = 2,
    Capacity = 3,
    DimensionMismatch = 4,
    Parse = 5,
    Schema = 6,
    Io = 7,
    NullPointer = 8,
    Internal = 9,
}

/// B-cubed scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IlgBcubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A loaded dataset.
pub struct IlgDataset {
    albums: Vec<Album>,
}

/// A loaded model with its policy settings.
pub struct IlgModel {
    file: ModelFile,
    policy: Policy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> IlgStatus {
    match e {
        Error::InvalidArgument(_) => IlgStatus::InvalidArgument,
        Error::Precondition(_) => IlgStatus::Precondition,
        Error::Capacity(_) => IlgStatus::Capacity,
        Error::DimensionMismatch { .. } => IlgStatus::DimensionMismatch,
        Error::Parse { .. } => IlgStatus::Parse,
        Error::Schema(_) => IlgStatus::Schema,
        Error::Io(_) => IlgStatus::Io,
    }
}

struct Failure(IlgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IlgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, recording any failure or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> IlgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            IlgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error");
            IlgStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IlgStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_labels(p: &Partition, out: *mut usize, capacity: usize) -> Result<(), Failure> {
    let labels = p.assignment();
    if capacity < labels.len() {
        return Err(Failure(
            IlgStatus::Capacity,
            format!("label buffer holds {capacity} entries, {} needed", labels.len()),
        ));
    }
    if out.is_null() && !labels.is_empty() {
        return Err(null("out_labels"));
    }
    if !labels.is_empty() {
        std::slice::from_raw_parts_mut(out, labels.len()).copy_from_slice(&labels);
    }
    Ok(())
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ilg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ilg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a JSON Lines dataset. With `normalize` non-zero, embeddings are
/// rescaled to unit norm instead of rejected.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilg_dataset_load(path: *const c_char, normalize: bool, out: *mut *mut IlgDataset) -> IlgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let albums = read_dataset(&path_arg(path)?, normalize)?;
        *out = Box::into_raw(Box::new(IlgDataset { albums }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must come from `ilg_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ilg_dataset_free(ds: *mut IlgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of albums, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ilg_dataset_album_count(ds: *const IlgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.albums.len())
}

/// Number of faces in album `index`.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilg_dataset_album_size(ds: *const IlgDataset, index: usize, out: *mut usize) -> IlgStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let album = ds
            .albums
            .get(index)
            .ok_or_else(|| Failure(IlgStatus::InvalidArgument, format!("album index {index} out of range")))?;
        *out = album.len();
        Ok(())
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilg_model_load(path: *const c_char, out: *mut *mut IlgModel) -> IlgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file = ModelFile::load(&path_arg(path)?)?;
        let policy = file.policy();
        *out = Box::into_raw(Box::new(IlgModel { file, policy }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from `ilg_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ilg_model_free(model: *mut IlgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the pair feature vector the model expects, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ilg_model_feature_dim(model: *const IlgModel) -> usize {
    model.as_ref().map_or(0, |m| m.file.config.policy.features.dim())
}

/// Groups album `index` of `ds`, writing one group index per face into
/// `out_labels` (room for `capacity` entries).
///
/// # Safety
/// Handles must be live; `out_labels` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn ilg_group_album(
    model: *const IlgModel,
    ds: *const IlgDataset,
    index: usize,
    out_labels: *mut usize,
    capacity: usize,
) -> IlgStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let album = ds
            .albums
            .get(index)
            .ok_or_else(|| Failure(IlgStatus::InvalidArgument, format!("album index {index} out of range")))?;
        let trace = group_albums(std::slice::from_ref(album), &model.policy, &model.file.config.policy)?;
        write_labels(&trace[0].final_partition, out_labels, capacity)
    })
}

/// Groups `n_items` faces given as a row-major `n_items x dim` embedding
/// matrix and per-face qualities.
///
/// # Safety
/// `embeddings` must hold `n_items * dim` values, `qualities` and
/// `out_labels` `n_items` each.
#[no_mangle]
pub unsafe extern "C" fn ilg_group_embeddings(
    model: *const IlgModel,
    embeddings: *const f64,
    n_items: usize,
    dim: usize,
    qualities: *const f64,
    normalize: bool,
    out_labels: *mut usize,
) -> IlgStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let total = n_items
            .checked_mul(dim)
            .ok_or_else(|| Failure(IlgStatus::InvalidArgument, "n_items * dim overflows".into()))?;
        let e = slice_arg(embeddings, total, "embeddings")?;
        let q = slice_arg(qualities, n_items, "qualities")?;
        let items = (0..n_items)
            .map(|i| FaceItem::new(i.to_string(), e[i * dim..(i + 1) * dim].to_vec(), q[i], Label::Unknown, normalize))
            .collect::<Result<Vec<_>, _>>()?;
        let album = Album::new("input", items)?;
        let cfg = &model.file.config.policy;
        let trace = run_episode("input", &Geometry::from_album(&album), &model.policy, cfg, Mode::Inference)?;
        write_labels(&trace.final_partition, out_labels, n_items)
    })
}

unsafe fn partitions(pred: *const usize, gt: *const usize, n: usize) -> Result<(Partition, Partition), Failure> {
    let p = slice_arg(pred, n, "pred")?;
    let g = slice_arg(gt, n, "gt")?;
    Ok((Partition::from_assignment(p), Partition::from_assignment(g)))
}

/// B-cubed precision, recall and F1 of `pred` against `gt` (label arrays of
/// length `n`).
///
/// # Safety
/// `pred` and `gt` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilg_bcubed(pred: *const usize, gt: *const usize, n: usize, out: *mut IlgBcubed) -> IlgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = partitions(pred, gt, n)?;
        let s = bcubed(&p, &g)?;
        *out = IlgBcubed { precision: s.precision, recall: s.recall, f1: s.f1 };
        Ok(())
    })
}

/// Operation cost of turning `pred` into `gt` under the given per-operation
/// costs.
///
/// # Safety
/// `pred` and `gt` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilg_op_cost(
    pred: *const usize,
    gt: *const usize,
    n: usize,
    cost_add: f64,
    cost_remove: f64,
    cost_merge: f64,
    out: *mut f64,
) -> IlgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let costs = CostModel::new(cost_add, cost_remove, cost_merge)?;
        let (p, g) = partitions(pred, gt, n)?;
        *out = op_cost(&p, &g, &costs)?.total_cost;
        Ok(())
    })
}
