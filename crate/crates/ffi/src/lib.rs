//! C ABI over the `repgn` library.
//!
//! Graphs are exposed as opaque handles created by `repgn_graph_build` and
//! released with `repgn_graph_free`. Every fallible call returns a
//! `RepgnStatus`; on failure `repgn_last_error` describes the cause for the
//! calling thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array2, ArrayView2};
use repgn::gcpool::{gcpool, GcPoolConfig};
use repgn::repgn::{NormMode, NormStats};
use repgn::spectral::EigenConfig;
use repgn::{BoundingBox, Error, ProposalGraph, RepGnConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepgnStatus {
    Ok = 0,
    InvalidInput = 1,
    Numerical = 2,
    NullPointer = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Opaque proposal graph.
pub struct RepgnGraph {
    inner: ProposalGraph,
}

/// Pipeline settings; obtain defaults from `repgn_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RepgnConfig {
    pub iou_thr: f64,
    pub min_size: usize,
    pub stop_ncut: f64,
    pub min_part: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub head_count: usize,
    pub layers: usize,
    /// 0 = moment matching, 1 = literal.
    pub norm_mode: u32,
    /// 0 = global statistics, 1 = per channel.
    pub norm_stats: u32,
    pub dense_attention: bool,
    pub iou_bias: bool,
    pub seed: u64,
    pub eigen_tol: f64,
    pub eigen_max_sweeps: usize,
}

impl From<&RepGnConfig> for RepgnConfig {
    fn from(c: &RepGnConfig) -> Self {
        Self {
            iou_thr: c.iou_thr,
            min_size: c.min_size,
            stop_ncut: c.stop_ncut,
            min_part: c.min_part,
            lambda: c.lambda,
            epsilon: c.epsilon,
            head_count: c.head_count,
            layers: c.layers,
            norm_mode: match c.norm_mode {
                NormMode::MomentMatch => 0,
                NormMode::Literal => 1,
            },
            norm_stats: match c.norm_stats {
                NormStats::Global => 0,
                NormStats::PerChannel => 1,
            },
            dense_attention: c.dense_attention,
            iou_bias: c.iou_bias,
            seed: c.seed,
            eigen_tol: c.eigen_tol,
            eigen_max_sweeps: c.eigen_max_sweeps,
        }
    }
}

impl RepgnConfig {
    fn to_config(self) -> Result<RepGnConfig, Error> {
        let norm_mode = match self.norm_mode {
            0 => NormMode::MomentMatch,
            1 => NormMode::Literal,
            v => return Err(Error::InvalidInput(format!("unknown norm_mode {v}"))),
        };
        let norm_stats = match self.norm_stats {
            0 => NormStats::Global,
            1 => NormStats::PerChannel,
            v => return Err(Error::InvalidInput(format!("unknown norm_stats {v}"))),
        };
        let cfg = RepGnConfig {
            iou_thr: self.iou_thr,
            min_size: self.min_size,
            stop_ncut: self.stop_ncut,
            min_part: self.min_part,
            lambda: self.lambda,
            epsilon: self.epsilon,
            head_count: self.head_count,
            layers: self.layers,
            norm_mode,
            norm_stats,
            dense_attention: self.dense_attention,
            iou_bias: self.iou_bias,
            seed: self.seed,
            eigen_tol: self.eigen_tol,
            eigen_max_sweeps: self.eigen_max_sweeps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RepgnStatus {
    if e.is_numerical() {
        RepgnStatus::Numerical
    } else {
        RepgnStatus::InvalidInput
    }
}

/// Runs `f`, recording errors and converting panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), (RepgnStatus, String)>) -> RepgnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RepgnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            set_error(format!("internal panic: {detail}"));
            RepgnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RepgnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(name: &str) -> (RepgnStatus, String) {
    (RepgnStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (RepgnStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_err(name));
    }
    // SAFETY: caller guarantees `p` points to `len` readable values.
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], (RepgnStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null_err(name));
    }
    // SAFETY: caller guarantees `p` points to `len` writable values.
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn read_boxes(boxes: *const f64, count: usize) -> Result<Vec<BoundingBox>, (RepgnStatus, String)> {
    let raw = slice(boxes, count * 4, "boxes")?;
    raw.chunks_exact(4).map(|c| BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(lib_err)).collect()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn repgn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fills `out` with the default configuration.
///
/// # Safety
/// `out` must be null or point to writable memory for one `RepgnConfig`.
#[no_mangle]
pub unsafe extern "C" fn repgn_config_default(out: *mut RepgnConfig) -> RepgnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        out.write(RepgnConfig::from(&RepGnConfig::default()));
        Ok(())
    })
}

/// IoU of two normalized boxes given as `[x1, y1, x2, y2]`.
///
/// # Safety
/// `a` and `b` must point to four doubles each; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn repgn_iou(a: *const f64, b: *const f64, out: *mut f64) -> RepgnStatus {
    guard(|| {
        let a = read_boxes(a, 1)?;
        let b = read_boxes(b, 1)?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        out.write(repgn::iou(&a[0], &b[0]));
        Ok(())
    })
}

/// Builds the IoU graph of `count` normalized boxes (`count × 4` doubles) with
/// `count × dim` row-major features. `features` may be null when `dim` is 0.
///
/// # Safety
/// Pointers must reference the stated number of values; `out` must be
/// writable. The returned handle must be released with `repgn_graph_free`.
#[no_mangle]
pub unsafe extern "C" fn repgn_graph_build(
    boxes: *const f64,
    count: usize,
    features: *const f64,
    dim: usize,
    iou_thr: f64,
    out: *mut *mut RepgnGraph,
) -> RepgnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let b = read_boxes(boxes, count)?;
        let f = slice(features, count * dim, "features")?;
        let x =
            Array2::from_shape_vec((count, dim), f.to_vec()).map_err(|e| (RepgnStatus::InvalidInput, e.to_string()))?;
        let g = repgn::build_graph(&b, x, iou_thr).map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(RepgnGraph { inner: g })));
        Ok(())
    })
}

/// Releases a graph handle. Null is ignored.
///
/// # Safety
/// `graph` must come from `repgn_graph_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn repgn_graph_free(graph: *mut RepgnGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn repgn_graph_node_count(graph: *const RepgnGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.node_count())
}

/// Number of edges, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn repgn_graph_edge_count(graph: *const RepgnGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.edges().len())
}

/// Copies the sorted edge list into three arrays of length `capacity`.
///
/// # Safety
/// `graph` must be a live handle; the arrays must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn repgn_graph_edges(
    graph: *const RepgnGraph,
    src: *mut usize,
    dst: *mut usize,
    weight: *mut f64,
    capacity: usize,
) -> RepgnStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null_err("graph"))?;
        let edges = g.inner.edges();
        if capacity < edges.len() {
            return Err((RepgnStatus::BufferTooSmall, format!("need room for {} edges", edges.len())));
        }
        let n = edges.len();
        let (s, d, w) = (slice_mut(src, n, "src")?, slice_mut(dst, n, "dst")?, slice_mut(weight, n, "weight")?);
        for (k, e) in edges.iter().enumerate() {
            s[k] = e.i;
            d[k] = e.j;
            w[k] = e.w;
        }
        Ok(())
    })
}

/// Graph-cut pooling. Writes one part label per node into `labels`
/// (`-1` for filtered nodes) and the part count into `part_count`.
///
/// # Safety
/// `graph` must be a live handle; `labels` must hold one entry per node.
#[no_mangle]
pub unsafe extern "C" fn repgn_gcpool(
    graph: *const RepgnGraph,
    min_size: usize,
    stop_ncut: f64,
    min_part: usize,
    labels: *mut i64,
    part_count: *mut usize,
) -> RepgnStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null_err("graph"))?;
        if part_count.is_null() {
            return Err(null_err("part_count"));
        }
        let out = slice_mut(labels, g.inner.node_count(), "labels")?;
        let cfg = GcPoolConfig { min_size, stop_ncut, min_part, eigen: EigenConfig::default() };
        let pooled = gcpool(&g.inner, &cfg).map_err(lib_err)?;
        for (dst, l) in out.iter_mut().zip(&pooled.labeling.labels) {
            *dst = l.map_or(-1, |v| v as i64);
        }
        part_count.write(pooled.labeling.part_count);
        Ok(())
    })
}

/// Full refinement with the seeded default attention stack. `out` receives
/// `count × dim` refined features.
///
/// # Safety
/// `boxes` must hold `count × 4` doubles, `features` and `out` `count × dim`;
/// `config` must be null (defaults) or point to a valid `RepgnConfig`.
#[no_mangle]
pub unsafe extern "C" fn repgn_forward(
    boxes: *const f64,
    count: usize,
    features: *const f64,
    dim: usize,
    config: *const RepgnConfig,
    use_gcpool: bool,
    out: *mut f64,
) -> RepgnStatus {
    guard(|| {
        let cfg = match config.as_ref() {
            Some(c) => c.to_config().map_err(lib_err)?,
            None => RepGnConfig::default(),
        };
        let b = read_boxes(boxes, count)?;
        let f = slice(features, count * dim, "features")?;
        let dst = slice_mut(out, count * dim, "out")?;
        let x = ArrayView2::from_shape((count, dim), f).map_err(|e| (RepgnStatus::InvalidInput, e.to_string()))?;
        let layers = cfg.init_layers(dim);
        let r = if use_gcpool {
            repgn::repgn_forward(&b, x, &layers, &cfg)
        } else {
            repgn::repgn_forward_no_gcpool(&b, x, &layers, &cfg)
        }
        .map_err(lib_err)?;
        for (d, s) in dst.iter_mut().zip(r.features.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let lib = RepGnConfig { norm_mode: NormMode::Literal, norm_stats: NormStats::PerChannel, ..Default::default() };
        assert_eq!(RepgnConfig::from(&lib).to_config().unwrap(), lib);
    }

    #[test]
    fn config_rejects_unknown_modes() {
        let mut c = RepgnConfig::from(&RepGnConfig::default());
        c.norm_stats = 7;
        assert!(c.to_config().is_err());
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), RepgnStatus::Panic);
        let msg = unsafe { std::ffi::CStr::from_ptr(repgn_last_error()) };
        assert!(msg.to_string_lossy().contains("boom"));
    }
}
