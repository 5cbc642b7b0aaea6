//! The full refinement pipeline: IoU graph, graph-cut pooling with coarse
//! context nodes, stacked graph attention, and residual mixing with
//! moment-preserving normalization.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attend, AttentionOptions, AttentionParams};
use crate::error::{Error, Result};
use crate::gcpool::{augment_with_coarse, gcpool, GcPoolConfig, PoolStats, PseudoLabeling};
use crate::geometry::BoundingBox;
use crate::graph::{build_graph, NodeId};
use crate::spectral::EigenConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `(Z − E[V]) / (Var[V] + ε)` as printed.
    Literal,
    /// Restandardize `Z` to the mean and spread of `V`.
    #[default]
    MomentMatch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStats {
    /// One mean/variance over every entry of the feature matrix.
    #[default]
    Global,
    /// Separate statistics per feature column.
    PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepGnConfig {
    pub iou_thr: f64,
    pub min_size: usize,
    pub stop_ncut: f64,
    pub min_part: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub head_count: usize,
    pub layers: usize,
    pub norm_mode: NormMode,
    pub norm_stats: NormStats,
    pub dense_attention: bool,
    pub iou_bias: bool,
    pub seed: u64,
    pub eigen_tol: f64,
    pub eigen_max_sweeps: usize,
}

impl Default for RepGnConfig {
    fn default() -> Self {
        Self {
            iou_thr: 0.3,
            min_size: 3,
            stop_ncut: 0.5,
            min_part: 1,
            lambda: 1.0,
            epsilon: 1e-8,
            head_count: 8,
            layers: 2,
            norm_mode: NormMode::MomentMatch,
            norm_stats: NormStats::Global,
            dense_attention: false,
            iou_bias: false,
            seed: 0,
            eigen_tol: 1e-10,
            eigen_max_sweeps: 100,
        }
    }
}

impl RepGnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if !(0.0..1.0).contains(&self.iou_thr) {
            return fail(format!("iou_thr {} outside [0, 1)", self.iou_thr));
        }
        if self.min_size < 1 || self.min_part < 1 {
            return fail("min_size and min_part must be at least 1".into());
        }
        if !(self.stop_ncut >= 0.0 && self.stop_ncut.is_finite()) {
            return fail(format!("stop_ncut {} must be finite and non-negative", self.stop_ncut));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.head_count < 1 {
            return fail("head_count must be at least 1".into());
        }
        if !(self.eigen_tol > 0.0) || self.eigen_max_sweeps == 0 {
            return fail("eigen_tol and eigen_max_sweeps must be positive".into());
        }
        Ok(())
    }

    pub fn pool_config(&self) -> GcPoolConfig {
        GcPoolConfig {
            min_size: self.min_size,
            stop_ncut: self.stop_ncut,
            min_part: self.min_part,
            eigen: EigenConfig { tol: self.eigen_tol, max_sweeps: self.eigen_max_sweeps },
        }
    }

    pub fn attention_options(&self) -> AttentionOptions {
        AttentionOptions { dense: self.dense_attention, iou_bias: self.iou_bias }
    }

    /// Seeded attention stack mapping `dim`-features back to `dim`.
    pub fn init_layers(&self, dim: usize) -> Vec<AttentionParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.layers).map(|_| AttentionParams::init(&mut rng, dim, self.head_count, Some(dim))).collect()
    }
}

/// Population mean and variance, summed in iteration order.
fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

fn normalize_block(
    mut z: ArrayViewMut1<'_, f64>,
    v: ndarray::ArrayView1<'_, f64>,
    epsilon: f64,
    mode: NormMode,
) -> Result<()> {
    let (mean_v, var_v) = moments(v.iter());
    match mode {
        NormMode::Literal => {
            let denom = var_v + epsilon;
            if !(denom > 0.0) {
                return Err(Error::Numerical("Var[V] + epsilon is zero".into()));
            }
            z.mapv_inplace(|x| (x - mean_v) / denom);
        }
        NormMode::MomentMatch => {
            let (mean_z, var_z) = moments(z.iter());
            // ε on both spreads keeps Z = V an exact fixed point.
            let scale = (var_v.sqrt() + epsilon) / (var_z.sqrt() + epsilon);
            z.mapv_inplace(|x| (x - mean_z) * scale + mean_v);
        }
    }
    Ok(())
}

/// Residual mix `Z = λ·refined + original`, normalized against the
/// statistics of `original`.
pub fn identical_normalize(
    refined: ArrayView2<'_, f64>,
    original: ArrayView2<'_, f64>,
    lambda: f64,
    epsilon: f64,
    mode: NormMode,
    stats: NormStats,
) -> Result<Array2<f64>> {
    if refined.dim() != original.dim() {
        return Err(Error::invalid(format!(
            "refined {:?} and original {:?} differ in shape",
            refined.dim(),
            original.dim()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be non-negative")));
    }
    let mut z = &refined * lambda + original;
    if z.is_empty() {
        return Ok(z);
    }
    match stats {
        NormStats::Global => {
            let shape = z.dim();
            let mut flat = Array1::from_iter(z.iter().copied());
            let v = Array1::from_iter(original.iter().copied());
            normalize_block(flat.view_mut(), v.view(), epsilon, mode)?;
            z = flat.into_shape_with_order(shape).expect("same element count");
        }
        NormStats::PerChannel => {
            for (zc, vc) in z.axis_iter_mut(Axis(1)).zip(original.axis_iter(Axis(1))) {
                normalize_block(zc, vc, epsilon, mode)?;
            }
        }
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("normalized features are not finite".into()));
    }
    Ok(z)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub edges: usize,
    pub pool: Option<PoolStats>,
    pub labeling: Option<PseudoLabeling>,
    pub coarse_nodes: usize,
    /// Wall time per stage in milliseconds, in execution order.
    pub stage_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedProposals {
    pub features: Array2<f64>,
    pub original_ids: Vec<NodeId>,
    pub diagnostics: Diagnostics,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn run(
    boxes: &[BoundingBox],
    features: ArrayView2<'_, f64>,
    layers: &[AttentionParams],
    cfg: &RepGnConfig,
    with_pool: bool,
) -> Result<RefinedProposals> {
    cfg.validate()?;
    let (m, d) = features.dim();
    let mut diag = Diagnostics::default();

    let t = Instant::now();
    let g = build_graph(boxes, features.to_owned(), cfg.iou_thr)?;
    diag.edges = g.edges().len();
    diag.stage_ms.push(("graph".into(), ms_since(t)));

    let g = if with_pool {
        let t = Instant::now();
        let pool = gcpool(&g, &cfg.pool_config())?;
        diag.stage_ms.push(("gcpool".into(), ms_since(t)));
        diag.coarse_nodes = pool.coarse.len();
        diag.pool = Some(pool.stats);
        diag.labeling = Some(pool.labeling);
        augment_with_coarse(&g, &pool.coarse)?
    } else {
        g
    };

    let t = Instant::now();
    let opts = cfg.attention_options();
    let mut x = g.features().to_owned();
    for (k, layer) in layers.iter().enumerate() {
        x = multi_head_attend(x.view(), layer, &g, &opts).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::invalid(format!("attention layer {k}: {msg}")),
            other => other,
        })?;
    }
    if x.ncols() != d {
        return Err(Error::invalid(format!("attention stack maps dimension {d} to {}, expected {d}", x.ncols())));
    }
    diag.stage_ms.push(("attention".into(), ms_since(t)));

    let t = Instant::now();
    let refined = x.slice(ndarray::s![..m, ..]);
    let out = identical_normalize(refined, features, cfg.lambda, cfg.epsilon, cfg.norm_mode, cfg.norm_stats)?;
    diag.stage_ms.push(("normalize".into(), ms_since(t)));

    Ok(RefinedProposals { features: out, original_ids: (0..m as NodeId).collect(), diagnostics: diag })
}

/// Refines `M` proposal features; coarse context nodes take part in attention
/// but are dropped from the output.
pub fn repgn_forward(
    boxes: &[BoundingBox],
    features: ArrayView2<'_, f64>,
    layers: &[AttentionParams],
    cfg: &RepGnConfig,
) -> Result<RefinedProposals> {
    run(boxes, features, layers, cfg, true)
}

/// Same pipeline without graph-cut pooling.
pub fn repgn_forward_no_gcpool(
    boxes: &[BoundingBox],
    features: ArrayView2<'_, f64>,
    layers: &[AttentionParams],
    cfg: &RepGnConfig,
) -> Result<RefinedProposals> {
    run(boxes, features, layers, cfg, false)
}
