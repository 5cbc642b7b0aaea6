//! Graph attention over proposal features.
//!
//! Each head scores an attendable pair by a linear functional of the
//! concatenated features, `s(i, j) = w · [x_i ; x_j] + b`, normalizes every
//! row with a softmax over its attendable entries and aggregates
//! `v'_i = Σ_j softmax(s_i)_j x_j`. Heads are concatenated and optionally
//! projected.
//!
//! Note that the query half of `w` and the bias are constant along a row, so
//! they cancel in the softmax; only the key half shapes the weights. Their
//! gradients are therefore identically zero.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ProposalGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// Length `2d`: query half then key half.
    pub score_weights: Vec<f64>,
    pub score_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `(h·d) × d_out`; without it the output is the raw head concatenation.
    pub output_projection: Option<Array2<f64>>,
}

impl AttentionParams {
    /// Seeded uniform initialization: score weights in `±1/√(2d)`,
    /// projection entries in `±1/√(h·d)`.
    pub fn init<R: Rng>(rng: &mut R, dim: usize, head_count: usize, d_out: Option<usize>) -> Self {
        let bound = 1.0 / ((2 * dim).max(1) as f64).sqrt();
        let heads = (0..head_count)
            .map(|_| HeadParams {
                score_weights: (0..2 * dim).map(|_| rng.random_range(-bound..=bound)).collect(),
                score_bias: 0.0,
            })
            .collect();
        let output_projection = d_out.map(|d_out| {
            let fan_in = head_count * dim;
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Array2::from_shape_fn((fan_in, d_out), |_| rng.random_range(-bound..=bound))
        });
        Self { heads, output_projection }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Input feature dimension implied by the score weights.
    pub fn input_dim(&self) -> Option<usize> {
        self.heads.first().map(|h| h.score_weights.len() / 2)
    }

    pub fn output_dim(&self) -> Option<usize> {
        match &self.output_projection {
            Some(p) => Some(p.ncols()),
            None => self.input_dim().map(|d| d * self.head_count()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::invalid("attention needs at least one head"));
        }
        for (k, h) in self.heads.iter().enumerate() {
            if h.score_weights.len() != 2 * dim {
                return Err(Error::invalid(format!(
                    "head {k} has {} score weights, features need {}",
                    h.score_weights.len(),
                    2 * dim
                )));
            }
            if h.score_weights.iter().any(|w| !w.is_finite()) || !h.score_bias.is_finite() {
                return Err(Error::invalid(format!("head {k} has non-finite parameters")));
            }
        }
        if let Some(p) = &self.output_projection {
            if p.nrows() != self.heads.len() * dim {
                return Err(Error::invalid(format!(
                    "projection has {} rows, heads produce {}",
                    p.nrows(),
                    self.heads.len() * dim
                )));
            }
            if p.iter().any(|w| !w.is_finite()) {
                return Err(Error::invalid("projection has non-finite entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionOptions {
    /// Every node attends to every node instead of graph neighbors and itself.
    pub dense: bool,
    /// Add `ln w_ij` to the score of each graph edge.
    pub iou_bias: bool,
}

/// Pre-softmax scores of attendable pairs, one sparse row per node.
///
/// Entries absent from a row are masked out. Rows are sorted by column and
/// always contain the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl AffinityMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let m = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.windows(2).any(|p| p[0].0 >= p[1].0) || row.iter().any(|&(j, _)| j >= m) {
                return Err(Error::invalid(format!("affinity row {i} is not sorted or out of range")));
            }
            if !row.iter().any(|&(j, _)| j == i) {
                return Err(Error::invalid(format!("affinity row {i} lacks its diagonal")));
            }
        }
        Ok(Self { rows })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(c, _)| c).ok().map(|k| row[k].1)
    }

    pub fn is_attendable(&self, i: usize, j: usize) -> bool {
        self.score(i, j).is_some()
    }

    /// Dense boolean mask.
    pub fn mask(&self) -> Array2<bool> {
        let m = self.size();
        let mut mask = Array2::from_elem((m, m), false);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                mask[[i, j]] = true;
            }
        }
        mask
    }

    /// Row-wise softmax over attendable entries.
    pub fn softmax(&self) -> Result<Vec<Vec<(usize, f64)>>> {
        self.rows.iter().map(|row| softmax_row(row)).collect()
    }
}

fn softmax_row(row: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    if row.iter().any(|&(_, s)| !s.is_finite()) {
        return Err(Error::Numerical("non-finite attention score".into()));
    }
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &(_, s)| a.max(s));
    let exps: Vec<f64> = row.iter().map(|&(_, s)| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(row.iter().zip(exps).map(|(&(j, _), e)| (j, e / z)).collect())
}

/// Attendable columns per row: graph neighbors plus self, or everything.
fn attendable(g: &ProposalGraph, opts: &AttentionOptions) -> Vec<Vec<(usize, f64)>> {
    let m = g.node_count();
    (0..m)
        .map(|i| {
            if opts.dense {
                (0..m).map(|j| (j, if j == i { 1.0 } else { g.weight(i, j).unwrap_or(0.0) })).collect()
            } else {
                let mut row: Vec<(usize, f64)> = g.neighbors(i).to_vec();
                let at = row.partition_point(|&(j, _)| j < i);
                row.insert(at, (i, 1.0));
                row
            }
        })
        .collect()
}

fn check_features(features: ArrayView2<'_, f64>, g: &ProposalGraph) -> Result<()> {
    if features.nrows() != g.node_count() {
        return Err(Error::invalid(format!(
            "{} feature rows for a graph of {} nodes",
            features.nrows(),
            g.node_count()
        )));
    }
    Ok(())
}

fn head_scores(
    features: ArrayView2<'_, f64>,
    head: &HeadParams,
    structure: &[Vec<(usize, f64)>],
    opts: &AttentionOptions,
) -> AffinityMatrix {
    let d = features.ncols();
    let query = Array1::from(head.score_weights[..d].to_vec());
    let key = Array1::from(head.score_weights[d..].to_vec());
    let q = features.dot(&query);
    let k = features.dot(&key);
    let rows = structure
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&(j, w)| {
                    let mut s = q[i] + k[j] + head.score_bias;
                    if opts.iou_bias && j != i && w > 0.0 {
                        s += w.ln();
                    }
                    (j, s)
                })
                .collect()
        })
        .collect();
    AffinityMatrix { rows }
}

/// Scores of one head on the attendable pairs of `g`.
pub fn similarity_scores(
    features: ArrayView2<'_, f64>,
    head: &HeadParams,
    g: &ProposalGraph,
    opts: &AttentionOptions,
) -> Result<AffinityMatrix> {
    check_features(features, g)?;
    if head.score_weights.len() != 2 * features.ncols() {
        return Err(Error::invalid(format!(
            "{} score weights for features of dimension {}",
            head.score_weights.len(),
            features.ncols()
        )));
    }
    Ok(head_scores(features, head, &attendable(g, opts), opts))
}

/// Reorders a row by `(score, feature row)` so that every sum over it depends
/// only on the multiset of terms, not on node numbering.
fn canonical_row(row: &[(usize, f64)], features: ArrayView2<'_, f64>) -> Vec<(usize, f64)> {
    let mut sorted = row.to_vec();
    sorted.sort_by(|&(a, sa), &(b, sb)| {
        sa.total_cmp(&sb).then_with(|| {
            features
                .row(a)
                .iter()
                .zip(features.row(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    sorted
}

/// `v'_i = softmax(A_i) · V` over the attendable entries of each row.
///
/// Each row is accumulated in a canonical order, which makes the result
/// exactly equivariant under node relabeling.
pub fn attend(features: ArrayView2<'_, f64>, aff: &AffinityMatrix) -> Result<Array2<f64>> {
    let (m, d) = features.dim();
    if aff.size() != m {
        return Err(Error::invalid(format!("affinity is {0}x{0}, features have {m} rows", aff.size())));
    }
    let rows: Vec<Array1<f64>> = aff
        .rows
        .par_iter()
        .map(|row| {
            let p = softmax_row(&canonical_row(row, features))?;
            let mut out = Array1::zeros(d);
            for (j, pj) in p {
                out.scaled_add(pj, &features.row(j));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((m, d));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    Ok(out)
}

/// Softmax rows of one head.
type HeadProbs = Vec<Vec<(usize, f64)>>;

fn head_outputs(
    features: ArrayView2<'_, f64>,
    params: &AttentionParams,
    g: &ProposalGraph,
    opts: &AttentionOptions,
) -> Result<(Vec<HeadProbs>, Array2<f64>)> {
    check_features(features, g)?;
    let (m, d) = features.dim();
    params.validate(d)?;
    let structure = attendable(g, opts);
    let mut probs = Vec::with_capacity(params.head_count());
    let mut concat = Array2::zeros((m, d * params.head_count()));
    for (h, head) in params.heads.iter().enumerate() {
        let aff = head_scores(features, head, &structure, opts);
        let out = attend(features, &aff)?;
        concat.slice_mut(s![.., h * d..(h + 1) * d]).assign(&out);
        probs.push(aff.softmax()?);
    }
    Ok((probs, concat))
}

/// All heads, concatenated, then projected when a projection is present.
pub fn multi_head_attend(
    features: ArrayView2<'_, f64>,
    params: &AttentionParams,
    g: &ProposalGraph,
    opts: &AttentionOptions,
) -> Result<Array2<f64>> {
    check_features(features, g)?;
    let (m, d) = features.dim();
    params.validate(d)?;
    let structure = attendable(g, opts);
    let mut concat = Array2::zeros((m, d * params.head_count()));
    for (h, head) in params.heads.iter().enumerate() {
        let aff = head_scores(features, head, &structure, opts);
        concat.slice_mut(s![.., h * d..(h + 1) * d]).assign(&attend(features, &aff)?);
    }
    Ok(match &params.output_projection {
        Some(p) => concat.dot(p),
        None => concat,
    })
}

/// Gradients of `⟨upstream, multi_head_attend(features)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub features: Array2<f64>,
    pub score_weights: Vec<Vec<f64>>,
    pub score_bias: Vec<f64>,
    pub output_projection: Option<Array2<f64>>,
}

pub fn attention_gradients(
    features: ArrayView2<'_, f64>,
    params: &AttentionParams,
    g: &ProposalGraph,
    opts: &AttentionOptions,
    upstream: ArrayView2<'_, f64>,
) -> Result<AttentionGradients> {
    let (probs, concat) = head_outputs(features, params, g, opts)?;
    let (m, d) = features.dim();
    let d_out = params.output_dim().unwrap_or(0);
    if upstream.dim() != (m, d_out) {
        return Err(Error::invalid(format!("upstream is {:?}, output is {:?}", upstream.dim(), (m, d_out))));
    }
    let (grad_concat, grad_proj) = match &params.output_projection {
        Some(p) => (upstream.dot(&p.t()), Some(concat.t().dot(&upstream))),
        None => (upstream.to_owned(), None),
    };

    let mut grad_x = Array2::<f64>::zeros((m, d));
    let mut grad_w = Vec::with_capacity(params.head_count());
    let mut grad_b = Vec::with_capacity(params.head_count());
    for (h, head) in params.heads.iter().enumerate() {
        let gh = grad_concat.slice(s![.., h * d..(h + 1) * d]);
        let query = Array1::from(head.score_weights[..d].to_vec());
        let key = Array1::from(head.score_weights[d..].to_vec());
        let mut gq = Array1::<f64>::zeros(d);
        let mut gk = Array1::<f64>::zeros(d);
        let mut gb = 0.0;
        for (i, row) in probs[h].iter().enumerate() {
            let gi = gh.row(i);
            // dL/dp_ij = g_i · x_j
            let dp: Vec<f64> = row.iter().map(|&(j, _)| gi.dot(&features.row(j))).collect();
            let mean: f64 = row.iter().zip(&dp).map(|(&(_, p), g)| p * g).sum();
            let mut ds_row = 0.0;
            for (&(j, p), g) in row.iter().zip(&dp) {
                let ds = p * (g - mean);
                ds_row += ds;
                grad_x.row_mut(j).scaled_add(p, &gi);
                grad_x.row_mut(j).scaled_add(ds, &key);
                gk.scaled_add(ds, &features.row(j));
            }
            grad_x.row_mut(i).scaled_add(ds_row, &query);
            gq.scaled_add(ds_row, &features.row(i));
            gb += ds_row;
        }
        let mut w = gq.to_vec();
        w.extend(gk.iter());
        grad_w.push(w);
        grad_b.push(gb);
    }
    Ok(AttentionGradients { features: grad_x, score_weights: grad_w, score_bias: grad_b, output_projection: grad_proj })
}
