//! Seeded instance families and self-checks behind `repgn oracle`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{attention_gradients, multi_head_attend, AttentionOptions, AttentionParams, HeadParams};
use crate::error::Result;
use crate::graph::ProposalGraph;
use crate::spectral::{brute_force_ncut, two_way_ncut, EigenConfig};

/// Two unit-weight `k`-cliques joined by one bridge of weight `bridge`,
/// with node labels shuffled. Returns the graph and the clique of each node.
pub fn bridged_cliques<R: Rng>(rng: &mut R, k: usize, bridge: f64) -> (ProposalGraph, Vec<usize>) {
    let n = 2 * k;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for side in 0..2 {
        for a in 0..k {
            for b in (a + 1)..k {
                edges.push((perm[side * k + a], perm[side * k + b], 1.0));
            }
        }
    }
    let (a, b) = (rng.random_range(0..k), rng.random_range(0..k));
    edges.push((perm[a], perm[k + b], bridge));
    let mut side = vec![0; n];
    for (pos, &node) in perm.iter().enumerate() {
        side[node] = pos / k;
    }
    (ProposalGraph::from_edges(n, &edges).expect("valid clique pair"), side)
}

/// Random connected graph: a random spanning tree plus extra edges, weights
/// uniform in `(0.05, 1]`.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize) -> ProposalGraph {
    let mut edges = std::collections::BTreeMap::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v), rng.random_range(0.05..=1.0));
    }
    let extra = rng.random_range(0..=n);
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.entry((a.min(b), a.max(b))).or_insert_with(|| rng.random_range(0.05..=1.0));
        }
    }
    let list: Vec<_> = edges.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    ProposalGraph::from_edges(n, &list).expect("valid random graph")
}

#[derive(Debug, Clone, Serialize)]
pub struct NcutOracleSummary {
    pub trials: usize,
    pub agreements: usize,
    pub max_abs_diff: f64,
    pub failures: Vec<u64>,
}

impl NcutOracleSummary {
    pub fn passed(&self) -> bool {
        self.agreements == self.trials
    }
}

/// Runs the spectral cut against exhaustive search on bridged clique pairs
/// with `k ∈ {3, 4, 5}` limited by `max_n`.
pub fn ncut_oracle(trials: usize, max_n: usize, seed: u64, tol: f64) -> Result<NcutOracleSummary> {
    let sizes: Vec<usize> = (3..=5).filter(|k| 2 * k <= max_n).collect();
    if sizes.is_empty() {
        return Err(crate::error::Error::invalid(format!("max-n {max_n} admits no clique pair (need >= 6)")));
    }
    let eig = EigenConfig::default();
    let mut summary = NcutOracleSummary { trials, agreements: 0, max_abs_diff: 0.0, failures: Vec::new() };
    for t in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t));
        let k = sizes[rng.random_range(0..sizes.len())];
        let bridge = rng.random_range(0.01..=0.2);
        let (g, _) = bridged_cliques(&mut rng, k, bridge);
        let (sp, sr) = two_way_ncut(&g, &eig)?;
        let (bp, br) = brute_force_ncut(&g)?;
        let diff = (sr.ncut_value - br.ncut_value).abs();
        summary.max_abs_diff = summary.max_abs_diff.max(diff);
        if sp == bp && diff <= tol {
            summary.agreements += 1;
        } else {
            summary.failures.push(t);
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradOracleSummary {
    pub trials: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl GradOracleSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Gradient entries smaller than this are compared on an absolute scale.
pub const GRAD_SCALE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

/// Random attention instance: `m` nodes of dimension `d` on a random graph,
/// `h` heads and a projection to `d_out`.
pub fn random_attention_instance<R: Rng>(
    rng: &mut R,
    m: usize,
    d: usize,
    h: usize,
    d_out: usize,
) -> (ProposalGraph, Array2<f64>, AttentionParams) {
    let mut edges = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            if rng.random_bool(0.5) {
                edges.push((a, b, rng.random_range(0.1..=1.0)));
            }
        }
    }
    let g = ProposalGraph::from_edges(m, &edges).expect("valid graph");
    let x = Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0));
    let heads = (0..h)
        .map(|_| HeadParams {
            score_weights: (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            score_bias: rng.random_range(-0.5..0.5),
        })
        .collect();
    let proj = Array2::from_shape_fn((h * d, d_out), |_| rng.random_range(-1.0..1.0));
    (g, x, AttentionParams { heads, output_projection: Some(proj) })
}

fn loss(
    x: &Array2<f64>,
    p: &AttentionParams,
    g: &ProposalGraph,
    opts: &AttentionOptions,
    up: &Array2<f64>,
) -> Result<f64> {
    Ok((multi_head_attend(x.view(), p, g, opts)? * up).sum())
}

/// Compares analytic gradients with central differences of step `step`.
pub fn grad_oracle(trials: usize, seed: u64, step: f64) -> Result<GradOracleSummary> {
    let mut worst: f64 = 0.0;
    for t in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t));
        let m = rng.random_range(1..=8);
        let d = rng.random_range(1..=6);
        let h = [1, 2, 4][rng.random_range(0..3)];
        let d_out = rng.random_range(1..=6);
        let (g, x, p) = random_attention_instance(&mut rng, m, d, h, d_out);
        let opts = AttentionOptions { dense: rng.random_bool(0.3), iou_bias: rng.random_bool(0.3) };
        let up = Array2::from_shape_fn((m, d_out), |_| rng.random_range(-1.0..1.0));
        let grads = attention_gradients(x.view(), &p, &g, &opts, up.view())?;

        let central = |f: &dyn Fn(f64) -> Result<f64>, v: f64| -> Result<f64> {
            Ok((f(v + step)? - f(v - step)?) / (2.0 * step))
        };
        for idx in ndarray::indices(x.dim()) {
            let num = central(
                &|v| {
                    let mut xx = x.clone();
                    xx[idx] = v;
                    loss(&xx, &p, &g, &opts, &up)
                },
                x[idx],
            )?;
            worst = worst.max(relative_error(grads.features[idx], num));
        }
        for hd in 0..h {
            for k in 0..2 * d {
                let num = central(
                    &|v| {
                        let mut pp = p.clone();
                        pp.heads[hd].score_weights[k] = v;
                        loss(&x, &pp, &g, &opts, &up)
                    },
                    p.heads[hd].score_weights[k],
                )?;
                worst = worst.max(relative_error(grads.score_weights[hd][k], num));
            }
            let num = central(
                &|v| {
                    let mut pp = p.clone();
                    pp.heads[hd].score_bias = v;
                    loss(&x, &pp, &g, &opts, &up)
                },
                p.heads[hd].score_bias,
            )?;
            worst = worst.max(relative_error(grads.score_bias[hd], num));
        }
        let proj = p.output_projection.as_ref().expect("instance has a projection");
        let gproj = grads.output_projection.as_ref().expect("projection gradient");
        for idx in ndarray::indices(proj.dim()) {
            let num = central(
                &|v| {
                    let mut pp = p.clone();
                    pp.output_projection.as_mut().unwrap()[idx] = v;
                    loss(&x, &pp, &g, &opts, &up)
                },
                proj[idx],
            )?;
            worst = worst.max(relative_error(gproj[idx], num));
        }
    }
    Ok(GradOracleSummary { trials, max_rel_error: worst, threshold: 1e-5 })
}
