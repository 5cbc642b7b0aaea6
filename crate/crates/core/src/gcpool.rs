//! Graph Cut Pool: drop small connected components, normalized-cut the
//! survivors, drop parts that came out too small, then average the features
//! of each remaining part into a coarse context node.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, filter_components, Edge, NodeId, ProposalGraph};
use crate::spectral::{recursive_ncut, EigenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcPoolConfig {
    pub min_size: usize,
    pub stop_ncut: f64,
    pub min_part: usize,
    pub eigen: EigenConfig,
}

impl Default for GcPoolConfig {
    fn default() -> Self {
        Self { min_size: 3, stop_ncut: 0.5, min_part: 1, eigen: EigenConfig::default() }
    }
}

/// Part label per original node; `None` marks a filtered node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabeling {
    pub labels: Vec<Option<usize>>,
    pub part_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseNode {
    pub feature: Vec<f64>,
    pub member_ids: Vec<NodeId>,
    pub source_part: usize,
}

/// Counts gathered while pooling, for run reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub components: usize,
    pub components_kept: usize,
    pub filtered_stage1: usize,
    pub parts_before_refilter: usize,
    pub filtered_stage2: usize,
    pub parts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    pub labeling: PseudoLabeling,
    pub coarse: Vec<CoarseNode>,
    pub stats: PoolStats,
}

/// Coordinate-wise mean of the rows of `features`.
pub fn pool_part(features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    features.mean_axis(Axis(0)).ok_or_else(|| Error::invalid("cannot pool an empty part"))
}

pub fn gcpool(g: &ProposalGraph, cfg: &GcPoolConfig) -> Result<PoolOutput> {
    if cfg.min_size == 0 || cfg.min_part == 0 {
        return Err(Error::invalid("min_size and min_part must be at least 1"));
    }
    if !(cfg.stop_ncut >= 0.0) {
        return Err(Error::invalid(format!("stop_ncut {} must be non-negative", cfg.stop_ncut)));
    }
    let m = g.node_count();
    let mut stats = PoolStats { components: connected_components(g).component_count(), ..Default::default() };

    // Stage 1. `filter_components` keeps node ids, which are positions in `g`
    // only when `g` carries the default ids; map through a lookup instead.
    let position: std::collections::HashMap<NodeId, usize> =
        g.node_ids().iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let (kept, removed) = filter_components(g, cfg.min_size);
    stats.filtered_stage1 = removed.len();
    let comps = connected_components(&kept);
    stats.components_kept = comps.component_count();

    // Stage 2, one independent cut per surviving component, merged in
    // component order.
    let per_component: Vec<Vec<Vec<usize>>> = comps
        .members()
        .into_par_iter()
        .map(|members| {
            let sub = kept.induced(&members);
            let p = recursive_ncut(&sub, cfg.stop_ncut, cfg.min_part, &cfg.eigen)?;
            Ok(p.sets()
                .into_iter()
                .map(|set| set.into_iter().map(|k| position[&sub.node_ids()[k]]).collect())
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut parts: Vec<Vec<usize>> = per_component.into_iter().flatten().collect();
    stats.parts_before_refilter = parts.len();
    parts.retain(|p| {
        let keep = p.len() >= cfg.min_size;
        if !keep {
            stats.filtered_stage2 += p.len();
        }
        keep
    });
    for p in &mut parts {
        p.sort_unstable();
    }
    parts.sort_by_key(|p| p[0]);
    stats.parts = parts.len();

    let mut labels = vec![None; m];
    let mut coarse = Vec::with_capacity(parts.len());
    for (label, members) in parts.iter().enumerate() {
        for &n in members {
            labels[n] = Some(label);
        }
        let feature = pool_part(g.features().select(Axis(0), members).view())?;
        coarse.push(CoarseNode {
            feature: feature.to_vec(),
            member_ids: members.iter().map(|&n| g.node_ids()[n]).collect(),
            source_part: label,
        });
    }
    Ok(PoolOutput { labeling: PseudoLabeling { labels, part_count: parts.len() }, coarse, stats })
}

/// Appends one node per coarse node, linked to every member of its part.
///
/// The link to member `u` carries the mean IoU weight between `u` and the
/// other members of the part (missing edges count as 0); singleton parts link
/// with weight 1. Coarse nodes are not linked to each other. New ids continue
/// after the largest existing id.
pub fn augment_with_coarse(g: &ProposalGraph, coarse: &[CoarseNode]) -> Result<ProposalGraph> {
    if coarse.is_empty() {
        return Ok(g.clone());
    }
    let m = g.node_count();
    let d = g.feature_dim();
    let position: std::collections::HashMap<NodeId, usize> =
        g.node_ids().iter().enumerate().map(|(k, &id)| (id, k)).collect();

    let mut features = Array2::zeros((m + coarse.len(), d));
    features.slice_mut(ndarray::s![..m, ..]).assign(g.features());
    let mut edges: Vec<Edge> = g.edges().to_vec();
    let mut ids = g.node_ids().to_vec();
    let first_id = ids.iter().max().map_or(0, |&x| x + 1);

    for (next_id, (k, node)) in (first_id..).zip(coarse.iter().enumerate()) {
        if node.feature.len() != d {
            return Err(Error::invalid(format!("coarse node {k} has dimension {}, graph has {d}", node.feature.len())));
        }
        let members: Vec<usize> = node
            .member_ids
            .iter()
            .map(|id| {
                position.get(id).copied().ok_or_else(|| Error::invalid(format!("coarse member {id} not in graph")))
            })
            .collect::<Result<_>>()?;
        if members.is_empty() {
            return Err(Error::invalid(format!("coarse node {k} has no members")));
        }
        let idx = m + k;
        features.row_mut(idx).assign(&Array1::from(node.feature.clone()));
        ids.push(next_id);
        for &u in &members {
            let w = if members.len() == 1 {
                1.0
            } else {
                let s: f64 = members.iter().filter(|&&v| v != u).map(|&v| g.weight(u, v).unwrap_or(0.0)).sum();
                s / (members.len() - 1) as f64
            };
            // a member with no intra-part edges gets no link
            if w > 0.0 {
                edges.push(Edge { i: u, j: idx, w });
            }
        }
    }
    ProposalGraph::new(ids, features, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn bridged_plus_isolated() -> ProposalGraph {
        let edges = [
            Edge { i: 0, j: 1, w: 1.0 },
            Edge { i: 0, j: 2, w: 1.0 },
            Edge { i: 1, j: 2, w: 1.0 },
            Edge { i: 3, j: 4, w: 1.0 },
            Edge { i: 3, j: 5, w: 1.0 },
            Edge { i: 4, j: 5, w: 1.0 },
            Edge { i: 2, j: 3, w: 0.1 },
        ];
        let features = Array2::from_shape_fn((7, 2), |(r, c)| (r * 2 + c) as f64);
        ProposalGraph::new((0..7).collect(), features, edges.to_vec()).unwrap()
    }

    #[test]
    fn pool_part_examples() {
        assert_eq!(pool_part(array![[1.0, 3.0], [3.0, 5.0], [2.0, 1.0]].view()).unwrap(), array![2.0, 3.0]);
        assert_eq!(pool_part(array![[4.5, -1.0]].view()).unwrap(), array![4.5, -1.0]);
        assert_eq!(pool_part(array![[-1.0, 0.0], [1.0, 0.0]].view()).unwrap(), array![0.0, 0.0]);
        assert!(pool_part(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn gcpool_bridged_triangles() {
        let g = bridged_plus_isolated();
        let cfg = GcPoolConfig { min_size: 2, ..Default::default() };
        let out = gcpool(&g, &cfg).unwrap();
        assert_eq!(out.labeling.labels, vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None]);
        assert_eq!(out.coarse.len(), 2);
        assert_eq!(out.coarse[0].member_ids, vec![0, 1, 2]);
        assert_eq!(out.coarse[0].feature, vec![2.0, 3.0]);
        assert_eq!(out.coarse[1].feature, vec![8.0, 9.0]);
        assert_eq!(out.stats.filtered_stage1, 1);
    }

    #[test]
    fn gcpool_edgeless_and_single_clique() {
        let g = ProposalGraph::from_edges(4, &[]).unwrap();
        let out = gcpool(&g, &GcPoolConfig { min_size: 2, ..Default::default() }).unwrap();
        assert!(out.coarse.is_empty());
        assert!(out.labeling.labels.iter().all(Option::is_none));

        let features = array![[1.0], [2.0], [6.0]];
        let g = ProposalGraph::new(
            vec![0, 1, 2],
            features,
            vec![Edge { i: 0, j: 1, w: 0.9 }, Edge { i: 0, j: 2, w: 0.9 }, Edge { i: 1, j: 2, w: 0.9 }],
        )
        .unwrap();
        let out = gcpool(&g, &GcPoolConfig { min_size: 1, ..Default::default() }).unwrap();
        assert_eq!(out.coarse.len(), 1);
        assert_relative_eq!(out.coarse[0].feature[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn refilter_drops_small_parts() {
        // a triangle with a pendant pair hanging off a weak link
        let g =
            ProposalGraph::from_edges(5, &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0), (2, 3, 0.05), (3, 4, 1.0)]).unwrap();
        let out = gcpool(&g, &GcPoolConfig { min_size: 3, ..Default::default() }).unwrap();
        assert_eq!(out.labeling.labels, vec![Some(0), Some(0), Some(0), None, None]);
        assert_eq!(out.stats.filtered_stage2, 2);
    }

    #[test]
    fn augment_examples() {
        let g = ProposalGraph::from_edges(2, &[(0, 1, 0.4)]).unwrap();
        assert_eq!(augment_with_coarse(&g, &[]).unwrap(), g);

        let c = CoarseNode { feature: vec![], member_ids: vec![0, 1], source_part: 0 };
        let a = augment_with_coarse(&g, &[c]).unwrap();
        assert_eq!(a.node_count(), 3);
        assert_eq!(a.node_ids(), &[0, 1, 2]);
        assert_eq!(a.weight(2, 0), Some(0.4));
        assert_eq!(a.weight(2, 1), Some(0.4));
        assert_eq!(a.weight(0, 1), Some(0.4));

        let c = CoarseNode { feature: vec![], member_ids: vec![1], source_part: 0 };
        let a = augment_with_coarse(&g, &[c]).unwrap();
        assert_eq!(a.weight(2, 1), Some(1.0));
        assert_eq!(a.weight(2, 0), None);

        let bad = CoarseNode { feature: vec![], member_ids: vec![7], source_part: 0 };
        assert!(augment_with_coarse(&g, &[bad]).is_err());
    }
}
