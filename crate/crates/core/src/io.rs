//! Interchange files: proposal documents, graphs, partitions, features and
//! attention parameters, all as UTF-8 JSON.
//!
//! Floats are written with 17 significant digits so every value survives a
//! round trip bit for bit. Output files are written to a temporary sibling and
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{AttentionParams, HeadParams};
use crate::error::{Error, Result};
use crate::gcpool::PoolOutput;
use crate::geometry::{spatial_descriptor, BoundingBox, SpatialDescriptor};
use crate::graph::{Edge, NodeId, ProposalGraph};
use crate::repgn::RepGnConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalDocument {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub proposals: Vec<ProposalRecord>,
}

/// A validated document with boxes normalized to the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    pub document: ProposalDocument,
    pub boxes: Vec<BoundingBox>,
    /// Document features, or 7-dim spatial descriptors when none are given.
    pub features: Array2<f64>,
    pub spatial_features: bool,
}

impl ProposalDocument {
    pub fn validate(self) -> Result<Proposals> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("image size {}x{} must be positive", self.width, self.height)));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let with_features = self.proposals.iter().filter(|p| p.feature.is_some()).count();
        if with_features != 0 && with_features != self.proposals.len() {
            let missing = self.proposals.iter().position(|p| p.feature.is_none()).unwrap_or(0);
            return Err(Error::invalid(format!(
                "proposals[{missing}].feature: missing while {with_features} other proposals carry features"
            )));
        }
        let spatial = with_features == 0;
        let dim = if spatial { SpatialDescriptor::DIM } else { self.proposals[0].feature.as_ref().map_or(0, Vec::len) };

        let mut boxes = Vec::with_capacity(self.proposals.len());
        let mut features = Array2::zeros((self.proposals.len(), dim));
        for (k, p) in self.proposals.iter().enumerate() {
            let b = BoundingBox::from_pixels(p.bbox, w, h)
                .map_err(|e| Error::invalid(format!("proposals[{k}].box: {e}")))?;
            if let Some(s) = p.score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::invalid(format!("proposals[{k}].score: {s} outside [0, 1]")));
                }
            }
            match &p.feature {
                Some(f) => {
                    if f.len() != dim {
                        return Err(Error::invalid(format!(
                            "proposals[{k}].feature: dimension {} differs from {dim}",
                            f.len()
                        )));
                    }
                    features.row_mut(k).assign(&ndarray::ArrayView1::from(f));
                }
                None => {
                    let d = spatial_descriptor(&b).map_err(|e| Error::invalid(format!("proposals[{k}].box: {e}")))?;
                    features.row_mut(k).assign(&ndarray::ArrayView1::from(&d.to_array()));
                }
            }
            boxes.push(b);
        }
        Ok(Proposals { document: self, boxes, features, spatial_features: spatial })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { context: format!("reading {}", path.display()), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { context: path.display().to_string(), source })
}

pub fn load_proposals(path: &Path) -> Result<Proposals> {
    let doc: ProposalDocument = read_json(path)?;
    doc.validate().map_err(|e| match e {
        Error::InvalidInput(msg) => Error::invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// 17 significant digits for every float.
struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RoundTripFormatter);
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    out.push(b'\n');
    out
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |source| Error::Io { context: format!("writing {}", path.display()), source };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let bytes = to_json_bytes(value);
    write_atomic(path, &bytes)?;
    Ok(digest(&bytes))
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: usize,
    /// Defaults to `0..nodes`.
    #[serde(default)]
    pub node_ids: Vec<NodeId>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl From<&ProposalGraph> for GraphFile {
    fn from(g: &ProposalGraph) -> Self {
        Self {
            nodes: g.node_count(),
            node_ids: g.node_ids().to_vec(),
            edges: g.edges().iter().map(|e| (e.i, e.j, e.w)).collect(),
        }
    }
}

impl GraphFile {
    pub fn into_graph(mut self) -> Result<ProposalGraph> {
        if self.node_ids.is_empty() {
            self.node_ids = (0..self.nodes as NodeId).collect();
        }
        if self.node_ids.len() != self.nodes {
            return Err(Error::invalid(format!("{} node ids for {} nodes", self.node_ids.len(), self.nodes)));
        }
        let edges = self.edges.into_iter().map(|(i, j, w)| Edge { i, j, w }).collect();
        ProposalGraph::new(self.node_ids, Array2::zeros((self.nodes, 0)), edges)
    }
}

/// Reads either a graph file or a proposal document; documents are turned
/// into IoU graphs with `iou_thr`.
pub fn load_graph(path: &Path, iou_thr: f64) -> Result<ProposalGraph> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("proposals").is_some() {
        let doc: ProposalDocument = serde_json::from_value(value)
            .map_err(|source| Error::Parse { context: path.display().to_string(), source })?;
        let p = doc.validate()?;
        crate::graph::build_graph(&p.boxes, p.features, iou_thr)
    } else {
        let file: GraphFile = serde_json::from_value(value)
            .map_err(|source| Error::Parse { context: path.display().to_string(), source })?;
        file.into_graph()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseRecord {
    pub feature: Vec<f64>,
    pub members: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub labels: Vec<Option<usize>>,
    pub coarse: Vec<CoarseRecord>,
}

impl From<&PoolOutput> for PartitionFile {
    fn from(p: &PoolOutput) -> Self {
        Self {
            labels: p.labeling.labels.clone(),
            coarse: p
                .coarse
                .iter()
                .map(|c| CoarseRecord { feature: c.feature.clone(), members: c.member_ids.clone() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesFile {
    pub ids: Vec<NodeId>,
    pub features: Vec<Vec<f64>>,
}

impl FeaturesFile {
    pub fn new(ids: Vec<NodeId>, features: &Array2<f64>) -> Self {
        Self { ids, features: features.rows().into_iter().map(|r| r.to_vec()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub heads: Vec<HeadParams>,
    #[serde(default)]
    pub output_projection: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub layers: Vec<LayerRecord>,
}

impl ParamsFile {
    pub fn from_layers(layers: &[AttentionParams]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| LayerRecord {
                    heads: l.heads.clone(),
                    output_projection: l
                        .output_projection
                        .as_ref()
                        .map(|p| p.rows().into_iter().map(|r| r.to_vec()).collect()),
                })
                .collect(),
        }
    }

    pub fn into_layers(self) -> Result<Vec<AttentionParams>> {
        self.layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                let output_projection = match l.output_projection {
                    None => None,
                    Some(rows) => {
                        let r = rows.len();
                        let c = rows.first().map_or(0, Vec::len);
                        if rows.iter().any(|row| row.len() != c) {
                            return Err(Error::invalid(format!("layers[{k}].output_projection is ragged")));
                        }
                        Some(Array2::from_shape_vec((r, c), rows.concat()).expect("checked shape"))
                    }
                };
                Ok(AttentionParams { heads: l.heads, output_projection })
            })
            .collect()
    }
}

pub fn load_params(path: &Path) -> Result<Vec<AttentionParams>> {
    read_json::<ParamsFile>(path)?.into_layers()
}

pub fn load_config(path: &Path) -> Result<RepGnConfig> {
    let cfg: RepGnConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Synthetic scene: Gaussian-jittered proposals around anchors laid out on a
/// grid, one anchor per cell, so proposals of different clusters never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Feature dimension; 0 leaves features out.
    pub dim: usize,
    /// Relative standard deviation of box jitter.
    pub jitter: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { clusters: 3, per_cluster: 8, seed: 0, width: 1000, height: 1000, dim: 0, jitter: 0.05 }
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<ProposalDocument> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    if !(spec.jitter >= 0.0 && spec.jitter.is_finite()) {
        return Err(Error::invalid(format!("jitter {} must be non-negative", spec.jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let grid = (spec.clusters as f64).sqrt().ceil().max(1.0) as usize;
    let (cw, ch) = (spec.width as f64 / grid as f64, spec.height as f64 / grid as f64);

    let mut proposals = Vec::with_capacity(spec.clusters * spec.per_cluster);
    for k in 0..spec.clusters {
        let (x0, y0) = ((k % grid) as f64 * cw, (k / grid) as f64 * ch);
        let x_hi = (x0 + cw).min(spec.width as f64);
        let y_hi = (y0 + ch).min(spec.height as f64);
        let aw = cw * rng.random_range(0.35..0.6);
        let ah = ch * rng.random_range(0.35..0.6);
        let acx = x0 + cw * (0.5 + rng.random_range(-0.1..0.1));
        let acy = y0 + ch * (0.5 + rng.random_range(-0.1..0.1));
        let center: Vec<f64> = (0..spec.dim).map(|_| normal.sample(&mut rng)).collect();
        for _ in 0..spec.per_cluster {
            let cx = acx + aw * spec.jitter * normal.sample(&mut rng);
            let cy = acy + ah * spec.jitter * normal.sample(&mut rng);
            let w = aw * (spec.jitter * normal.sample(&mut rng)).exp();
            let h = ah * (spec.jitter * normal.sample(&mut rng)).exp();
            let x1 = (cx - w / 2.0).clamp(x0, x_hi - 1e-3 * cw);
            let y1 = (cy - h / 2.0).clamp(y0, y_hi - 1e-3 * ch);
            let x2 = (cx + w / 2.0).clamp(x1 + 1e-3 * cw, x_hi);
            let y2 = (cy + h / 2.0).clamp(y1 + 1e-3 * ch, y_hi);
            let feature = (spec.dim > 0).then(|| center.iter().map(|c| c + 0.1 * normal.sample(&mut rng)).collect());
            let score = rng.random_range(0.5..1.0);
            proposals.push(ProposalRecord { bbox: [x1, y1, x2, y2], feature, score: Some(score) });
        }
    }
    Ok(ProposalDocument {
        image_id: format!("synthetic-{}", spec.seed),
        width: spec.width,
        height: spec.height,
        proposals,
    })
}
