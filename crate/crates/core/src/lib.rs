//! Relational proposal graphs for object detection.
//!
//! Region proposals become nodes of an IoU-weighted graph. Graph-cut pooling
//! groups them into coarse context nodes via normalized cuts, graph attention
//! mixes features along the graph, and a residual normalization keeps the
//! refined features on the scale of the originals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod error;
pub mod gcpool;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod oracle;
pub mod repgn;
pub mod spectral;

pub use error::{Error, Result};
pub use geometry::{iou, spatial_descriptor, BoundingBox, SpatialDescriptor};
pub use graph::{build_graph, connected_components, filter_components, ProposalGraph};
pub use repgn::{repgn_forward, repgn_forward_no_gcpool, RefinedProposals, RepGnConfig};
