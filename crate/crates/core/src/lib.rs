//! Pseudo scene-flow labels for pairs of point clouds.
//!
//! Correspondences between two frames come from an entropic optimal transport
//! plan over a cost that mixes coordinate, color and surface-normal
//! differences. The resulting labels are filtered by displacement, smoothed
//! with a random walk over the labeled points and propagated to the
//! unlabeled ones.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod cli;
pub mod cost;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod sinkhorn;
pub mod synth;
pub mod walk;

pub use cost::{build_cost_matrix, CostMatrix, CostParams, Measures};
pub use error::{Error, Result};
pub use metrics::{evaluate, label_quality, MetricReport};
pub use model::{prewarp, validate_cloud, FlowField, PointCloud, PseudoLabelSet, Vec3};
pub use pipeline::{generate_labels, self_label_round, training_loss, LabelReport, PipelineConfig};
pub use sinkhorn::{sinkhorn, CorrespondenceSet, SinkhornParams, TransportPlan};
pub use walk::{RandomWalkParams, WalkSteps};
