//! Shape-quality metrics and the depth rendering they need.

pub mod depth;
pub mod metrics;

pub use depth::{median_spacing, point_silhouette, render_depth, render_point_depth, DepthMap};
pub use metrics::{hausdorff_norm, silhouette_iou, zmae, zmae_with_offset};
