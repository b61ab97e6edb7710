//! Visual-hull prototypes: truncated signed distances to silhouette cones,
//! accumulated per cluster of similar instances.

pub mod cluster;
pub mod cone;
pub mod model;

pub use cluster::{cluster_instances, view_groups, view_weights, Clustering};
pub use cone::{cone_tsdf, learn_prototype, max_trunc_sentinel, occupancy, Cone};
pub use model::{grid_for_diameter, infer_dense_shape, learn_prototypes, PrototypeCluster, PrototypeModel, ProtoConfig};
