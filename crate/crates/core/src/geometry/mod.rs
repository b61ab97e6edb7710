//! Cameras, silhouettes, distance fields, neighbour search, point clouds,
//! meshes and voxel volumes.

pub mod camera;
pub mod chamfer;
pub mod cloud;
pub mod knn;
pub mod marching;
pub mod mask;
mod mc_table;
pub mod mesh;
pub mod volume;

pub use camera::{OrthoCamera, Vec2, Vec3};
pub use chamfer::{chamfer_field, signed_boundary_distance, ChamferField, Raster};
pub use cloud::{estimate_normals, PointCloud};
pub use knn::{delta_knn, KdTree, Neighbor};
pub use marching::extract_isosurface;
pub use mask::{occupancy_iou, SilhouetteMask};
pub use mesh::TriMesh;
pub use volume::{GridSpec, TsdfVolume};
