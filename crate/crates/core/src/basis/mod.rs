//! Dense point-cloud shape model: a mean cloud plus linear deformation bases,
//! learned from silhouettes and optional 3D keypoints.

pub mod energy;
mod fit;
pub mod init;
mod learn;
mod model;

pub use energy::{e_keypoint, e_local, e_normal, normal_planes, normal_variation, plane_term, Plane, e_sil_consistency, e_sil_coverage, total_energy, EnergyBreakdown, Silhouette, Target, Term, Weights};
pub use fit::{fit_instance, InstanceFit};
pub use init::{grid_around, grid_from_instances, mesh_points, soft_visual_hull, soft_visual_hull_init};
pub use learn::{learn_basis, learn_from_init, lift_keypoints, EnergyLog, LearnedBasis};
pub use model::{frobenius, BasisConfig, BasisShapeModel, FitConfig};
