//! Ground-truth scenes: parametric shapes, cameras, silhouettes, keypoints
//! and depth maps.

pub mod cameras;
pub mod scene;
pub mod shape;

pub use cameras::{sample_cameras, CameraLaw};
pub use scene::{make_dataset, render_mask, FamilySpec, GroundTruthInstance, SceneSpec, TemplatePoint};
pub use shape::{make_shape, Shape};
