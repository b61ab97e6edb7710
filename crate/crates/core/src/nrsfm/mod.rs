//! Non-rigid structure from motion over annotated keypoints.

mod data;
mod em;
pub mod gauge;
mod init;
mod model;

pub use data::{mirror_augment, NrsfmData, MIN_VISIBLE};
pub use em::{em_step, fit_nrsfm, posterior, EmStep, Posterior};
pub use init::{initialize, RANK_TOL};
pub use model::{NrsfmConfig, NrsfmInstance, NrsfmModel};
