//! Two-stage goal exploration on simulated arm environments: a passive
//! observation stage learns a low-dimensional embedding of raw 70x70 scene
//! images (PCA / Isomap / AE / VAE / radial-flow VAE), then an intrinsically
//! motivated exploration loop samples goals in that space and reuses its own
//! history through a nearest-neighbor meta-policy.

pub mod arm_env;
pub mod campaign;
pub mod error;
pub mod explorer;
pub mod goal_policy;
pub mod linalg;
pub mod metrics;
pub mod plots;
pub mod repr_learn;
pub mod rng;
pub mod serialize;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
