//! Deformable 3D vehicle models for stereo street scenes.
//!
//! The crate learns a linear shape space (an active shape model) from keypoint
//! annotations of CAD vehicles, derives per-subcategory mean shapes, and fits
//! the model to stereo-derived observations of a single vehicle: a 3D point
//! cloud, keypoint and wireframe heatmaps for both images, a viewpoint
//! distribution and a type distribution. Fitting minimises a factorised
//! energy (negative log posterior) with a sequential Monte Carlo sampler over
//! the vehicle pose and shape coefficients.
//!
//! The [`observer`] module provides a synthetic stand-in for the image CNN so
//! the whole pipeline can be exercised closed-loop: it renders observations
//! from a known ground-truth state with configurable noise.

pub mod energy;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod observer;
pub mod scene;
pub mod shape_model;
pub mod smc;
pub mod types;

#[cfg(test)]
pub(crate) mod testutil;

pub use energy::{EnergyModel, EnergyParams, EnergyReport, ModelVariant, SceneEnergy};
pub use error::{Error, Result};
pub use metrics::{evaluate_fit, AccuracyShares, EvalRecord};
pub use observer::{NoiseSpec, ObservationBundle, VisibilityLut};
pub use scene::{GroundPlane, PlaneFrame, StereoRig};
pub use shape_model::{DeformableVehicleModel, KeypointSet, Topology};
pub use smc::{SmcConfig, SmcResult};
pub use types::{Side, VehicleState, VehicleType};
