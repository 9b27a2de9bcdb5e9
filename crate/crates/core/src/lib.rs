//! Expression-conditioned deformable SDF radiance fields with spatially-varying
//! conditioning, trained coarse-to-fine with loss-guided region sampling.
//!
//! Modules follow the data flow: [`scene_synth`] produces ground-truth frames
//! from an analytic scene, [`fields`] holds the networks, [`renderer`] turns
//! them into images, [`sampler`] and [`trainer`] optimize them, and [`eval`]
//! measures and drives the result.

pub mod camera;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fields;
pub mod imageio;
pub mod real;
pub mod renderer;
pub mod sampler;
pub mod scene_synth;
pub mod trainer;
pub mod util;

pub use camera::CameraModel;
pub use error::{Error, Result};
pub use fields::{init_params, ExpressionVector, FieldParams, NetConfig, SVECode};
pub use scene_synth::{make_scene, Dataset, FrameRecord, SceneConfig, SceneDefinition};
