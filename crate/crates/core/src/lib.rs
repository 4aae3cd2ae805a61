//! Multi-view mask fusion: lifts per-view 2D object masks into a 3D object
//! field over a frozen density field, then renders and scores masks from
//! novel views.

pub mod aggregator;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod image_out;
pub mod masks;
pub mod render;
pub mod rng;
pub mod scene;
pub mod synthetic;
pub mod volume;

pub use aggregator::{DistillConfig, FusionConfig, TraceRow};
pub use error::{Error, Result};
pub use geometry::{Aabb, Camera, Convention, Polarity, Prompt3D, Ray, Vec3};
pub use eval::{EvalReport, ObjectScore};
pub use grid::{AdamParams, TrainableGrid};
pub use masks::{CorruptionSpec, FeatureFrame, Frame, FrameKind, MaskFrame};
pub use render::{CompositeResult, RaySamples, RenderOptions, Sampling};
pub use scene::{DensityColorScene, Primitive, Shape};
