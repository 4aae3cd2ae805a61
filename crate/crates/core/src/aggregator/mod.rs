//! Object-field training from per-view masks, and feature-field distillation.

pub mod config;
pub mod distill;
pub mod errmap;
pub mod loss;
pub mod regions;
pub mod train;

pub use config::{DistillConfig, FusionConfig};
pub use distill::{distill_feature_field, feature_mse, render_feature_frames};
pub use errmap::ErrorMapSet;
pub use loss::{cross_entropy, mask_distance, ray_pair_rgb_loss, rgb_similarity, RayPairParams};
pub use regions::{sample_error_regions, RegionSet};
pub use train::{train_object_field, train_with_observer, trace_to_csv, write_trace, TraceRow, TrainOutput};
