//! Temporally dense, photorealistic frame reconstruction from a hybrid
//! intensity + event sensor.
//!
//! The pipeline per pair of successive intensity frames:
//!
//! 1. [`depth_opt`]: joint dense inverse depth and relative pose from the two
//!    frames, initialized from optical flow ([`flow`]).
//! 2. [`events`]: events between the frames are cut into fixed-size blocks
//!    and integrated into pseudo-intensity frames.
//! 3. [`pose_opt`]: the pose of every block relative to both frames, by
//!    direct photometric alignment of pseudo-intensity frames.
//! 4. [`renderer`]: both frames are forward-warped to every block time and
//!    blended.
//!
//! [`sim`] provides synthetic scenes with ground truth, [`metrics`] the
//! image-quality measures, and [`pipeline`] the batch orchestration.

// NaN-rejecting `!(x > 0.0)` checks are deliberate; 6.28 is the published
// filter cutoff, not an approximation of 2π.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::approx_constant
)]

pub mod camera;
pub mod config;
pub mod depth_opt;
pub mod error;
pub mod events;
pub mod flow;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod pose_opt;
pub mod renderer;
pub mod se3;
pub mod sim;
pub mod warp;

pub use camera::{CameraIntrinsics, Projection};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use image::{DepthMap, Image, IntensityFrame};
pub use io::Dataset;
pub use se3::{se3_compose, se3_exp, Pose, Twist};
pub use warp::{bilinear_sample, blend, forward_splat, inverse_warp, SplatBuffer, WarpResult};
