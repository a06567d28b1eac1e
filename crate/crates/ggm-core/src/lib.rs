//! Geometric generative models (GGMs) for planar targets, with certified
//! pose estimation on top.
//!
//! The crate builds up in stages:
//!
//! - [`target`]: convex-polygon target models and their XML spec format
//! - [`camera`]: the analog projection chain (extrinsics, intrinsics,
//!   pixel quantization)
//! - [`raster`]: the digital behavior (cross-product sign test) and the
//!   pose-to-image decoder
//! - [`layers`]: the same decoder expanded into its layer form
//! - [`encoder`]: a small trainable pose regressor with a boundable
//!   Lipschitz constant
//! - [`certify`]: worst-case error certificates and identifiability audits
//! - [`reach`]: forward reachability of the decoder over pose boxes by
//!   grid sampling
//! - [`detect`]: certified detection, spatial-filter masks, and the
//!   cluttered-scene pipeline
//! - [`scene`]: bounded pixel noise and synthetic clutter
//! - [`oracle`]: exact-arithmetic reference paths for verification

pub mod bench;
pub mod camera;
pub mod certify;
pub mod detect;
pub mod encoder;
pub mod error;
pub mod image;
pub mod layers;
pub mod norm;
pub mod oracle;
pub mod presets;
pub mod raster;
pub mod reach;
pub mod scene;
pub mod target;

pub use camera::{CameraIntrinsics, Pose, PoseBox};
pub use error::{Error, Result};
pub use image::BitImage;
pub use norm::PoseWeights;
pub use raster::{decode, decode_with_policy, DecodePolicy};
pub use target::{TargetModel, ValidationReport};
