//! Articulated-object generation toolkit.
//!
//! * [`artcore`]: parts, joints, validation, fixed-joint collapse, depth-1 trees
//! * [`kinematics`]: forward kinematics, state sampling, origin projection
//! * [`sparsegrid`]: sparse occupancy, voxelization, tokenization
//! * [`netcore`]: reverse-mode tape, part-aware attention, the denoiser
//! * [`flowgen`]: rectified-flow training, guided Euler sampling, two-stage pipeline
//! * [`artihead`]: articulation regression from cached denoiser features
//! * [`metrics`]: gIoU / center / Chamfer distances, AOR, matching, RS/AS protocol
//! * [`interop`]: JSON object files, URDF, per-vertex extraction

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artcore;
pub mod artihead;
pub mod error;
pub mod flowgen;
pub mod interop;
pub mod kinematics;
pub mod metrics;
pub mod netcore;
pub mod sparsegrid;

pub use error::{Error, Result};
