//! Temporal pointmaps for dynamic scenes.
//!
//! A pointmap sequence stores, for every pixel of every frame, the world-frame
//! 3D point seen there, with frame 0 as the world frame. This crate builds and
//! normalizes such sequences from depth and cameras, scores reconstructions,
//! recovers intrinsics, poses and depth back from a pointmap, and evaluates the
//! recovered cameras and depth against ground truth. A seeded synthetic scene
//! generator provides exact ground truth for all of it, and a small flow
//! matching module exercises the latent noising and sampling machinery.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod losses;
mod numeric;
pub mod pointmap;
pub mod recovery;
pub mod synth;

pub use error::Error;
pub use geometry::{Intrinsics, Pixel, RigidPose, SimTransform};
pub use pointmap::{DepthSequence, PointmapSequence, Trajectory};
