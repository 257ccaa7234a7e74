//! Recovers 3D positions of static, visually indistinguishable objects
//! (traffic lights and the like) from large sets of posed images carrying
//! noisy, unassociated 2D point detections.
//!
//! The pipeline: pairwise hypotheses are triangulated from detections in
//! distinct images, filtered by geometric viability, scored by inlier
//! voting, and greedily extracted; images are partitioned into overlapping
//! spatial clusters so clusters solve independently (and in parallel), and
//! near-duplicate objects from overlapping clusters are merged afterwards.
//! A synthetic scene generator and an evaluation harness reproduce the
//! behavior of the system at desk scale.

pub mod clustering;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod synth;
pub mod voting;

pub use geometry::{Camera, CameraIntrinsics, CameraView, PixelPoint, Pose, WorldPoint};
pub use voting::{Detection, ObjectEstimate, SolveConfig};
