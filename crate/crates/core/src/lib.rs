//! # facemotion
//!
//! A parametric face-motion engine built around a blendshape face rig with
//! linear blend skinning. It covers the full keypoint-driven editing loop:
//!
//! - [`rig`]: the rig definition, forward model and the three explicit
//!   keypoint sets (canonical, expression-only, fully posed).
//! - [`motion`]: motion descriptors, the two keypoint-transform conventions,
//!   the replacement / enhancement / animation keypoint arithmetic and a
//!   Procrustes oracle.
//! - [`losses`]: Wing loss, the six-term rig supervision loss and
//!   region-masked L1.
//! - [`tracker`]: damped Gauss-Newton fitting of rig parameters to keypoint
//!   observations, per frame and per sequence.
//! - [`region`]: facial / non-facial masks, keypoint-driven warp fields,
//!   mask attenuation, bilinear warping and synthetic frame rendering.
//! - [`metrics`]: PSNR, SSIM, L1, angular error, AED, APD and Fréchet distance.
//! - [`benchmark`]: pose-locked, expression-varied synthetic video families.
//! - [`pipeline`]: the command implementations behind the `facemotion` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`:
//!
//! ```bash
//! cargo run -p facemotion --example rig_forward
//! cargo run -p facemotion --example keypoint_transforms
//! cargo run -p facemotion --example editing_modes
//! cargo run -p facemotion --example track_sequence
//! cargo run -p facemotion --example boundary_warp
//! cargo run -p facemotion --example metrics_suite
//! cargo run -p facemotion --example build_benchmark
//! ```
//!
//! Conventions used throughout: keypoints are row vectors and rotations act
//! on the right (`x · R`); rig joint rotations are axis-angle vectors acting on
//! column vectors; images are `H×W×C` in `[0, 1]` with pixel `(row, col)`
//! centred at integer coordinates `(x = col, y = row)`.

pub mod benchmark;
pub mod error;
pub mod image;
pub mod io;
pub mod keypoints;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod region;
pub mod rig;
pub mod rotation;
pub mod tracker;

pub use error::{Error, Result};
pub use keypoints::{KeypointSet, Vec3};
pub use motion::MotionDescriptor;
pub use rig::{FlameParams, RigDefinition};
