//! Dense pointmap SLAM with a gated recurrent latent state, submap-based
//! mapping and hierarchical alignment.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: SE(3)/Sim(3) algebra, point maps, trajectories and file formats.
//! - [`predictor`]: toy-scale gated recurrent pointmap predictor.
//! - [`losses`]: confidence-weighted regression and pose losses with analytic gradients.
//! - [`frontend`]: covisibility scoring, keyframe promotion and submap boundaries.
//! - [`local_align`]: weighted Umeyama and intra-submap alternating refinement.
//! - [`posegraph`]: SE(3) pose graph, loop detection and Levenberg-Marquardt.
//! - [`eval`]: ATE-RMSE, cloud alignment and accuracy/completeness.
//! - [`synth`]: synthetic rooms, ray-cast renders and the oracle predictor.
//! - [`pipeline`]: end-to-end orchestration used by the command-line tool.

pub mod error;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod local_align;
pub mod losses;
pub mod pipeline;
pub mod posegraph;
pub mod predictor;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
