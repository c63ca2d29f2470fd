//! Continuous-pose Tangram benchmark: piece geometry, scene datasets,
//! evaluation metrics, proposal backends and the reward-guided refinement
//! loop.

pub mod dataset;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod proposal;
pub mod refine;
pub mod rng;
