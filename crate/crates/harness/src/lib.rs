//! Training harness, dataset tooling, and file formats around `lle-core`.
//!
//! Everything that touches the filesystem or threads lives here: PNG/PPM
//! codecs, synthetic dataset construction with severity-tier calibration,
//! the end-to-end training loop, evaluation with a grid-search oracle
//! column, operator-ordering ablations, model checkpoints, and the `lle`
//! command-line tool.

pub mod ablate;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod gridsearch;
pub mod parallel;
pub mod report;
pub mod scenes;
pub mod train;
