//! Detections-to-behavior pipeline for fish startle detection.
//!
//! Per-frame bounding boxes are linked into movement tracks, each track is
//! turned into a four-column feature series (speed, heading, box aspect
//! ratio, local momentary change), and a small 1D-conv + LSTM network scores
//! every track. Clip scores are the maximum over their tracks.
//!
//! The stages are exposed as plain functions in the module of the same name
//! and chained over files by [`pipeline`].

pub mod classifier;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod synth;
pub mod tracker;

mod csvio;

pub use error::{Error, Result};
