//! Omni-modal long-video annotation toolkit: filtering, event boundary
//! detection, fusion, captioning orchestration, dialogue generation,
//! evaluation and a review service.

pub mod aseg;
pub mod cli;
pub mod capgen;
pub mod config;
pub mod dialoggen;
pub mod filtergate;
pub mod framediff;
pub mod fuse;
pub mod manifest;
pub mod mediaio;
pub mod metrics;
pub mod pipeline;
pub mod reviewd;
pub mod synth;
pub mod vseg;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
