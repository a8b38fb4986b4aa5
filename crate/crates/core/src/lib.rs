//! Two-stage dynamic-region removal for RGB-D visual odometry.
//!
//! Each frame is split into depth-aware superpixels which are grouped into
//! rigid candidate clusters. Clusters whose tracked corners reproject badly
//! under the initial pose become potential motion regions; those are then
//! confirmed with an epipolar test and fused with prior (instance mask)
//! regions into a per-frame dynamic mask. Only features outside that mask
//! take part in the final pose estimate.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`], [`par`]: image buffers and the data-parallel helpers.
//! - [`geometry`]: poses, pinhole camera, robust scoring, fundamental matrix,
//!   epipolar distance and EPnP.
//! - [`dataset`]: TUM RGB-D sequence parsing and prior-mask ingestion.
//! - [`superpixel`]: depth-aware SLIC and k-means grouping of superpixels.
//! - [`tracking`]: Shi-Tomasi corners and pyramidal Lucas-Kanade.
//! - [`segmentation`]: potential regions, dynamic judgement, mask fusion.
//! - [`pose_init`]: three-model initial pose selection.
//! - [`evaluation`]: ATE / RPE.
//! - [`synth`]: synthetic RGB-D scenes with ground truth.
//! - [`pipeline`]: configuration and the per-frame driver.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod par;
pub mod pipeline;
pub mod pose_init;
pub mod segmentation;
pub mod superpixel;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, PoseSE3};
pub use grid::{Grid, GrayImage, Mask};
