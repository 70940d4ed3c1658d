//! One-stage shape instantiation: predict an unordered 3D point cloud of a
//! deforming organ from a single 2D image.
//!
//! The crate bundles everything needed to run the experiment end to end:
//!
//! * [`tensor`]: dense tensors, reverse-mode autodiff, Adam.
//! * [`pointoutnet`]: the convolutional encoder + dense decoder network.
//! * [`geometry`]: point clouds, k-d tree, Chamfer loss and PC-to-PC error.
//! * [`dataset`]: preprocessing, a synthetic cardiac-cycle generator, on-disk
//!   subjects and leave-one-out folds.
//! * [`training`]: per-fold training and evaluation, report export.
//! * [`baselines`]: two-stage PLSR / kernel PLSR from 2D contour landmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod pointoutnet;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
