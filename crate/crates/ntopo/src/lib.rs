//! Neural implicit density fields for 3D topology optimization.
//!
//! The density of a voxelized design domain is represented by a small
//! closed-form network (cosine features, one dense neuron, sigmoid). A
//! companion softmax network partitions the domain into segments, each with
//! its own build direction, so compliance, volume and height-penalized
//! overhang can be minimized together for additive manufacturing.
//!
//! Modules:
//! - [`fields`]: the networks, their analytic spatial gradients and
//!   hand-derived parameter backpropagation.
//! - [`fea`]: hex8 voxel finite elements, SIMP interpolation, conjugate
//!   gradient and dense solvers, adjoint compliance sensitivities.
//! - [`am`]: differentiable overhang and height-penalized support metrics.
//! - [`opt`]: loss assembly, schedules, SGD/Adam updates and the
//!   optimization drivers.
//! - [`io`]: problem configuration, grid sampling, exports and the CLI.

pub mod am;
pub mod error;
pub mod fea;
pub mod fields;
pub mod io;
pub mod opt;

pub use error::{Error, Result};
