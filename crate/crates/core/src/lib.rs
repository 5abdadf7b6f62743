//! Score-induced guiding vector fields.
//!
//! A path is given as an unordered cloud of 2D waypoints. A score network
//! `S(x, t)` is fit by denoising score matching, a tangent network `v(x)` is
//! trained on top of the frozen score, and the two are summed into a guiding
//! field `m(x) = tanh(k_s |S|) S/|S| + v(x)` that agents integrate to follow
//! the path.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: dense SiLU MLPs, backprop, Adam and checkpoints.
//! - [`score`]: noise schedule, denoising score matching, mixture-score oracle.
//! - [`tangent`]: unit / orthogonality / direction losses and tangent training.
//! - [`field`]: the mixed field, Lyapunov diagnostics, singularity scans, grids.
//! - [`sim`]: trajectory integration and path-following metrics.
//! - [`datasets`]: waypoint scenario generators and CSV I/O.
//! - [`config`]: flat `key=value` run configuration.

pub mod config;
pub mod datasets;
pub mod error;
pub mod field;
pub mod nn;
pub mod rng;
pub mod score;
pub mod sim;
pub mod tangent;

pub use error::{Error, Result};

/// Points and field values live in the plane.
pub type Vec2 = nalgebra::Vector2<f64>;

/// Norms below this are treated as zero whenever a direction is needed.
pub const NORM_FLOOR: f64 = 1e-12;
