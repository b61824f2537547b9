//! Object-level mapping with ellipsoid (dual quadric) landmarks.
//!
//! The crate covers the whole estimation path from a single RGB-D frame to a
//! jointly optimized object map:
//!
//! * [`geometry`]: poses, cameras, dual quadrics, conic projection and the
//!   circumscribed bounding box of a projected ellipsoid.
//! * [`segmentation`]: supporting-plane extraction and per-detection
//!   envelope point clouds.
//! * [`symmetry`]: symmetry-plane estimation and mirror completion.
//! * [`fitting`]: volume-weighted ellipsoid fitting and the single-frame
//!   estimation pipeline.
//! * [`backend`]: the factor graph with odometry, bounding-box and
//!   single-frame ellipsoid factors, optimized by Levenberg-Marquardt.
//! * [`sim`] and [`eval`]: synthetic scenes, noisy observations, accuracy
//!   metrics, convergence curves and weight sweeps.
//!
//! Everything here is `no_std` + `alloc`; file formats and the command line
//! live in the companion `quadric-map` crate.

#![no_std]

extern crate alloc;

pub mod backend;
pub mod eval;
pub mod fitting;
pub mod geometry;
mod linalg;
pub mod segmentation;
pub mod sim;
pub mod spatial;
pub mod symmetry;

pub use backend::{FactorGraph, GraphConfig, Mode, OptimizeReport};
pub use fitting::{Detection, FitParams, FitResult, Observation};
pub use geometry::{BBox, Camera, DualConic, DualQuadric, EllipsoidState, GeometryError, Plane, Pose};
pub use segmentation::{DepthImage, PointCloud, SegmentationParams, SegmentedObject};
pub use symmetry::{SymmetryKind, SymmetryParams, SymmetryResult, SymmetryTable};

/// Three-vector of `f64`, used for points, translations and semi-axes.
pub type Vec3 = nalgebra::Vector3<f64>;
