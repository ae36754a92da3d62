//! Decomposition of oriented point clouds into extrusion cylinders.
//!
//! An extrusion cylinder is a closed planar profile swept along an axis over
//! a bounded extent. This crate recovers every parameter of such primitives
//! in closed form from labelled (or soft-labelled) oriented points, offers a
//! classical Hough-voting decomposition for unlabelled clouds, generates
//! synthetic sketch-extrude models with exact ground truth, and scores
//! decompositions against that ground truth.

pub mod error;
pub mod fitting;
pub mod geom;
pub mod hough;
pub mod io;
pub mod labels;
pub mod mesh;
pub mod metrics;
pub mod postproc;
pub mod sketch;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use fitting::{fit_cylinder, CylinderFit, ExtrusionCylinder};
pub use geom::{OrientedPointCloud, Rotation3};
pub use labels::{HardLabels, MembershipMatrix};
pub use sketch::{Sketch, SketchProfile};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
