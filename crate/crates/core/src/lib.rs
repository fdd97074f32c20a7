//! Global localization by aligning sparse object submaps.
//!
//! Submaps of open-set objects (centroid, shape attributes, semantic embedding)
//! are associated with a graph-theoretic densest-subgraph search over a fused
//! affinity matrix, and the relative pose is recovered in closed form.

pub mod affinity;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod par;
pub mod problem;
pub mod registration;
pub mod sim;
pub mod solver;
pub mod submap;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{PoseSE3, Vec3};
pub use model::{Association, AssociationSet, Segment, SourceId, Submap};
