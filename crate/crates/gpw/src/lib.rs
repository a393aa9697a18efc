//! Exact and numerical geometry for neutral-signature plane wave metrics:
//! curvature towers, geodesics, curvature operators, model-space
//! normalizations, classification and Killing vector field algebras.

pub mod cli;
pub mod geodesics;
pub mod geometry;
pub mod killing;
pub mod models;
pub mod operators;
pub mod smoothfn;
