//! Evaluation toolkit and reference operators for 3D visual query localization.

pub mod anchor;
pub mod data;
pub mod fusion;
pub mod geom;
pub mod metrics;
