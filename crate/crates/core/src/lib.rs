//! Modeling, simulation, identification and regulation of planar soft-rigid
//! robots whose joints are elastically coupled through a shared soft matrix.

pub mod control;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod identification;
pub mod kinematics;
pub mod model;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};
