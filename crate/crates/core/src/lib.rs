//! Symmetry-informed discovery of governing equations for autonomous ODEs.

pub mod ad;
pub mod bench;
pub mod config;
pub mod constraint;
pub mod discover;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod funclib;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod rng;
pub mod symmetry;

pub use error::{Error, Result};
