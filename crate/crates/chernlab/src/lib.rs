//! Numerical laboratory for Chern-harmonic maps from surfaces into Hermitian surfaces.

pub mod bubble;
pub mod config;
pub mod domain;
pub mod error;
pub mod fit;
pub mod flow;
pub mod harness;
pub mod map;
pub mod pullback;
pub mod regularity;
pub mod snapshot;
pub mod target;

pub use error::{Error, Result};
