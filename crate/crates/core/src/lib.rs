//! Light scattering by discrete spherical particles and Monte Carlo rendering
//! of grainy participating media.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitude;
pub mod compare;
pub mod error;
pub mod geometry;
pub mod goa;
pub mod medium;
pub mod mie;
pub mod optics;
pub mod particles;
pub mod renderer;
pub mod scatter;
pub mod scene;
pub mod specfun;
pub mod spectrum;

pub use amplitude::AmplitudePair;
pub use error::{Error, Result};
pub use specfun::ComplexValue;
