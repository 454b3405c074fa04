//! Loss-landscape and Hessian-spectrum analysis for small neural networks.
//!
//! Models are built on a tiny reverse-mode autodiff engine ([`autodiff`]) that
//! also provides exact Hessian-vector products. On top of it sit training
//! with checkpointed trajectories ([`modelzoo`]), plane directions
//! ([`directions`]), loss grids ([`landscape`]), Lanczos-based spectral
//! density estimates ([`spectral`]) and a scaling harness ([`bench`]).

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod directions;
mod error;
pub mod landscape;
pub mod linalg;
pub mod modelzoo;
pub mod parallel;
pub mod seed;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
