//! Low-rank SPDE state-space modelling of multivariate spatio-temporal data.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `std` feature only switches the dense linear algebra backend
//! to its blocked kernels.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod em;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod golden;
pub mod kalman;
pub mod mesh;
pub mod model;
pub mod predict;
pub mod sparse;

pub use error::{Error, Result};
pub use geometry::Point2;
