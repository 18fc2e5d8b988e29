//! Simulation and reconstruction toolkit for the spindle transform and its
//! equivalent weighted cylinder transform.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: closed-form kernels (the radial map `v`, the defining
//!   function `h`, surface quadratures).
//! * [`harmonics`]: spherical-harmonic analysis/synthesis and the filter `Q`.
//! * [`operators`]: discrete forward/adjoint pairs behind [`operators::LinearMap`].
//! * [`solvers`]: backprojection, filtered backprojection, CGLS, Landweber.
//! * [`phantoms`], [`microlocal`], [`io`], [`config`].

pub mod config;
pub mod error;
pub mod geometry;
pub mod harmonics;
pub mod io;
pub mod microlocal;
pub mod operators;
pub mod phantoms;
pub mod pipeline;
pub mod solvers;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Direction, HollowBall, Vec3};
pub use harmonics::{HarmonicCoeffs, HarmonicStack, SphereGrid};
pub use operators::{LinearMap, Sinogram};
pub use volume::Volume;
