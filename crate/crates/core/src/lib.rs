//! Verified shape-derivative calculus of boundary integral operators for
//! time-harmonic electromagnetic scattering by a smooth penetrable obstacle.
//!
//! The crate discretizes a star-shaped reference sphere with a spectrally
//! exact Gauss-Legendre x uniform-azimuth grid and builds, on top of it:
//!
//! - transported geometry of deformed surfaces and its directional
//!   derivatives (`geometry`),
//! - tangential differential operators, Helmholtz decomposition and their
//!   derivatives under deformation (`surfops`),
//! - weakly singular boundary integral operators, potentials and far
//!   fields together with derivative kernels (`kernels`),
//! - the electromagnetic operator layer in Helmholtz coordinates
//!   (`emfield`),
//! - the dielectric transmission solve and the directional derivative of
//!   its solution (`scattering`),
//! - a verification harness and CLI (`harness`).
//!
//! Every analytic derivative is paired with a central finite-difference
//! or spectral oracle; the `verify` subcommand runs the whole battery.

pub mod emfield;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod nearfield;
pub mod operator;
pub mod oracles;
pub mod scattering;
pub mod sphharm;
pub mod surfops;

pub use error::Error;
