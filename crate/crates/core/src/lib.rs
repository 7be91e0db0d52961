//! Thermodynamic formalism for expanding random maps.
//!
//! A random map is a skew product `T(x, z) = (θx, T_x z)` over a symbol
//! process. This crate computes fiberwise transfer operators, fiber and
//! expected pressures, Bowen dimensions of random fibers, the
//! essential/quasi-deterministic dichotomy, multifractal spectra, and the
//! inducing reduction for maps that expand only in the mean.

pub mod base;
pub mod classify;
pub mod error;
pub mod fibers;
pub mod induce;
pub mod julia;
pub mod multifractal;
pub mod pressure;
pub mod transfer;

pub use error::{Error, Result};
