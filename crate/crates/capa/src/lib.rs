//! Continuous-aperture array (CAPA) toolkit.
//!
//! Channels are built from free-space Green's functions, discretized with
//! Gauss-Legendre quadrature or a wavenumber-domain grid, and fed to
//! beamforming, sparse estimation and capacity/DoF analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod cli;
pub mod em_core;
pub mod error;
pub mod estimation;
pub mod hwmodel;
pub mod limits;
pub mod quadrature;
pub mod wavenumber;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// 3-vector of reals in the global frame (metres).
pub type Vec3 = nalgebra::Vector3<f64>;
/// Dense complex matrix used throughout.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;

/// Library version string recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
