//! Model-based accelerated MR thermometry.
//!
//! The crate couples a Pennes bioheat solver with a complex MR signal model,
//! propagates uniform priors on tissue attenuation through both by tensor
//! Gauss-Legendre quadrature, chooses k-space lines where the ensemble
//! disagrees most, and fuses sparse measurements with a linear
//! minimum-variance update.

pub mod bioheat;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod io;
pub mod model;
pub mod mrsignal;
pub mod phantom;
pub mod recon;
pub mod sampling;
pub mod uq;

pub use error::{Error, Result};
