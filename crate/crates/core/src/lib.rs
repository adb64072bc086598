//! Coded-aperture snapshot spectral imaging (CASSI) simulation and a
//! mask-guided spectral-wise transformer for reconstructing hyperspectral
//! cubes from a single compressed snapshot.
//!
//! The crate is self-contained: [`tensor`] provides the dense arrays and the
//! reverse-mode differentiator every other module builds on.

pub mod attention;
pub mod cassi;
pub mod error;
pub mod gradsuite;
pub mod hsit;
pub mod mask;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{MstError, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
