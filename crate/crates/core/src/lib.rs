//! Neural-network quantum states, their tangent kernels and the closed-form
//! training dynamics of infinitely wide networks.

extern crate openblas_src;

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod hamiltonian;
pub mod hilbert;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod nnqs;
pub mod rng;
pub mod spectra;
pub mod trainer;

pub use error::{Error, Result};
