pub mod background;
pub mod airy;
pub mod config;
pub mod cutoff;
pub mod diagnostics;
pub mod error;
pub mod green;
pub mod io;
pub mod evolution;
pub mod experiment;
pub mod good_derivative;
pub mod grid;
pub mod linalg;
pub mod norms;
pub mod profile;
pub mod rayleigh;
pub mod quadrature;
pub mod resolvent;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
