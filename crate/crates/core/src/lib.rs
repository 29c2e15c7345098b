//! Open quantum harmonic networks coupled to Gaussian reservoirs.

pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod greens;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod special;
pub mod spectral;
pub mod thermo;

pub use error::{Error, Result};
