//! Sparse functional-connectivity estimation with structural-connectivity priors.

pub mod bench;
pub mod error;
pub mod io;
pub mod model;
pub mod netmetrics;
pub mod siggm;
pub mod simgen;
pub mod wglasso;

pub use error::{Error, Result};
