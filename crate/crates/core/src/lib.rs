//! Long-time behaviour of growth-fragmentation equations.

pub mod coeffs;
pub mod cli;
pub mod criteria;
pub mod malthus;
pub mod error;
pub mod numerics;
pub mod pdmp;
pub mod spectral;

pub use coeffs::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};
pub use error::{Error, Result};
