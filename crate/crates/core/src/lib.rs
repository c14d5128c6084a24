//! Nonlinear-interference PSD for links carrying energy-correlated symbols.

pub mod config;
pub mod error;
pub mod kernels;
pub mod linkmodel;
pub mod megn;
pub mod shaping;
pub mod ssfm;
pub mod stats;

pub use error::{Error, Result};
