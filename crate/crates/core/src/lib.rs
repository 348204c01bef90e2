//! Glauber dynamics for the Ising model on complete multipartite graphs.
//!
//! The crate combines exact lumped-chain computations (magnetization chain,
//! 2m-coordinate chain), full spin-configuration simulation with couplings,
//! and the spectral analysis of the contraction matrix that locates the
//! critical temperature.

pub mod bounds;
pub mod cli;
pub mod coordchain;
pub mod coupling;
pub mod error;
pub mod glauber;
pub mod magchain;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{PartitionSpec, SpectralData};
