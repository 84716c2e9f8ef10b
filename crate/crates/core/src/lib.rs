//! Frequency-domain machinery for wavelet/Fourier underwater image
//! enhancement: Haar subbands, amplitude/phase factorization, the
//! attention blocks of the two-branch enhancement network, and residual
//! diffusion refinement of subbands.

pub mod analysis;
pub mod blocks;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod fourier;
pub mod imageio;
pub mod losses;
pub mod pipeline;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Rng, Tape, Tensor, Var};
