//! Amplitude-swap diagnostics and full-reference quality metrics.
//!
//! Swapping the Fourier amplitude of a degraded image with that of its
//! reference, either in pixel space or per wavelet subband, shows where the
//! degradation lives. [`analyze_corpus`] scores such swaps over a corpus of
//! image pairs.

mod corpus;
mod metrics;
mod swap;
pub mod synthetic;

pub use corpus::{
    analyze_corpus, analyze_pairs, read_manifest, write_report, CorpusReport, PairResult,
};
pub use metrics::{mse, psnr, ssim, MetricReport, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use swap::{swap, SwapStrategy};
