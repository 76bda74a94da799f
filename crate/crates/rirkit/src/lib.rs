//! rirkit — room impulse response interpolation and array processing.
//!
//! The crate covers a full desk-scale pipeline for working with partially
//! measured microphone arrays:
//!
//! - an image-source room simulator with pink/diffuse/white noise generators
//!   and multichannel scene rendering ([`roomsim`]);
//! - cubic-spline interpolation of missing impulse-response channels
//!   ([`interp`]) and a diffusion-based inpainting reconstructor
//!   ([`diffusion`]);
//! - STFT-domain MVDR beamforming steered by full acoustic transfer
//!   functions ([`beamform`]);
//! - reconstruction and enhancement metrics ([`metrics`]);
//! - experiment orchestration, archives, and the CLI ([`harness`]).

pub mod beamform;
pub mod diffusion;
pub mod error;
mod fftutil;
pub mod harness;
pub mod interp;
pub mod metrics;
pub mod patch;
pub mod roomsim;
pub mod types;

pub use error::{Error, Result};
pub use types::{MicMask, RirMatrix};
