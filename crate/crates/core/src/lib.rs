//! Single-channel speech denoising toolkit.
//!
//! Time-domain (TasNet-style) and frequency-domain (BLSTM / TCN masking)
//! denoisers built on a small reverse-mode autodiff tape, with SNR-family
//! losses and an image-method reverberant mixture simulator for training data.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod model;
pub mod objective;
pub mod rir;
pub mod signal;
pub mod trainer;
pub mod wav;

pub use error::{Error, Result};
pub use signal::{Spectrogram, StftConfig, Waveform, SAMPLE_RATE};
