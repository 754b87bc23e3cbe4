//! Spectral transforms, IIR filtering and the spectrogram imaging pipeline.

mod fft;
mod iir;
mod image;
mod stft;

pub use fft::{fft, FftPlan};
pub use iir::{butterworth_lowpass, filter_apply, Biquad, IirFilter};
pub use image::{
    colormap, image_pipeline, normalized_intensity, resize_colormapped, SpectrogramImage,
    COLORMAP_ANCHORS,
};
pub use stft::{hann_window, log_magnitude, stft, RealMatrix, Spectrogram, StftConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("size error: {0}")]
    Size(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, DspError>;
