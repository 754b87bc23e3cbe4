//! GNSS jamming signal synthesis, STFT spectrogram imaging, and the GAC-KAN
//! lightweight classifier on a small from-scratch tensor/autodiff core.

pub mod cli;
pub mod dsp;
pub mod gackan;
pub mod nncore;
pub mod sigsynth;
pub mod traineval;
