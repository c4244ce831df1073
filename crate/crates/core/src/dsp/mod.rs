//! Time-frequency preprocessing.

pub mod fft;
pub mod stft;
