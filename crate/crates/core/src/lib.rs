//! Core numerics for xLSTM-based multi-label ECG classification.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! a small reverse-mode autodiff engine, an STFT frontend with a mixed-radix
//! FFT, stabilized sLSTM/mLSTM cells, the sequential and layer fusion
//! networks, the training loop, and the evaluation metrics. File formats,
//! dataset loading and the command-line tool live in the `xlstm-ecg` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod cells;
pub mod data;
pub mod dsp;
mod error;
pub mod gradcheck;
pub(crate) mod math;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use data::{DatasetSplit, EcgRecord};
pub use dsp::stft::{Spectrogram, StftConfig};
pub use error::{Error, Result};
pub use network::{FusionMode, FusionNetwork, NetworkConfig};
pub use tensor::Tensor;
pub use training::{TrainConfig, TrainLog};
