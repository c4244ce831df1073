//! File formats, dataset loaders, checkpoints, reports and the command-line
//! front end for the xLSTM ECG classifier.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod report;
pub mod wfdb;

pub use xlstm_ecg_core as core;
