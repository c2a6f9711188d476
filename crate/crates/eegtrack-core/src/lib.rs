//! Onset-based phonetic speech representations, linear forward (TRF) modeling
//! and LSTM-based match-mismatch classification for auditory EEG.
//!
//! The crate is organized around a verification-first workflow: the [`synth`]
//! module generates subjects with known ground-truth response kernels, and every
//! downstream stage (preprocessing, feature encoding, ridge TRF estimation, the
//! match-mismatch model, the statistics layer) is checked against that oracle.

pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod mm;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod stats;
pub mod synth;
pub mod trf;

pub use error::{Error, Result};
pub use signal::TimeSeries;
