//! Sequence selection for probabilistically shaped coherent optical links.
//!
//! The crate covers the enumerative sphere shaping matcher ([`ess`]), the
//! shaping and framing pipeline ([`pas`]), energy-dispersion metrics
//! ([`metrics`]), candidate selection ([`select`]), a split-step fiber model
//! ([`channel`]), receiver DSP ([`rx`]) and the experiment runner
//! ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod ess;
pub mod experiment;
mod fft;
pub mod metrics;
pub mod pas;
pub mod rx;
pub mod select;
pub mod signal;

pub use error::{Error, Result};
pub use fft::{bin_frequency, fftfreq};
pub use signal::{normalize_power, ComplexSample, DualPolSymbolBlock, SampledWaveform};
