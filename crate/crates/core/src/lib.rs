//! Melody extraction toolkit.
//!
//! The crate is organised as a pipeline of small modules:
//!
//! * [`audio`]: WAV decoding, mono merge, resampling to 8 kHz, pitch label
//!   files, contour CSV output and dataset manifests.
//! * [`dsp`]: Hann window, short-time Fourier transform and the
//!   autocorrelation pitch tracker.
//! * [`cfp`]: the combined frequency and periodicity (CFP) representation
//!   and 25×25 patch selection around per-frame salience peaks.
//! * [`neural`]: a small deterministic tensor / network engine with exact
//!   reverse-mode gradients, Adam and finite-difference verification.
//! * [`models`]: the patch CNN vocal classifier, the 442-class frame
//!   classifier and the 1/8-semitone pitch quantizer.
//! * [`training`]: supervised training and teacher-student training on
//!   pseudo labels.
//! * [`eval`]: raw pitch accuracy (RPA) and raw chroma accuracy (RCA).
//! * [`synth`]: deterministic synthetic test signals.

pub mod audio;
pub mod cfp;
pub mod dsp;
pub mod eval;
pub mod models;
pub mod neural;
pub mod synth;
pub mod training;

pub use audio::{AudioClip, PitchContour};
pub use dsp::{AxisKind, StftConfig, TimeFrequencyMap};
