//! Emission spectra of a multilevel transmon driven by two continuous tones
//! at the end of a semi-infinite transmission line.
//!
//! The steady state is computed by harmonic balance over the beat frequency
//! ([`floquet`]), spectra follow from the quantum regression theorem in the
//! same harmonic space ([`spectrum`]), and [`timedomain`] integrates the
//! master equation directly as an independent check.

pub mod cli;
pub mod error;
pub mod floquet;
pub mod model;
pub mod spectroscopy;
pub mod spectrum;
pub mod sweep;
pub mod timedomain;

pub use error::{Error, Result};
