//! Forensic marking pipeline for photographs of seized ivory.
//!
//! Raw detector boxes become a curated catalog of handwritten markings
//! ([`geometry`], [`catalog`]); a reviewed sample seeds semi-automatic label
//! propagation ([`propagation`]); a vision-language backend annotates the rest
//! ([`annotate`]); and [`analysis`] turns the catalog into signature-marking
//! indexes and cross-seizure link reports. [`eval`] and [`metrics`] cover the
//! detector evaluation protocol and the transcription/agreement metrics.

pub mod analysis;
pub mod annotate;
pub mod catalog;
pub mod config;
pub mod eval;
pub mod fixture;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod review;
