//! Transcription and agreement metrics.

mod alpha;
mod cer;
mod precision;

pub use alpha::{krippendorff_alpha, AlphaError, AlphaResult, RatingMatrix};
pub use cer::{cer, corpus_cer, edit_distance, CerError, CerOptions, CorpusCer};
pub use precision::{sample_precision, LabelPrecision, PrecisionReport};
