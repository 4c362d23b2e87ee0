//! Comparison systems: JPEG + LDPC + 4-QAM and a convolutional DeepJSCC.

pub mod classical;
pub mod deepjscc;
pub mod jpeg;
pub mod ldpc;
pub mod qam;

pub use classical::{classical_pipeline, ClassicalConfig, ClassicalLink, DecodeOutcome, DecodeStatus};
pub use deepjscc::{train_deepjscc, DeepJscc, DeepJsccArch, DeepJsccConfig};
pub use jpeg::{jpeg_decode, jpeg_encode, jpeg_roundtrip};
pub use ldpc::{LdpcCode, LdpcDecode};
pub use qam::{qam_demodulate, qam_modulate};
