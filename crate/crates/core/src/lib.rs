//! Generative semantic communication over simulated wireless channels.
//!
//! A Swin-Transformer joint source-channel codec maps images to channel
//! vectors; AWGN and Rayleigh channels corrupt them; a compact-prior
//! diffusion model refines the decoded images at the receiver. Classical
//! (JPEG + LDPC + 4-QAM) and convolutional DeepJSCC baselines share the same
//! channel realisations for paired comparisons.

pub mod baseline;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod link;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;

pub use channel::{ChannelConfig, ChannelKind, ChannelSignal};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use link::StreamKey;
