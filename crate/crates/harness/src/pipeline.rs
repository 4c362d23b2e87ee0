//! Trained model bundle and the per-system transmission pipelines.
//!
//! Every pipeline processes images in fixed micro-batches so that a batch
//! seen by the single-user path and by the multi-user orchestrator is
//! bit-identical: same chunking, same stream keys, same kernels.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Tensor;
use gsc_core::baseline::{ClassicalLink, DecodeStatus, DeepJscc};
use gsc_core::codec::SwinJscc;
use gsc_core::diffusion::{SftModel, KIND_DIFFUSION};
use gsc_core::link::transmit_rows;
use gsc_core::metrics::RandomConvPyramid;
use gsc_core::{ChannelConfig, ImageTensor, StreamKey};

use crate::config::HarnessConfig;
use crate::error::Result;

pub const CODEC_FILE: &str = "codec.ckpt";
pub const SFT_FILE: &str = "sft.ckpt";
pub const DEEPJSCC_FILE: &str = "deepjscc.ckpt";

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

/// Immutable models shared by every worker; missing neural models are
/// `None` so a sweep can skip the systems that need them.
#[derive(Clone)]
pub struct Models {
    pub codec: Option<Arc<SwinJscc>>,
    pub sft: Option<Arc<SftModel>>,
    pub deepjscc: Option<Arc<DeepJscc>>,
    pub classical: Arc<ClassicalLink>,
    pub backbone: Arc<RandomConvPyramid>,
}

fn load_opt<T>(path: &Path, load: impl FnOnce(&Path) -> gsc_core::Result<T>) -> Result<Option<Arc<T>>> {
    if path.exists() {
        Ok(Some(Arc::new(load(path)?)))
    } else {
        tracing::warn!(path = %path.display(), "checkpoint not found");
        Ok(None)
    }
}

impl Models {
    /// Loads whatever checkpoints exist under `out/checkpoints`.
    pub fn load(out: &Path, cfg: &HarnessConfig) -> Result<Self> {
        let dir = checkpoint_dir(out);
        Ok(Self {
            codec: load_opt(&dir.join(CODEC_FILE), |p| SwinJscc::load(p))?,
            sft: load_opt(&dir.join(SFT_FILE), |p| SftModel::load(KIND_DIFFUSION, p))?,
            deepjscc: load_opt(&dir.join(DEEPJSCC_FILE), |p| DeepJscc::load(p))?,
            classical: Arc::new(ClassicalLink::new(&cfg.classical)?),
            backbone: Arc::new(RandomConvPyramid::default()),
        })
    }

    pub fn from_parts(
        codec: Option<SwinJscc>,
        sft: Option<SftModel>,
        deepjscc: Option<DeepJscc>,
        cfg: &HarnessConfig,
    ) -> Result<Self> {
        Ok(Self {
            codec: codec.map(Arc::new),
            sft: sft.map(Arc::new),
            deepjscc: deepjscc.map(Arc::new),
            classical: Arc::new(ClassicalLink::new(&cfg.classical)?),
            backbone: Arc::new(RandomConvPyramid::default()),
        })
    }

    /// Identifier of the model weights, folded into cache keys.
    pub fn version(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        if let Some(c) = &self.codec {
            h.update(c.checkpoint()?.to_bytes()?);
        }
        h.update(b"|");
        if let Some(s) = &self.sft {
            h.update(s.checkpoint(KIND_DIFFUSION)?.to_bytes()?);
        }
        Ok(format!("{:x}", h.finalize()))
    }
}

/// Transmitted codec output for a micro-batch, split around the air
/// interface so the orchestrator can wait on the channel in between.
pub struct Encoded {
    pub f: Tensor,
    pub keys: Vec<StreamKey>,
}

impl Encoded {
    /// Complex channel uses this batch occupies on air.
    pub fn channel_uses(&self) -> usize {
        self.f.dims().iter().product::<usize>() / 2
    }
}

pub fn encode(codec: &SwinJscc, images: &ImageTensor, keys: Vec<StreamKey>) -> Result<Encoded> {
    let f = codec.channel_encode(&codec.encode_semantic(images)?)?;
    Ok(Encoded { f, keys })
}

/// Channel, equalisation and semantic decoding: `Ŝ`.
pub fn receive(codec: &SwinJscc, enc: &Encoded, channel: &ChannelConfig) -> Result<ImageTensor> {
    let f_hat = transmit_rows(&enc.f, channel, &enc.keys)?;
    Ok(codec.decode_semantic(&codec.channel_decode(&f_hat)?)?)
}

/// `Ŝ` and the refined image for one micro-batch.
pub fn gsc_micro_batch(
    codec: &SwinJscc,
    sft: &SftModel,
    images: &ImageTensor,
    channel: &ChannelConfig,
    keys: Vec<StreamKey>,
) -> Result<(ImageTensor, ImageTensor)> {
    let enc = encode(codec, images, keys)?;
    let s_hat = receive(codec, &enc, channel)?;
    let refined = sft.refine(&s_hat, channel.seed, &enc.keys)?;
    Ok((s_hat, refined))
}

/// Chunk boundaries `[start, end)` used by every pipeline.
pub fn micro_batches(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size.max(1)).map(|s| (s, (s + size).min(n))).collect()
}

/// Single-user GSC on `images` whose first element has dataset index
/// `first_index`. Returns `(Ŝ, refined)`; `Ŝ` alone is the NGF output.
pub fn run_gsc(
    codec: &SwinJscc,
    sft: &SftModel,
    images: &ImageTensor,
    channel: &ChannelConfig,
    user: u64,
    first_index: u64,
    micro_batch: usize,
) -> Result<(ImageTensor, ImageTensor)> {
    let mut s_parts = Vec::new();
    let mut r_parts = Vec::new();
    for (a, b) in micro_batches(images.len(), micro_batch) {
        let keys = StreamKey::range(user, first_index + a as u64, b - a);
        let (s, r) = gsc_micro_batch(codec, sft, &images.slice(a, b - a)?, channel, keys)?;
        s_parts.push(s);
        r_parts.push(r);
    }
    Ok((ImageTensor::concat(&s_parts)?, ImageTensor::concat(&r_parts)?))
}

/// NGF alone: the codec without refinement.
pub fn run_ngf(
    codec: &SwinJscc,
    images: &ImageTensor,
    channel: &ChannelConfig,
    user: u64,
    first_index: u64,
    micro_batch: usize,
) -> Result<ImageTensor> {
    let mut parts = Vec::new();
    for (a, b) in micro_batches(images.len(), micro_batch) {
        let keys = StreamKey::range(user, first_index + a as u64, b - a);
        let enc = encode(codec, &images.slice(a, b - a)?, keys)?;
        parts.push(receive(codec, &enc, channel)?);
    }
    Ok(ImageTensor::concat(&parts)?)
}

pub fn run_deepjscc(
    model: &DeepJscc,
    images: &ImageTensor,
    channel: &ChannelConfig,
    user: u64,
    first_index: u64,
    micro_batch: usize,
) -> Result<ImageTensor> {
    let mut parts = Vec::new();
    for (a, b) in micro_batches(images.len(), micro_batch) {
        let keys = StreamKey::range(user, first_index + a as u64, b - a);
        parts.push(model.transmit(&images.slice(a, b - a)?, channel, &keys)?);
    }
    Ok(ImageTensor::concat(&parts)?)
}

/// Classical link per image; failed images come back mid-grey.
pub fn run_classical(
    link: &ClassicalLink,
    images: &ImageTensor,
    channel: &ChannelConfig,
    user: u64,
    first_index: u64,
) -> Result<(ImageTensor, Vec<DecodeStatus>)> {
    let (h, w) = (images.height(), images.width());
    let mut parts = Vec::with_capacity(images.len());
    let mut status = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let out = link.transmit(images, i, channel, StreamKey::new(user, first_index + i as u64))?;
        parts.push(out.image_or_grey(h, w)?);
        status.push(out.status);
    }
    Ok((ImageTensor::concat(&parts)?, status))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_batches_cover_exactly() {
        assert_eq!(micro_batches(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(micro_batches(8, 4), vec![(0, 4), (4, 8)]);
        assert!(micro_batches(0, 4).is_empty());
    }
}
