//! Swin-Transformer joint source-channel codec.
//!
//! `(N,3,H,W) -> (N,H/4,W/4,C) -> (N,H/8,W/8,C) -> k -> (N,H/8,W/8,C) -> (N,3,H,W)`

pub mod channel_coder;
pub mod patch;
pub mod swin;
mod train;

use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::link::{self, StreamKey};
use crate::nn::{LayerNorm, Linear, ParamStore, Scope};

pub use channel_coder::ChannelCoder;
pub use patch::{patch_partition, patch_reassemble, PatchEmbed, PatchMerge, PatchSplit};
pub use swin::{SwinBlock, SwinStage, WindowAttention};
pub use train::{decoder_loss, train_codec};

pub const CHECKPOINT_KIND: &str = "swin-jscc";

/// Everything needed to rebuild the network; this is what checkpoints hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecArch {
    pub dim: usize,
    pub window: usize,
    pub depths: [usize; 2],
    pub heads: [usize; 2],
    pub mlp_ratio: usize,
    pub compression_ratio: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub dim: usize,
    pub window: usize,
    pub depths: [usize; 2],
    pub heads: [usize; 2],
    pub mlp_ratio: usize,
    pub compression_ratio: f64,
    pub height: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_snr_db: (f64, f64),
    pub steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 2,
            depths: [2, 2],
            heads: [4, 8],
            mlp_ratio: 4,
            compression_ratio: 1.0 / 6.0,
            height: 32,
            width: 32,
            learning_rate: 1e-4,
            batch_size: 32,
            train_snr_db: (1.0, 13.0),
            steps: 2000,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn arch(&self) -> CodecArch {
        CodecArch {
            dim: self.dim,
            window: self.window,
            depths: self.depths,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            compression_ratio: self.compression_ratio,
            height: self.height,
            width: self.width,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        let (lo, hi) = self.train_snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("training SNR range ({lo}, {hi}) is invalid")));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

impl CodecArch {
    /// Real values per image, `n = 3 H W`.
    pub fn input_dim(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn symbol_grid(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    pub fn symbol_dim(&self) -> usize {
        let (h, w) = self.symbol_grid();
        h * w * self.dim
    }

    /// Channel vector length `k = round(ratio * n)`.
    pub fn channel_len(&self) -> usize {
        (self.compression_ratio * self.input_dim() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a nonzero multiple of 8",
                self.height, self.width
            )));
        }
        if !(self.compression_ratio > 0.0 && self.compression_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "compression ratio {} must lie in (0, 1]",
                self.compression_ratio
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        for (stage, side) in [(1, self.height / 4), (1, self.width / 4), (2, self.height / 8), (2, self.width / 8)] {
            if side % self.window != 0 {
                return Err(Error::Config(format!(
                    "window {} does not divide the stage-{stage} grid side {side}",
                    self.window
                )));
            }
        }
        for (i, (&heads, dim)) in self.heads.iter().zip([self.dim, 2 * self.dim]).enumerate() {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!("stage {} width {dim} not divisible by {heads} heads", i + 1)));
            }
        }
        let k = self.channel_len();
        if k > self.symbol_dim() {
            return Err(Error::Config(format!(
                "channel length {k} exceeds the {} flattened symbol values",
                self.symbol_dim()
            )));
        }
        if k == 0 || k % 2 != 0 {
            return Err(Error::Config(format!("channel length {k} must be positive and even")));
        }
        Ok(())
    }
}

/// `E(I; φ_α)`: patch embedding, stage 1 at `C`, patch merge, stage 2 at
/// `2C`, then a projection back to `C` symbol channels.
#[derive(Debug, Clone)]
pub struct SemanticEncoder {
    embed: PatchEmbed,
    stage1: SwinStage,
    merge: PatchMerge,
    stage2: SwinStage,
    norm: LayerNorm,
    head: Linear,
}

impl SemanticEncoder {
    pub fn new(s: &mut Scope, a: &CodecArch) -> Result<Self> {
        let c = a.dim;
        let g1 = (a.height / 4, a.width / 4);
        let g2 = a.symbol_grid();
        Ok(Self {
            embed: PatchEmbed::new(&mut s.pp("embed"), c)?,
            stage1: SwinStage::new(&mut s.pp("stage1"), c, a.depths[0], a.heads[0], a.window, g1, a.mlp_ratio)?,
            merge: PatchMerge::new(&mut s.pp("merge"), c)?,
            stage2: SwinStage::new(&mut s.pp("stage2"), 2 * c, a.depths[1], a.heads[1], a.window, g2, a.mlp_ratio)?,
            norm: LayerNorm::new(&mut s.pp("norm"), 2 * c)?,
            head: Linear::new(&mut s.pp("head"), 2 * c, c, true)?,
        })
    }

    pub fn embed(&self) -> &PatchEmbed {
        &self.embed
    }

    pub fn stage1(&self) -> &SwinStage {
        &self.stage1
    }

    /// Output of stage 1, `(N, H/4, W/4, C)`.
    pub fn stage1_forward(&self, images: &Tensor) -> Result<Tensor> {
        let tokens = patch_partition(images)?;
        self.stage1.forward(&self.embed.forward(&tokens)?)
    }

    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let x = self.merge.forward(&self.stage1_forward(images)?)?;
        let x = self.stage2.forward(&x)?;
        Ok(self.head.forward(&self.norm.forward(&x)?)?)
    }
}

/// `E⁻¹(m; φ_γ)`, the mirror of [`SemanticEncoder`].
#[derive(Debug, Clone)]
pub struct SemanticDecoder {
    head: Linear,
    stage2: SwinStage,
    split: PatchSplit,
    stage1: SwinStage,
    norm: LayerNorm,
    unembed: Linear,
}

impl SemanticDecoder {
    pub fn new(s: &mut Scope, a: &CodecArch) -> Result<Self> {
        let c = a.dim;
        let g1 = (a.height / 4, a.width / 4);
        let g2 = a.symbol_grid();
        Ok(Self {
            head: Linear::new(&mut s.pp("head"), c, 2 * c, true)?,
            stage2: SwinStage::new(&mut s.pp("stage2"), 2 * c, a.depths[1], a.heads[1], a.window, g2, a.mlp_ratio)?,
            split: PatchSplit::new(&mut s.pp("split"), c)?,
            stage1: SwinStage::new(&mut s.pp("stage1"), c, a.depths[0], a.heads[0], a.window, g1, a.mlp_ratio)?,
            norm: LayerNorm::new(&mut s.pp("norm"), c)?,
            unembed: Linear::new(&mut s.pp("unembed"), c, patch::PATCH_DIM, true)?,
        })
    }

    /// Unclamped reconstruction, centred on mid-grey.
    pub fn forward_raw(&self, m: &Tensor) -> Result<Tensor> {
        let x = self.stage2.forward(&self.head.forward(m)?)?;
        let x = self.stage1.forward(&self.split.forward(&x)?)?;
        let tokens = (self.unembed.forward(&self.norm.forward(&x)?)? + 0.5)?;
        patch_reassemble(&tokens)
    }

    pub fn forward(&self, m: &Tensor) -> Result<Tensor> {
        Ok(self.forward_raw(m)?.clamp(0f32, 1f32)?)
    }
}

/// The trained codec: semantic encoder/decoder plus the fixed channel coder.
pub struct SwinJscc {
    arch: CodecArch,
    store: ParamStore,
    encoder: SemanticEncoder,
    decoder: SemanticDecoder,
    coder: ChannelCoder,
}

impl std::fmt::Debug for SwinJscc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SwinJscc")
            .field("arch", &self.arch)
            .field("params", &self.store.num_elements())
            .finish()
    }
}

impl SwinJscc {
    pub fn new(arch: &CodecArch) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new(arch.seed);
        let mut root = store.root();
        let encoder = SemanticEncoder::new(&mut root.pp("encoder"), arch)?;
        let decoder = SemanticDecoder::new(&mut root.pp("decoder"), arch)?;
        let coder = ChannelCoder::new(
            &mut root.pp("coder"),
            arch.channel_len(),
            arch.symbol_dim(),
            arch.seed,
        )?;
        Ok(Self {
            arch: arch.clone(),
            store,
            encoder,
            decoder,
            coder,
        })
    }

    pub fn arch(&self) -> &CodecArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn encoder(&self) -> &SemanticEncoder {
        &self.encoder
    }

    pub fn coder(&self) -> &ChannelCoder {
        &self.coder
    }

    /// Parameters updated by training (the channel coder stays fixed).
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.store.vars_matching(&["encoder.", "decoder."])
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let (_, _, h, w) = images.dims4()?;
        if (h, w) != (self.arch.height, self.arch.width) {
            return Err(shape_err(format!(
                "codec built for {}x{} images, got {h}x{w}",
                self.arch.height, self.arch.width
            )));
        }
        Ok(())
    }

    /// `S = E(I)`, shape `(N, H/8, W/8, C)`.
    pub fn encode_semantic(&self, images: &ImageTensor) -> Result<Tensor> {
        self.encode_tensor(images.tensor())
    }

    pub(crate) fn encode_tensor(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.encoder.forward(images)
    }

    /// `f = C(S)`, shape `(N, k)`.
    pub fn channel_encode(&self, symbols: &Tensor) -> Result<Tensor> {
        self.check_symbols(symbols)?;
        self.coder.encode(symbols)
    }

    /// `m = C⁻¹(f̂)`, shape `(N, H/8, W/8, C)`.
    pub fn channel_decode(&self, received: &Tensor) -> Result<Tensor> {
        let n = received.dim(0)?;
        let (h, w) = self.arch.symbol_grid();
        Ok(self.coder.decode(received)?.reshape((n, h, w, self.arch.dim))?)
    }

    /// `Ŝ = E⁻¹(m)`, clamped to `[0, 1]`.
    pub fn decode_semantic(&self, m: &Tensor) -> Result<ImageTensor> {
        self.check_symbols(m)?;
        ImageTensor::new(self.decoder.forward(m)?)
    }

    pub(crate) fn decode_tensor(&self, m: &Tensor) -> Result<Tensor> {
        self.decoder.forward(m)
    }

    fn check_symbols(&self, s: &Tensor) -> Result<()> {
        let (h, w) = self.arch.symbol_grid();
        let dims = s.dims();
        if dims.len() != 4 || dims[1..] != [h, w, self.arch.dim] {
            return Err(shape_err(format!(
                "expected symbols (N, {h}, {w}, {}), got {dims:?}",
                self.arch.dim
            )));
        }
        Ok(())
    }

    /// Full link for a batch: encode, transmit each image on the realisation
    /// keyed by `keys[i]`, equalise, decode.
    pub fn transmit(&self, images: &ImageTensor, channel: &ChannelConfig, keys: &[StreamKey]) -> Result<ImageTensor> {
        let f = self.channel_encode(&self.encode_semantic(images)?)?;
        let f_hat = link::transmit_rows(&f, channel, keys)?;
        self.decode_semantic(&self.channel_decode(&f_hat)?)
    }

    /// Encode and decode without a channel.
    pub fn reconstruct(&self, images: &ImageTensor) -> Result<ImageTensor> {
        let f = self.channel_encode(&self.encode_semantic(images)?)?;
        self.decode_semantic(&self.channel_decode(&f)?)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_params(CHECKPOINT_KIND, &self.arch, &[&self.store])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// Rebuilds the codec described by the checkpoint header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: CodecArch = ck.config_as()?;
        Self::load_into(ck, &arch)
    }

    /// Loads weights into a codec of the given architecture, rejecting
    /// checkpoints written for any other.
    pub fn load_into(ck: &Checkpoint, arch: &CodecArch) -> Result<Self> {
        ck.expect(CHECKPOINT_KIND, arch)?;
        let model = Self::new(arch)?;
        ck.restore(&model.store, "")?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    fn small() -> CodecArch {
        CodecConfig::default().arch()
    }

    fn images(n: usize, seed: u64) -> ImageTensor {
        ImageTensor::random(n, 32, 32, seed).unwrap()
    }

    #[test]
    fn shape_chain() {
        let m = SwinJscc::new(&small()).unwrap();
        let x = images(2, 0);
        let s = m.encode_semantic(&x).unwrap();
        assert_eq!(s.dims(), &[2, 4, 4, 32]);
        let f = m.channel_encode(&s).unwrap();
        assert_eq!(f.dims(), &[2, 512]);
        let back = m.channel_decode(&f).unwrap();
        assert_eq!(back.dims(), &[2, 4, 4, 32]);
        let y = m.decode_semantic(&back).unwrap();
        assert_eq!(y.tensor().dims(), &[2, 3, 32, 32]);
    }

    #[test]
    fn default_channel_length() {
        assert_eq!(small().channel_len(), 512);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut a = small();
        a.compression_ratio = 0.9;
        assert!(matches!(a.validate(), Err(Error::Config(_))));
        let mut a = small();
        a.window = 3;
        assert!(a.validate().is_err());
        let mut a = small();
        a.compression_ratio = 0.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn identical_images_give_identical_symbols() {
        let m = SwinJscc::new(&small()).unwrap();
        let one = images(1, 3);
        let two = ImageTensor::concat(&[one.clone(), one]).unwrap();
        let s = m.encode_semantic(&two).unwrap();
        let a = s.get(0).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = s.get(1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transmit_is_deterministic() {
        let m = SwinJscc::new(&small()).unwrap();
        let x = images(2, 5);
        let ch = ChannelConfig::new(ChannelKind::Rayleigh, 3.0, 9);
        let keys = StreamKey::range(0, 0, 2);
        let a = m.transmit(&x, &ch, &keys).unwrap().to_vec().unwrap();
        let b = m.transmit(&x, &ch, &keys).unwrap().to_vec().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ckpt");
        let m = SwinJscc::new(&small()).unwrap();
        m.save(&path).unwrap();
        let loaded = SwinJscc::load(&path).unwrap();
        let x = images(1, 2);
        let a = m.reconstruct(&x).unwrap().to_vec().unwrap();
        let b = loaded.reconstruct(&x).unwrap().to_vec().unwrap();
        assert_eq!(a, b);

        let mut wider = small();
        wider.dim = 64;
        let ck = Checkpoint::load(&path).unwrap();
        assert!(matches!(
            SwinJscc::load_into(&ck, &wider),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }
}
