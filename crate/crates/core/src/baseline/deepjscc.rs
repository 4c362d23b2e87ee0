//! Convolutional DeepJSCC autoencoder at the same compression ratio as the
//! Swin codec.

use std::path::Path;

use candle_core::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelKind};
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::link::{self, StreamKey};
use crate::nn::{adam, clipped_step, leaky_relu, scalar, Conv2d, ConvTranspose2d, ParamStore};
use crate::rng::{self, tag};
use crate::train::{check_loss, BatchSampler, TrainReport};

pub const CHECKPOINT_KIND: &str = "deepjscc";
const TRAIN_USER: u64 = u64::MAX - 2;
const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepJsccArch {
    pub hidden: [usize; 4],
    pub compression_ratio: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepJsccConfig {
    pub hidden: [usize; 4],
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

impl Default for DeepJsccConfig {
    fn default() -> Self {
        Self {
            hidden: [16, 32, 32, 32],
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

impl DeepJsccConfig {
    pub fn arch(&self) -> DeepJsccArch {
        DeepJsccArch {
            hidden: self.hidden,
            compression_ratio: self.compression_ratio,
            height: self.height,
            width: self.width,
            seed: self.seed,
        }
    }
}

impl DeepJsccArch {
    /// Channels of the final encoder map; `k = c (H/4) (W/4)`.
    pub fn latent_channels(&self) -> Result<usize> {
        let n = 3 * self.height * self.width;
        let k = (self.compression_ratio * n as f64).round() as usize;
        let cells = (self.height / 4) * (self.width / 4);
        if self.height % 4 != 0 || self.width % 4 != 0 || cells == 0 || k % cells != 0 || k == 0 || k % 2 != 0 {
            return Err(Error::Config(format!(
                "channel length {k} cannot be laid out on a {}x{} latent grid",
                self.height / 4,
                self.width / 4
            )));
        }
        Ok(k / cells)
    }

    pub fn channel_len(&self) -> Result<usize> {
        Ok(self.latent_channels()? * (self.height / 4) * (self.width / 4))
    }
}

/// Five strided convolutions down, five transposed convolutions up.
pub struct DeepJscc {
    arch: DeepJsccArch,
    store: ParamStore,
    enc: Vec<Conv2d>,
    dec: Vec<ConvTranspose2d>,
}

impl std::fmt::Debug for DeepJscc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeepJscc").field("arch", &self.arch).finish()
    }
}

impl DeepJscc {
    pub fn new(arch: &DeepJsccArch) -> Result<Self> {
        let c = arch.latent_channels()?;
        let [h0, h1, h2, h3] = arch.hidden;
        let mut store = ParamStore::new(arch.seed ^ 0xd33f);
        let mut root = store.root();
        let mut e = root.pp("encoder");
        let enc_spec = [(3, h0, 2), (h0, h1, 2), (h1, h2, 1), (h2, h3, 1), (h3, c, 1)];
        let enc = enc_spec
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, s))| Conv2d::new(&mut e.pp(format!("conv{i}")), ci, co, 5, s, 2, true))
            .collect::<Result<Vec<_>>>()?;
        let mut d = root.pp("decoder");
        let dec_spec = [(c, h3, 1, 0), (h3, h2, 1, 0), (h2, h1, 1, 0), (h1, h0, 2, 1), (h0, 3, 2, 1)];
        let dec = dec_spec
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, s, op))| ConvTranspose2d::new(&mut d.pp(format!("deconv{i}")), ci, co, 5, s, 2, op))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            arch: arch.clone(),
            store,
            enc,
            dec,
        })
    }

    pub fn arch(&self) -> &DeepJsccArch {
        &self.arch
    }

    pub fn vars(&self) -> Vec<Var> {
        self.store.vars()
    }

    /// `(N, 3, H, W) -> (N, k)`, before power normalisation.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = images.dims4()?;
        if (h, w) != (self.arch.height, self.arch.width) {
            return Err(shape_err(format!("built for {}x{}, got {h}x{w}", self.arch.height, self.arch.width)));
        }
        let mut x = images.clone();
        for (i, conv) in self.enc.iter().enumerate() {
            x = conv.forward(&x)?;
            if i + 1 < self.enc.len() {
                x = leaky_relu(&x, SLOPE)?;
            }
        }
        Ok(x.reshape((n, ()))?)
    }

    /// `(N, k) -> (N, 3, H, W)` in `[0, 1]`.
    pub fn decode(&self, f_hat: &Tensor) -> Result<Tensor> {
        let n = f_hat.dim(0)?;
        let c = self.arch.latent_channels()?;
        let mut x = f_hat.reshape((n, c, self.arch.height / 4, self.arch.width / 4))?;
        for (i, deconv) in self.dec.iter().enumerate() {
            x = deconv.forward(&x)?;
            if i + 1 < self.dec.len() {
                x = leaky_relu(&x, SLOPE)?;
            }
        }
        Ok(candle_nn::ops::sigmoid(&x)?)
    }

    pub fn transmit(&self, images: &ImageTensor, channel: &ChannelConfig, keys: &[StreamKey]) -> Result<ImageTensor> {
        let f = self.encode(images.tensor())?;
        let f_hat = link::transmit_rows(&f, channel, keys)?;
        ImageTensor::from_clamped(&self.decode(&f_hat)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_params(CHECKPOINT_KIND, &self.arch, &[&self.store])?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let arch: DeepJsccArch = ck.config_as()?;
        ck.expect(CHECKPOINT_KIND, &arch)?;
        let m = Self::new(&arch)?;
        ck.restore(&m.store, "")?;
        Ok(m)
    }
}

/// End-to-end MSE training with per-batch SNR drawn from the training range;
/// batches cycle through `kinds`.
pub fn train_deepjscc(model: &DeepJscc, data: &ImageTensor, config: &DeepJsccConfig, kinds: &[ChannelKind]) -> Result<TrainReport> {
    if kinds.is_empty() {
        return Err(Error::Config("no training channel given".into()));
    }
    let vars = model.vars();
    let mut opt = adam(vars.clone(), config.learning_rate)?;
    let mut sampler = BatchSampler::new(data.len(), config.batch_size, rng::derive_seed(config.seed, &[tag::SHUFFLE, 2]))?;
    let mut snr_rng = rng::substream(config.seed, &[tag::TRAIN_SNR, 2]);
    let channel_seed = rng::derive_seed(config.seed, &[tag::NOISE, 2]);
    let (lo, hi) = config.train_snr_db;
    let mut report = TrainReport::default();
    for step in 0..config.steps {
        let (idx, epoch_done) = sampler.next_batch();
        let batch = data.select(&idx)?;
        let snr = if hi > lo { snr_rng.random_range(lo..=hi) } else { lo };
        let channel = ChannelConfig::new(kinds[step % kinds.len()], snr, channel_seed);
        let keys = StreamKey::range(TRAIN_USER, (step * config.batch_size) as u64, idx.len());
        let f = model.encode(batch.tensor())?;
        let out = model.decode(&link::training_channel(&f, &channel, &keys)?)?;
        let loss = (batch.tensor() - &out)?.sqr()?.mean_all()?;
        let value = check_loss(step, scalar(&loss)?)?;
        clipped_step(&mut opt, &vars, &loss, config.grad_clip)?;
        report.record(value, epoch_done);
    }
    Ok(report.finish())
}
