//! Semantic fine-tuning at the receiver: a prior extractor (N1), a
//! prior-modulated restoration U-Net (N2) and a short diffusion chain that
//! estimates the prior from the decoded image alone.

pub mod denoiser;
pub mod pixel;
pub mod prior;
pub mod restorer;
pub mod schedule;
mod train;

use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::link::StreamKey;
use crate::nn::ParamStore;

pub use denoiser::Denoiser;
pub use pixel::{depth_to_space, space_to_depth};
pub use prior::PriorExtractor;
pub use restorer::{DynamicBlock, Restorer, RestorerShape};
pub use schedule::{
    forward_diffuse, forward_step, reverse_chain, reverse_infer, reverse_step, DiffusionSchedule, NoisePredictor,
};
pub use train::{diffusion_loss, pretrain_loss, pretrain_stage, train_diffusion_stage, SftTrainReport};

/// Checkpoint kinds of the two training stages.
pub const KIND_PRETRAINED: &str = "sft-m1";
pub const KIND_DIFFUSION: &str = "sft-m2";

/// What a checkpoint's hash covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftArch {
    pub channels: usize,
    pub heads: [usize; 4],
    pub blocks: [usize; 4],
    pub ffn_expansion: usize,
    pub beta: (f64, f64),
    pub timesteps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub channels: usize,
    pub heads: [usize; 4],
    pub blocks: [usize; 4],
    pub ffn_expansion: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: (f64, f64),
    pub timesteps: usize,
    pub pretrain_steps: usize,
    pub diffusion_steps: usize,
    /// SNR range for the channel that produces training inputs.
    pub train_snr_db: (f64, f64),
    /// Keep N1 and N2 fixed during the diffusion stage.
    pub freeze_pretrained: bool,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            channels: 96,
            heads: [1, 2, 4, 8],
            blocks: [3, 5, 6, 6],
            ffn_expansion: 2,
            patch_size: 32,
            batch_size: 16,
            learning_rate: 2e-4,
            beta: (0.10, 0.99),
            timesteps: 4,
            pretrain_steps: 2000,
            diffusion_steps: 2000,
            train_snr_db: (0.0, 15.0),
            freeze_pretrained: false,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn arch(&self) -> SftArch {
        SftArch {
            channels: self.channels,
            heads: self.heads,
            blocks: self.blocks,
            ffn_expansion: self.ffn_expansion,
            beta: self.beta,
            timesteps: self.timesteps,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        if self.patch_size == 0 || self.patch_size % 8 != 0 {
            return Err(Error::Config(format!("patch size {} must be a multiple of 8", self.patch_size)));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        let (lo, hi) = self.train_snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("training SNR range ({lo}, {hi}) is invalid")));
        }
        Ok(())
    }
}

impl SftArch {
    pub fn prior_dim(&self) -> usize {
        4 * self.channels
    }

    pub fn restorer_shape(&self) -> RestorerShape {
        RestorerShape {
            channels: self.channels,
            heads: self.heads,
            blocks: self.blocks,
            ffn_expansion: self.ffn_expansion,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.timesteps, self.beta.0, self.beta.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.ffn_expansion == 0 {
            return Err(Error::Config("channel width and FFN expansion must be positive".into()));
        }
        for (l, &h) in self.heads.iter().enumerate() {
            let width = self.channels << l;
            if h == 0 || width % h != 0 || (l == 0 && (2 * self.channels) % h != 0) {
                return Err(Error::Config(format!("level {l} width {width} not divisible by {h} heads")));
            }
        }
        self.schedule().map(|_| ())
    }
}

/// N1, N2 and the denoiser with their schedule.
pub struct SftModel {
    arch: SftArch,
    store: ParamStore,
    schedule: DiffusionSchedule,
    n1: PriorExtractor,
    n2: Restorer,
    denoiser: Denoiser,
}

impl std::fmt::Debug for SftModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SftModel")
            .field("arch", &self.arch)
            .field("params", &self.store.num_elements())
            .finish()
    }
}

impl SftModel {
    pub fn new(arch: &SftArch) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new(arch.seed ^ 0x5f7);
        let mut root = store.root();
        let n1 = PriorExtractor::new(&mut root.pp("n1"), arch.channels)?;
        let n2 = Restorer::new(&mut root.pp("n2"), &arch.restorer_shape())?;
        let d = arch.prior_dim();
        let denoiser = Denoiser::new(&mut root.pp("denoiser"), d, arch.timesteps, 4 * d)?;
        // N2 starts as the identity on Ŝ
        store.fill("n2.output.", 0.0)?;
        Ok(Self {
            arch: arch.clone(),
            schedule: arch.schedule()?,
            store,
            n1,
            n2,
            denoiser,
        })
    }

    pub fn arch(&self) -> &SftArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn prior(&self) -> &PriorExtractor {
        &self.n1
    }

    pub fn restorer(&self) -> &Restorer {
        &self.n2
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub(crate) fn vars(&self, prefixes: &[&str]) -> Vec<Var> {
        self.store.vars_matching(prefixes)
    }

    /// Restoration with a known prior, `Î = N2(Ŝ, Z)`.
    pub fn restore(&self, s_hat: &ImageTensor, z: &Tensor) -> Result<ImageTensor> {
        ImageTensor::new(self.n2.forward(s_hat.tensor(), z)?)
    }

    /// Estimates the prior from `Ŝ` with the diffusion chain, then restores.
    /// Only the decoded images are consumed.
    pub fn refine(&self, s_hat: &ImageTensor, seed: u64, keys: &[StreamKey]) -> Result<ImageTensor> {
        let d = self.n1.extract_single(s_hat.tensor())?;
        let z = reverse_infer(&d, &self.schedule, &self.denoiser, seed, keys)?;
        self.restore(s_hat, &z)
    }

    pub fn checkpoint(&self, kind: &str) -> Result<Checkpoint> {
        Checkpoint::from_params(kind, &self.arch, &[&self.store])
    }

    pub fn save(&self, kind: &str, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint(kind)?.save(path)
    }

    pub fn load(kind: &str, path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let arch: SftArch = ck.config_as()?;
        ck.expect(kind, &arch)?;
        let model = Self::new(&arch)?;
        ck.restore(&model.store, "")?;
        Ok(model)
    }
}
