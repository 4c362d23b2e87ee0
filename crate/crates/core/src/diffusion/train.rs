use candle_core::Tensor;
use rand::Rng;
use serde::Serialize;

use crate::channel::{ChannelConfig, ChannelKind};
use crate::codec::SwinJscc;
use crate::error::{shape_err, Result};
use crate::image::ImageTensor;
use crate::link::StreamKey;
use crate::nn::{adam, clipped_step, scalar};
use crate::rng::{self, standard_normal_vec, tag};
use crate::train::{check_loss, BatchSampler, TrainReport};

use super::schedule::{forward_diffuse, reverse_chain};
use super::{SftConfig, SftModel};

const SFT_USER: u64 = u64::MAX - 1;
const STAGE2_OFFSET: u64 = 1 << 40;

/// `L_pre = mean |I - Î|`.
pub fn pretrain_loss(i: &Tensor, i_hat: &Tensor) -> Result<Tensor> {
    if i.dims() != i_hat.dims() {
        return Err(shape_err(format!("loss inputs {:?} vs {:?}", i.dims(), i_hat.dims())));
    }
    Ok((i - i_hat)?.abs()?.mean_all()?)
}

/// `L_diff = mean |Ẑ - Z_0|`.
pub fn diffusion_loss(z_hat: &Tensor, z0: &Tensor) -> Result<Tensor> {
    if z_hat.dims() != z0.dims() {
        return Err(shape_err(format!("prior shapes {:?} vs {:?}", z_hat.dims(), z0.dims())));
    }
    Ok((z_hat - z0)?.abs()?.mean_all()?)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SftTrainReport {
    pub total: TrainReport,
    pub l_pre: Vec<f64>,
    pub l_diff: Vec<f64>,
}

/// Draws a training batch: clean crops and their decoded versions after a
/// channel at an SNR drawn from the configured range.
struct Feeder<'a> {
    codec: &'a SwinJscc,
    data: &'a ImageTensor,
    sampler: BatchSampler,
    rng: rand_chacha::ChaCha8Rng,
    kinds: Vec<ChannelKind>,
    snr: (f64, f64),
    channel_seed: u64,
    patch: usize,
    offset: u64,
    drawn: u64,
    batches: usize,
}

impl<'a> Feeder<'a> {
    fn new(codec: &'a SwinJscc, data: &'a ImageTensor, config: &SftConfig, kinds: &[ChannelKind], stage: u64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(crate::error::Error::Config("no training channel given".into()));
        }
        let (h, w) = (data.height(), data.width());
        let a = codec.arch();
        if (h, w) != (a.height, a.width) {
            return Err(shape_err(format!("codec expects {}x{} images, data is {h}x{w}", a.height, a.width)));
        }
        if config.patch_size > h.min(w) {
            return Err(shape_err(format!("patch {} larger than {h}x{w} images", config.patch_size)));
        }
        Ok(Self {
            codec,
            data,
            sampler: BatchSampler::new(data.len(), config.batch_size, rng::derive_seed(config.seed, &[tag::SHUFFLE, stage]))?,
            rng: rng::substream(config.seed, &[tag::TRAIN_SNR, stage]),
            kinds: kinds.to_vec(),
            snr: config.train_snr_db,
            channel_seed: rng::derive_seed(config.seed, &[tag::NOISE, stage]),
            patch: config.patch_size,
            offset: stage * STAGE2_OFFSET,
            drawn: 0,
            batches: 0,
        })
    }

    fn next(&mut self) -> Result<(Tensor, Tensor, bool)> {
        let (idx, epoch_done) = self.sampler.next_batch();
        let clean = self.data.select(&idx)?;
        let (lo, hi) = self.snr;
        let snr = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
        let kind = self.kinds[self.batches % self.kinds.len()];
        self.batches += 1;
        let channel = ChannelConfig::new(kind, snr, self.channel_seed);
        let keys = StreamKey::range(SFT_USER, self.offset + self.drawn, idx.len());
        self.drawn += idx.len() as u64;
        let decoded = self.codec.transmit(&clean, &channel, &keys)?.tensor().detach();
        let (h, w) = (clean.height(), clean.width());
        let (y, x) = (
            self.rng.random_range(0..=h - self.patch),
            self.rng.random_range(0..=w - self.patch),
        );
        let crop = |t: &Tensor| -> Result<Tensor> { Ok(t.narrow(2, y, self.patch)?.narrow(3, x, self.patch)?) };
        Ok((crop(clean.tensor())?, crop(&decoded)?, epoch_done))
    }
}

/// Stage one: N1 sees both the decoded and the clean image and N2 learns to
/// restore with that prior, under `L_pre`.
pub fn pretrain_stage(
    model: &SftModel,
    codec: &SwinJscc,
    data: &ImageTensor,
    config: &SftConfig,
    kinds: &[ChannelKind],
) -> Result<TrainReport> {
    config.validate()?;
    let vars = model.vars(&["n1.", "n2."]);
    let mut opt = adam(vars.clone(), config.learning_rate)?;
    let mut feed = Feeder::new(codec, data, config, kinds, 0)?;
    let mut report = TrainReport::default();
    for step in 0..config.pretrain_steps {
        let (clean, decoded, epoch_done) = feed.next()?;
        let z = model.prior().extract_pair(&decoded, &clean)?;
        let restored = model.restorer().forward(&decoded, &z)?;
        let loss = pretrain_loss(&clean, &restored)?;
        let value = check_loss(step, scalar(&loss)?)?;
        clipped_step(&mut opt, &vars, &loss, config.grad_clip)?;
        report.record(value, epoch_done);
        if step % 50 == 0 {
            tracing::debug!(step, loss = value, "sft pretrain step");
        }
    }
    Ok(report.finish())
}

/// Stage two: forward-diffuse the stage-one prior to `Z_T`, run the full
/// reverse chain from `Ẑ_T = Z_T` conditioned on `D = N1(Ŝ)`, restore with
/// the estimate and minimise `L_pre + L_diff`. The target `Z_0` is held
/// fixed within each step.
pub fn train_diffusion_stage(
    model: &SftModel,
    codec: &SwinJscc,
    data: &ImageTensor,
    config: &SftConfig,
    kinds: &[ChannelKind],
) -> Result<SftTrainReport> {
    config.validate()?;
    let vars = if config.freeze_pretrained {
        model.vars(&["denoiser."])
    } else {
        model.vars(&["denoiser.", "n1.", "n2."])
    };
    let mut opt = adam(vars.clone(), config.learning_rate)?;
    let mut feed = Feeder::new(codec, data, config, kinds, 1)?;
    let mut noise_rng = rng::substream(config.seed, &[tag::DIFFUSION, 1]);
    let schedule = model.schedule();
    let t_max = schedule.steps();
    let mut report = SftTrainReport::default();
    for step in 0..config.diffusion_steps {
        let (clean, decoded, epoch_done) = feed.next()?;
        let z0 = model.prior().extract_pair(&decoded, &clean)?.detach();
        let (n, d) = z0.dims2()?;
        let noise = Tensor::from_vec(standard_normal_vec(&mut noise_rng, n * d), (n, d), z0.device())?
            .to_dtype(z0.dtype())?;
        let z_t = forward_diffuse(&z0, schedule, t_max, &noise)?;
        let cond = model.prior().extract_single(&decoded)?;
        let z_hat = reverse_chain(&z_t, &cond, schedule, model.denoiser())?;
        let restored = model.restorer().forward(&decoded, &z_hat)?;
        let l_pre = pretrain_loss(&clean, &restored)?;
        let l_diff = diffusion_loss(&z_hat, &z0)?;
        let loss = (&l_pre + &l_diff)?;
        let value = check_loss(step, scalar(&loss)?)?;
        clipped_step(&mut opt, &vars, &loss, config.grad_clip)?;
        report.l_pre.push(scalar(&l_pre)?);
        report.l_diff.push(scalar(&l_diff)?);
        report.total.record(value, epoch_done);
        if step % 50 == 0 {
            tracing::debug!(step, loss = value, "sft diffusion step");
        }
    }
    report.total = report.total.finish();
    Ok(report)
}
