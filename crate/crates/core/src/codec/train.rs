use candle_core::Tensor;
use rand::Rng;

use crate::channel::{ChannelConfig, ChannelKind};
use crate::error::{shape_err, Result};
use crate::image::ImageTensor;
use crate::link::{self, StreamKey};
use crate::nn::{adam, clipped_step, scalar};
use crate::rng::{self, tag};
use crate::train::{check_loss, BatchSampler, TrainReport};

use super::{CodecConfig, SwinJscc};

/// Stream owner used for training-time channel draws, kept apart from the
/// user ids used at evaluation.
pub(crate) const TRAIN_USER: u64 = u64::MAX;

/// `L_dec = (1/l) Σ (I - Î)²`.
pub fn decoder_loss(i: &Tensor, i_hat: &Tensor) -> Result<Tensor> {
    if i.dims() != i_hat.dims() {
        return Err(shape_err(format!("loss inputs {:?} vs {:?}", i.dims(), i_hat.dims())));
    }
    Ok((i - i_hat)?.sqr()?.mean_all()?)
}

/// End-to-end training through the differentiable channel. Each batch draws
/// its SNR uniformly from `config.train_snr_db`; batches cycle through
/// `kinds`.
pub fn train_codec(
    model: &SwinJscc,
    data: &ImageTensor,
    config: &CodecConfig,
    kinds: &[ChannelKind],
) -> Result<TrainReport> {
    config.validate()?;
    if kinds.is_empty() {
        return Err(crate::error::Error::Config("no training channel given".into()));
    }
    let vars = model.trainable_vars();
    let mut opt = adam(vars.clone(), config.learning_rate)?;
    let mut sampler = BatchSampler::new(data.len(), config.batch_size, rng::derive_seed(config.seed, &[tag::SHUFFLE]))?;
    let mut snr_rng = rng::substream(config.seed, &[tag::TRAIN_SNR]);
    let channel_seed = rng::derive_seed(config.seed, &[tag::NOISE]);
    let (lo, hi) = config.train_snr_db;
    let mut report = TrainReport::default();
    for step in 0..config.steps {
        let (idx, epoch_done) = sampler.next_batch();
        let batch = data.select(&idx)?;
        let snr = if hi > lo { snr_rng.random_range(lo..=hi) } else { lo };
        let channel = ChannelConfig::new(kinds[step % kinds.len()], snr, channel_seed);
        let first = (step * config.batch_size) as u64;
        let keys = StreamKey::range(TRAIN_USER, first, idx.len());

        let s = model.encode_tensor(batch.tensor())?;
        let f = model.channel_encode(&s)?;
        let f_hat = link::training_channel(&f, &channel, &keys)?;
        let out = model.decode_tensor(&model.channel_decode(&f_hat)?)?;
        let loss = decoder_loss(batch.tensor(), &out)?;
        let value = check_loss(step, scalar(&loss)?)?;
        clipped_step(&mut opt, &vars, &loss, config.grad_clip)?;
        report.record(value, epoch_done);
        if step % 50 == 0 {
            tracing::debug!(step, loss = value, snr, "codec step");
        }
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn loss_closed_forms() {
        let ones = Tensor::ones((2, 5), candle_core::DType::F32, &Device::Cpu).unwrap();
        let zeros = ones.zeros_like().unwrap();
        assert_eq!(scalar(&decoder_loss(&ones, &zeros).unwrap()).unwrap(), 1.0);
        assert_eq!(scalar(&decoder_loss(&ones, &ones).unwrap()).unwrap(), 0.0);
        assert!(decoder_loss(&ones, &Tensor::ones(3, candle_core::DType::F32, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn loss_matches_elementwise_sum() {
        let a: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..10).map(|i| (i as f64 * 0.91).cos()).collect();
        let oracle = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 10.0;
        let ta = Tensor::new(a.as_slice(), &Device::Cpu).unwrap();
        let tb = Tensor::new(b.as_slice(), &Device::Cpu).unwrap();
        let got = scalar(&decoder_loss(&ta, &tb).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }
}
