//! Moves batches of channel vectors produced by the neural transmitters
//! through [`crate::channel`], one codeword per image.

use candle_core::{DType, Device, Tensor};

use crate::channel::{power_normalize, ChannelConfig, ChannelSignal};
use crate::error::Result;

/// Identifies the channel realisation used for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub user: u64,
    pub image: u64,
}

impl StreamKey {
    pub fn new(user: u64, image: u64) -> Self {
        Self { user, image }
    }

    pub fn path(&self) -> [u64; 2] {
        [self.user, self.image]
    }

    /// Keys for a run of images belonging to one user.
    pub fn range(user: u64, first_image: u64, count: usize) -> Vec<StreamKey> {
        (0..count as u64).map(|i| Self::new(user, first_image + i)).collect()
    }
}

/// Differentiable per-row power normalisation of `(N, k)` real-pair vectors
/// to an average power of `power` per complex sample.
pub fn normalize_rows(f: &Tensor, power: f64) -> Result<Tensor> {
    let (_, k) = f.dims2()?;
    let complex_len = (k / 2) as f64;
    let energy = f.sqr()?.sum_keepdim(1)?;
    let scale = ((energy + 1e-12)?.recip()? * (power * complex_len))?.sqrt()?;
    Ok(f.broadcast_mul(&scale)?)
}

/// Normalises, transmits and equalises every row of `f`, using the
/// realisation keyed by the matching entry of `keys`. Returns the equalised
/// rows as `f32`.
pub fn transmit_rows(f: &Tensor, channel: &ChannelConfig, keys: &[StreamKey]) -> Result<Tensor> {
    let (n, k) = f.dims2()?;
    if keys.len() != n {
        return Err(crate::error::shape_err(format!("{n} rows but {} stream keys", keys.len())));
    }
    let rows = f.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut out = Vec::with_capacity(n * k);
    for (row, key) in rows.into_iter().zip(keys) {
        let sig = power_normalize(&ChannelSignal::new(row)?, channel.power)?;
        let tx = channel.transmit(&sig, &key.path())?;
        out.extend(tx.equalized.as_slice().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(out, (n, k), &Device::Cpu)?)
}

/// Training-time channel: normalised rows plus the post-equalisation noise
/// of the realisation for each key. Gradients flow through `f`.
pub fn training_channel(
    f: &Tensor,
    channel: &ChannelConfig,
    keys: &[StreamKey],
) -> Result<Tensor> {
    let (n, k) = f.dims2()?;
    let normalized = normalize_rows(f, channel.power)?;
    let sigma2 = channel.noise_power();
    let mut noise = Vec::with_capacity(n * k);
    for key in keys {
        let real = channel.realize(k / 2, &key.path());
        noise.extend(real.equalized_noise(sigma2).into_iter().map(|v| v as f32));
    }
    let noise = Tensor::from_vec(noise, (n, k), &Device::Cpu)?.to_dtype(f.dtype())?;
    Ok((normalized + noise)?)
}
