//! Linear-β schedule, closed-form forward diffusion and the deterministic
//! reverse update on compact prior vectors `(N, D)`.

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, Error, Result};
use crate::link::StreamKey;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// `β_t` linear from `beta_lo` to `beta_hi` over `t = 1..=T`; `T = 1`
    /// gives `[beta_hi]`.
    pub fn linear(steps: usize, beta_lo: f64, beta_hi: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(0.0 < beta_lo && beta_lo < beta_hi && beta_hi < 1.0) {
            return Err(Error::Config(format!(
                "beta range ({beta_lo}, {beta_hi}) must satisfy 0 < lo < hi < 1"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_hi]
        } else {
            (0..steps)
                .map(|i| beta_lo + i as f64 * (beta_hi - beta_lo) / (steps - 1) as f64)
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Config(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `β_t`, 1-based.
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// `Z_t = √ᾱ_t Z_0 + √(1-ᾱ_t) ε`.
pub fn forward_diffuse(z0: &Tensor, schedule: &DiffusionSchedule, t: usize, noise: &Tensor) -> Result<Tensor> {
    schedule.check_t(t)?;
    if z0.dims() != noise.dims() {
        return Err(shape_err(format!("Z_0 {:?} vs noise {:?}", z0.dims(), noise.dims())));
    }
    let ab = schedule.alpha_bar_at(t);
    Ok(((z0 * ab.sqrt())? + (noise * (1.0 - ab).sqrt())?)?)
}

/// One step of the Markov chain: `Z_t = √α_t Z_{t-1} + √β_t ε`.
pub fn forward_step(z_prev: &Tensor, schedule: &DiffusionSchedule, t: usize, noise: &Tensor) -> Result<Tensor> {
    schedule.check_t(t)?;
    Ok(((z_prev * schedule.alpha_at(t).sqrt())? + (noise * schedule.beta_at(t).sqrt())?)?)
}

/// Noise estimator `ε_θ(Ẑ_t, t, D)`.
pub trait NoisePredictor {
    fn predict(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor>;
}

/// `Ẑ_{t-1} = (Ẑ_t - (1-α_t)/√(1-ᾱ_t) ε_θ) / √α_t`, no added noise.
pub fn reverse_step(
    z_t: &Tensor,
    t: usize,
    cond: &Tensor,
    schedule: &DiffusionSchedule,
    denoiser: &dyn NoisePredictor,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    let eps = denoiser.predict(z_t, t, cond)?;
    if eps.dims() != z_t.dims() {
        return Err(shape_err(format!("noise estimate {:?} for Z_t {:?}", eps.dims(), z_t.dims())));
    }
    let a = schedule.alpha_at(t);
    let coef = (1.0 - a) / (1.0 - schedule.alpha_bar_at(t)).sqrt();
    Ok(((z_t - (eps * coef)?)? / a.sqrt())?)
}

/// Runs `t = T..1` from `z_T`.
pub fn reverse_chain(
    z_big_t: &Tensor,
    cond: &Tensor,
    schedule: &DiffusionSchedule,
    denoiser: &dyn NoisePredictor,
) -> Result<Tensor> {
    let mut z = z_big_t.clone();
    for t in (1..=schedule.steps()).rev() {
        z = reverse_step(&z, t, cond, schedule, denoiser)?;
    }
    Ok(z)
}

/// Starting noise `Z_T ~ N(0, I)` for each image, drawn from the stream of
/// its key so a result never depends on batch composition.
pub fn initial_noise(keys: &[StreamKey], dim: usize, seed: u64, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::with_capacity(keys.len() * dim);
    for key in keys {
        let mut r = rng::substream(seed, &[key.user, key.image, tag::DIFFUSION]);
        data.extend(rng::standard_normal_vec(&mut r, dim));
    }
    Ok(Tensor::from_vec(data, (keys.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Sampling at test time: fresh `Z_T`, then the full reverse chain
/// conditioned on `D`.
pub fn reverse_infer(
    cond: &Tensor,
    schedule: &DiffusionSchedule,
    denoiser: &dyn NoisePredictor,
    seed: u64,
    keys: &[StreamKey],
) -> Result<Tensor> {
    let (n, dim) = cond.dims2()?;
    if keys.len() != n {
        return Err(shape_err(format!("{n} conditions but {} stream keys", keys.len())));
    }
    let z = initial_noise(keys, dim, seed, cond.dtype())?;
    reverse_chain(&z, cond, schedule, denoiser)
}
