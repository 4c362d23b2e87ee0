//! Physical channel: average-power normalisation, AWGN, and flat Rayleigh
//! fading with zero-forcing equalisation under perfect CSI.
//!
//! Signals use a real-pair layout: entries `2i` and `2i + 1` are the real and
//! imaginary parts of complex sample `i`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::{self, tag};

/// Below this magnitude a fading coefficient is treated as a deep fade.
pub const DEEP_FADE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Awgn => "awgn",
            Self::Rayleigh => "rayleigh",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "awgn" => Ok(Self::Awgn),
            "rayleigh" => Ok(Self::Rayleigh),
            other => Err(Error::Config(format!("unknown channel kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// Average power per complex sample.
    pub power: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, snr_db: f64, seed: u64) -> Self {
        Self {
            kind,
            snr_db,
            power: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Config("channel.snr_db must be finite".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config("channel.power must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_power(&self) -> f64 {
        snr_to_noise_power(self.snr_db, self.power)
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        Self { snr_db, ..*self }
    }

    /// Draws the channel state for one codeword of `complex_len` samples.
    ///
    /// CSI and noise come from separate substreams of `(seed, stream)`, so a
    /// longer codeword on the same stream shares its prefix with a shorter one
    /// and all systems evaluated on the same stream see the same channel.
    pub fn realize(&self, complex_len: usize, stream: &[u64]) -> Realization {
        let mut path = stream.to_vec();
        path.push(tag::NOISE);
        let mut noise_rng = rng::substream(self.seed, &path);
        let unit_noise = rng::standard_normal_vec(&mut noise_rng, 2 * complex_len);
        let csi = match self.kind {
            ChannelKind::Awgn => None,
            ChannelKind::Rayleigh => {
                *path.last_mut().unwrap() = tag::CSI;
                let mut csi_rng = rng::substream(self.seed, &path);
                Some(sample_csi_with(complex_len, &mut csi_rng))
            }
        };
        Realization { csi, unit_noise }
    }

    /// Sends `f` through the channel and equalises it with the true CSI.
    pub fn transmit(&self, f: &ChannelSignal, stream: &[u64]) -> Result<Transmission> {
        self.validate()?;
        let real = self.realize(f.complex_len(), stream);
        real.apply(f, self.noise_power())
    }
}

/// Channel state for one codeword: optional fading vector and unit-variance
/// noise (one `N(0, 1)` draw per real component).
#[derive(Debug, Clone)]
pub struct Realization {
    pub csi: Option<Vec<Complex64>>,
    pub unit_noise: Vec<f64>,
}

impl Realization {
    pub fn noise(&self, noise_power: f64) -> Vec<f64> {
        let std = (noise_power / 2.0).sqrt();
        self.unit_noise.iter().map(|n| n * std).collect()
    }

    pub fn apply(&self, f: &ChannelSignal, noise_power: f64) -> Result<Transmission> {
        if self.unit_noise.len() != f.len() {
            return Err(shape_err(format!(
                "realisation covers {} reals, signal has {}",
                self.unit_noise.len(),
                f.len()
            )));
        }
        let noise = self.noise(noise_power);
        match &self.csi {
            None => {
                let received = add_noise(f, &noise);
                Ok(Transmission {
                    equalized: received.clone(),
                    received,
                    noise_var: vec![noise_power; f.complex_len()],
                    deep_fades: Vec::new(),
                })
            }
            Some(h) => {
                let faded = apply_csi(f, h)?;
                let received = add_noise(&faded, &noise);
                let eq = equalize(&received, h)?;
                let noise_var = h
                    .iter()
                    .map(|hi| noise_power / hi.norm_sqr().max(DEEP_FADE_EPS))
                    .collect();
                Ok(Transmission {
                    received,
                    equalized: eq.signal,
                    noise_var,
                    deep_fades: eq.deep_fades,
                })
            }
        }
    }

    /// The additive disturbance left after equalisation: `n` for AWGN and
    /// `n / h` for fading. Adding this to the transmitted signal equals
    /// equalising the received signal, up to rounding.
    pub fn equalized_noise(&self, noise_power: f64) -> Vec<f64> {
        let noise = self.noise(noise_power);
        match &self.csi {
            None => noise,
            Some(h) => {
                let mut out = vec![0.0; noise.len()];
                for (i, hi) in h.iter().enumerate() {
                    let n = Complex64::new(noise[2 * i], noise[2 * i + 1]);
                    let q = zf_divide(n, *hi).0;
                    out[2 * i] = q.re;
                    out[2 * i + 1] = q.im;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transmission {
    pub received: ChannelSignal,
    pub equalized: ChannelSignal,
    /// Post-equalisation noise variance of each complex sample.
    pub noise_var: Vec<f64>,
    pub deep_fades: Vec<usize>,
}

/// Real-pair complex baseband vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal {
    data: Vec<f64>,
}

impl ChannelSignal {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() % 2 != 0 {
            return Err(shape_err(format!(
                "real-pair signal needs an even length, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel signal"));
        }
        Ok(Self { data })
    }

    pub fn from_complex(samples: &[Complex64]) -> Result<Self> {
        Self::new(samples.iter().flat_map(|c| [c.re, c.im]).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn complex_len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> Complex64 {
        Complex64::new(self.data[2 * i], self.data[2 * i + 1])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        (0..self.complex_len()).map(|i| self.sample(i)).collect()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Average power per complex sample.
    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.energy() / self.complex_len() as f64
        }
    }
}

/// Scales `f` so its average power per complex sample equals `power`.
/// The zero vector is returned unchanged.
pub fn power_normalize(f: &ChannelSignal, power: f64) -> Result<ChannelSignal> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Config("power budget must be positive".into()));
    }
    let energy = f.energy();
    if !energy.is_finite() {
        return Err(Error::NonFinite("channel signal"));
    }
    if energy == 0.0 {
        return Ok(f.clone());
    }
    let scale = (power * f.complex_len() as f64 / energy).sqrt();
    ChannelSignal::new(f.data.iter().map(|v| v * scale).collect())
}

/// Noise power per complex sample for a given SNR in dB.
pub fn snr_to_noise_power(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

fn add_noise(f: &ChannelSignal, noise: &[f64]) -> ChannelSignal {
    ChannelSignal {
        data: f.data.iter().zip(noise).map(|(a, b)| a + b).collect(),
    }
}

/// AWGN with per-complex-sample variance `noise_power`, drawn from `rng`.
pub fn transmit_awgn_with<R: Rng + ?Sized>(
    f: &ChannelSignal,
    noise_power: f64,
    rng: &mut R,
) -> ChannelSignal {
    let std = (noise_power / 2.0).sqrt();
    ChannelSignal {
        data: f
            .data
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + std * z
            })
            .collect(),
    }
}

/// `f + n` with `n ~ CN(0, sigma^2 I)` drawn from the config seed.
pub fn transmit_awgn(f: &ChannelSignal, config: &ChannelConfig) -> Result<ChannelSignal> {
    config.validate()?;
    let mut rng = rng::substream(config.seed, &[tag::NOISE]);
    Ok(transmit_awgn_with(f, config.noise_power(), &mut rng))
}

fn sample_csi_with<R: Rng + ?Sized>(complex_len: usize, rng: &mut R) -> Vec<Complex64> {
    let std = std::f64::consts::FRAC_1_SQRT_2;
    (0..complex_len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * std, im * std)
        })
        .collect()
}

/// i.i.d. `CN(0, 1)` fading coefficients, so each `|h_i|` is Rayleigh with
/// scale `1/sqrt(2)`.
pub fn sample_csi(complex_len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = rng::substream(seed, &[tag::CSI]);
    sample_csi_with(complex_len, &mut rng)
}

fn apply_csi(f: &ChannelSignal, h: &[Complex64]) -> Result<ChannelSignal> {
    if h.len() != f.complex_len() {
        return Err(shape_err(format!(
            "CSI has {} entries, signal has {} complex samples",
            h.len(),
            f.complex_len()
        )));
    }
    ChannelSignal::from_complex(
        &h.iter()
            .enumerate()
            .map(|(i, hi)| hi * f.sample(i))
            .collect::<Vec<_>>(),
    )
}

/// `h ⊙ f + n` with noise drawn from the config seed.
pub fn transmit_fading(
    f: &ChannelSignal,
    h: &[Complex64],
    config: &ChannelConfig,
) -> Result<ChannelSignal> {
    config.validate()?;
    let faded = apply_csi(f, h)?;
    let mut rng = rng::substream(config.seed, &[tag::NOISE]);
    Ok(transmit_awgn_with(&faded, config.noise_power(), &mut rng))
}

#[derive(Debug, Clone)]
pub struct Equalized {
    pub signal: ChannelSignal,
    /// Indices of samples whose coefficient fell below [`DEEP_FADE_EPS`] and
    /// were equalised with the regularised inverse instead.
    pub deep_fades: Vec<usize>,
}

fn zf_divide(y: Complex64, h: Complex64) -> (Complex64, bool) {
    if h.norm() < DEEP_FADE_EPS {
        (y * h.conj() / (h.norm_sqr() + DEEP_FADE_EPS), true)
    } else {
        (y / h, false)
    }
}

/// Zero-forcing equalisation with perfect CSI: `f̃_i = f̂_i / h_i`.
pub fn equalize(f_hat: &ChannelSignal, h: &[Complex64]) -> Result<Equalized> {
    if h.len() != f_hat.complex_len() {
        return Err(shape_err(format!(
            "CSI has {} entries, signal has {} complex samples",
            h.len(),
            f_hat.complex_len()
        )));
    }
    let mut out = Vec::with_capacity(f_hat.len());
    let mut deep_fades = Vec::new();
    for (i, hi) in h.iter().enumerate() {
        let (q, flagged) = zf_divide(f_hat.sample(i), *hi);
        if flagged {
            deep_fades.push(i);
        }
        out.push(q.re);
        out.push(q.im);
    }
    Ok(Equalized {
        signal: ChannelSignal::new(out)?,
        deep_fades,
    })
}
