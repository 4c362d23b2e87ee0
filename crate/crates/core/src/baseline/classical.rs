//! Separate source/channel coding: JPEG -> LDPC -> 4-QAM -> channel ->
//! demodulation -> BP decoding -> JPEG decoding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelSignal};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::link::StreamKey;

use super::jpeg::{frame, jpeg_decode, jpeg_encode, unframe};
use super::ldpc::LdpcCode;
use super::qam::{qam_demodulate, qam_modulate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub jpeg_quality: u8,
    pub ldpc_blocklength: usize,
    pub ldpc_col_weight: usize,
    pub ldpc_row_weight: usize,
    pub bp_max_iters: usize,
    pub modulation_order: usize,
    pub code_seed: u64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            jpeg_quality: 75,
            ldpc_blocklength: 1024,
            ldpc_col_weight: 3,
            ldpc_row_weight: 6,
            bp_max_iters: 50,
            modulation_order: 4,
            code_seed: 1,
        }
    }
}

impl ClassicalConfig {
    /// Design rate `1 - col/row` of the regular code.
    pub fn ldpc_rate(&self) -> f64 {
        1.0 - self.ldpc_col_weight as f64 / self.ldpc_row_weight as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulation_order != 4 {
            return Err(Error::Config(format!(
                "modulation order {} unsupported, only 4-QAM",
                self.modulation_order
            )));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::Config(format!("jpeg quality {} outside 1..=100", self.jpeg_quality)));
        }
        let r = self.ldpc_rate();
        if !(r > 0.0 && r < 1.0) || self.bp_max_iters == 0 {
            return Err(Error::Config("LDPC rate must lie in (0, 1) and BP needs iterations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecodeStatus {
    Ok,
    ChannelDecodeFailed,
    SourceDecodeFailed,
}

#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    pub image: Option<ImageTensor>,
    /// Channel uses (complex symbols) spent on the image.
    pub symbols: usize,
    pub failed_blocks: usize,
}

impl DecodeOutcome {
    /// The received image, or the mid-grey image when decoding failed.
    pub fn image_or_grey(&self, h: usize, w: usize) -> Result<ImageTensor> {
        match &self.image {
            Some(img) => Ok(img.clone()),
            None => ImageTensor::from_vec(vec![0.5; 3 * h * w], 1, h, w),
        }
    }
}

/// The link with its code built once.
#[derive(Debug, Clone)]
pub struct ClassicalLink {
    config: ClassicalConfig,
    code: LdpcCode,
}

fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)) << (8 - c.len()))
        .collect()
}

impl ClassicalLink {
    pub fn new(config: &ClassicalConfig) -> Result<Self> {
        config.validate()?;
        let code = LdpcCode::regular(
            config.ldpc_blocklength,
            config.ldpc_col_weight,
            config.ldpc_row_weight,
            config.code_seed,
        )?;
        Ok(Self {
            config: config.clone(),
            code,
        })
    }

    pub fn code(&self) -> &LdpcCode {
        &self.code
    }

    pub fn config(&self) -> &ClassicalConfig {
        &self.config
    }

    /// Sends image `i` of `batch` over `channel` using the realisation keyed
    /// by `key`.
    pub fn transmit(&self, batch: &ImageTensor, i: usize, channel: &ChannelConfig, key: StreamKey) -> Result<DecodeOutcome> {
        let (h, w) = (batch.height(), batch.width());
        let jpeg = jpeg_encode(batch, i, self.config.jpeg_quality)?;
        let mut bits = bytes_to_bits(&frame(&jpeg));
        let k = self.code.k();
        bits.resize(bits.len().div_ceil(k) * k, 0);
        let mut coded = Vec::with_capacity(bits.len() / k * self.code.n());
        for block in bits.chunks(k) {
            coded.extend(self.code.encode(block)?);
        }
        if coded.len() % 2 != 0 {
            coded.push(0);
        }
        let symbols = qam_modulate(&coded)?;
        tracing::debug!(
            jpeg_bytes = jpeg.len(),
            channel_uses = symbols.len(),
            "classical rate for one image"
        );
        let signal = ChannelSignal::from_complex(&symbols)?;
        let tx = channel.transmit(&signal, &key.path())?;
        let eq: Vec<Complex64> = tx.equalized.to_complex();
        let llr = qam_demodulate(&eq, &tx.noise_var)?;

        let mut info = Vec::with_capacity(bits.len());
        let mut failed_blocks = 0;
        for block in llr.chunks(self.code.n()).take(bits.len() / k) {
            match self.code.decode(block, self.config.bp_max_iters)?.bits {
                Some(b) => info.extend(b),
                None => {
                    failed_blocks += 1;
                    info.extend(std::iter::repeat_n(0, k));
                }
            }
        }
        if failed_blocks > 0 {
            return Ok(DecodeOutcome {
                status: DecodeStatus::ChannelDecodeFailed,
                image: None,
                symbols: symbols.len(),
                failed_blocks,
            });
        }
        let bytes = bits_to_bytes(&info);
        let image = unframe(&bytes).and_then(|p| jpeg_decode(p, h, w).ok());
        Ok(DecodeOutcome {
            status: if image.is_some() {
                DecodeStatus::Ok
            } else {
                DecodeStatus::SourceDecodeFailed
            },
            image,
            symbols: symbols.len(),
            failed_blocks,
        })
    }
}

/// One-shot form of [`ClassicalLink::transmit`].
pub fn classical_pipeline(
    batch: &ImageTensor,
    i: usize,
    channel: &ChannelConfig,
    config: &ClassicalConfig,
    key: StreamKey,
) -> Result<DecodeOutcome> {
    ClassicalLink::new(config)?.transmit(batch, i, channel, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::jpeg::jpeg_roundtrip;
    use crate::channel::ChannelKind;

    #[test]
    fn bit_packing_roundtrip() {
        let bytes = vec![0u8, 1, 0x80, 0xff, 0x5a];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
    }

    #[test]
    fn clean_channel_equals_jpeg() {
        let img = ImageTensor::random(1, 32, 32, 4).unwrap();
        let link = ClassicalLink::new(&ClassicalConfig::default()).unwrap();
        let ch = ChannelConfig::new(ChannelKind::Awgn, 60.0, 0);
        let out = link.transmit(&img, 0, &ch, StreamKey::new(0, 0)).unwrap();
        assert_eq!(out.status, DecodeStatus::Ok);
        let direct = jpeg_roundtrip(&img, 0, 75).unwrap();
        assert_eq!(out.image.unwrap().to_vec().unwrap(), direct.to_vec().unwrap());
    }

    #[test]
    fn very_low_snr_fails_to_decode() {
        let img = ImageTensor::random(1, 32, 32, 5).unwrap();
        let link = ClassicalLink::new(&ClassicalConfig::default()).unwrap();
        let ch = ChannelConfig::new(ChannelKind::Awgn, -3.0, 0);
        let out = link.transmit(&img, 0, &ch, StreamKey::new(0, 0)).unwrap();
        assert_eq!(out.status, DecodeStatus::ChannelDecodeFailed);
        assert!(out.image.is_none());
        let grey = out.image_or_grey(32, 32).unwrap().to_vec().unwrap();
        assert!(grey.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_other_modulations() {
        let cfg = ClassicalConfig {
            modulation_order: 16,
            ..ClassicalConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
