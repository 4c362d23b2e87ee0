//! wasm-bindgen exports for the static demo page in `www/`.
//!
//! Everything runs the same core code the simulator uses; the page only
//! draws the returned flat `Float64Array`s.

use candle_core::{Device, Tensor};
use gsc_core::baseline::qam::hard_bits;
use gsc_core::baseline::{qam_demodulate, qam_modulate, LdpcCode};
use gsc_core::channel::ChannelSignal;
use gsc_core::diffusion::{forward_diffuse, DiffusionSchedule};
use gsc_core::rng::{standard_normal_vec, substream};
use gsc_core::{ChannelConfig, ChannelKind};
use num_complex::Complex64;
use rand::Rng;
use wasm_bindgen::prelude::*;

// The demo code is fixed: the classical link's default rate-1/2 code.
const LDPC_N: usize = 1024;
const BP_ITERS: usize = 50;

fn kind(name: &str) -> Result<ChannelKind, String> {
    name.parse::<ChannelKind>().map_err(|e| e.to_string())
}

fn js(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `n` random 4-QAM symbols through the channel.
/// Layout: `[tx_re, tx_im, rx_re, rx_im]` per symbol, where `rx` is after
/// zero-forcing equalisation.
pub fn constellation_points(channel: &str, snr_db: f64, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let mut r = substream(seed, &[0]);
    let bits: Vec<u8> = (0..2 * n).map(|_| r.random_range(0..2u8)).collect();
    let tx = qam_modulate(&bits).map_err(|e| e.to_string())?;
    let f = ChannelSignal::from_complex(&tx).map_err(|e| e.to_string())?;
    let out = ChannelConfig::new(kind(channel)?, snr_db, seed)
        .transmit(&f, &[1])
        .map_err(|e| e.to_string())?;
    let rx = out.equalized.to_complex();
    Ok(tx.iter().zip(&rx).flat_map(|(a, b)| [a.re, a.im, b.re, b.im]).collect())
}

/// A ring of `n` 2-D priors pushed through the closed-form forward process.
/// Returns `steps + 1` frames of `n` points (x, y), frame 0 being the clean
/// ring, followed by the `steps + 1` values of alpha-bar.
pub fn diffusion_frames(beta_lo: f64, beta_hi: f64, steps: usize, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let schedule = DiffusionSchedule::linear(steps, beta_lo, beta_hi).map_err(|e| e.to_string())?;
    let ring: Vec<f64> = (0..n)
        .flat_map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let z0 = Tensor::from_vec(ring.clone(), (n, 2), &Device::Cpu).map_err(|e| e.to_string())?;
    let mut r = substream(seed, &[2]);
    let eps = Tensor::from_vec(standard_normal_vec(&mut r, 2 * n), (n, 2), &Device::Cpu).map_err(|e| e.to_string())?;
    let mut out = ring;
    for t in 1..=steps {
        let z = forward_diffuse(&z0, &schedule, t, &eps).map_err(|e| e.to_string())?;
        out.extend(z.flatten_all().and_then(|z| z.to_vec1::<f64>()).map_err(|e| e.to_string())?);
    }
    out.push(1.0);
    out.extend((1..=steps).map(|t| schedule.alpha_bar_at(t)));
    Ok(out)
}

/// Encodes random blocks with the LDPC code, sends them as 4-QAM and runs
/// belief propagation. Returns `[block_failure_rate, raw_bit_error_rate]`.
pub fn ldpc_block_errors(channel: &str, snr_db: f64, blocks: usize, seed: u64) -> Result<Vec<f64>, String> {
    let code = LdpcCode::regular(LDPC_N, 3, 6, 1).map_err(|e| e.to_string())?;
    let ch = ChannelConfig::new(kind(channel)?, snr_db, seed);
    let mut r = substream(seed, &[3]);
    let (mut failed, mut raw_errors) = (0usize, 0usize);
    for b in 0..blocks {
        let info: Vec<u8> = (0..code.k()).map(|_| r.random_range(0..2u8)).collect();
        let cw = code.encode(&info).map_err(|e| e.to_string())?;
        let tx: Vec<Complex64> = qam_modulate(&cw).map_err(|e| e.to_string())?;
        let f = ChannelSignal::from_complex(&tx).map_err(|e| e.to_string())?;
        let out = ch.transmit(&f, &[b as u64]).map_err(|e| e.to_string())?;
        let llr = qam_demodulate(&out.equalized.to_complex(), &out.noise_var).map_err(|e| e.to_string())?;
        raw_errors += hard_bits(&llr).iter().zip(&cw).filter(|(a, b)| a != b).count();
        match code.decode(&llr, BP_ITERS).map_err(|e| e.to_string())?.bits {
            Some(bits) if bits == info => {}
            _ => failed += 1,
        }
    }
    Ok(vec![failed as f64 / blocks.max(1) as f64, raw_errors as f64 / (blocks.max(1) * LDPC_N) as f64])
}

#[wasm_bindgen]
pub fn constellation(channel: &str, snr_db: f64, n: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    constellation_points(channel, snr_db, n, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn diffusion(beta_lo: f64, beta_hi: f64, steps: usize, n: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    diffusion_frames(beta_lo, beta_hi, steps, n, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn ldpc(channel: &str, snr_db: f64, blocks: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    ldpc_block_errors(channel, snr_db, blocks, seed as u64).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constellation_is_noiseless_at_high_snr() {
        let p = constellation_points("awgn", 80.0, 64, 1).unwrap();
        assert_eq!(p.len(), 256);
        for s in p.chunks(4) {
            assert!((s[0] - s[2]).abs() < 1e-3 && (s[1] - s[3]).abs() < 1e-3);
        }
        assert!(constellation_points("nope", 0.0, 4, 1).is_err());
    }

    #[test]
    fn ring_fades_into_noise() {
        let v = diffusion_frames(0.1, 0.99, 4, 16, 3).unwrap();
        assert_eq!(v.len(), 5 * 32 + 5);
        let ab = &v[5 * 32..];
        assert_eq!(ab[0], 1.0);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ldpc_cliff() {
        let low = ldpc_block_errors("awgn", -2.0, 4, 5).unwrap();
        let high = ldpc_block_errors("awgn", 8.0, 4, 5).unwrap();
        assert_eq!(low[0], 1.0);
        assert_eq!(high[0], 0.0);
        assert!(high[1] > 0.0 && high[1] < 0.02 && low[1] > high[1], "{low:?} {high:?}");
    }
}
