//! Gray-mapped 4-QAM with exact per-bit LLRs.

use num_complex::Complex64;

use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Bit pair `(b0, b1)` maps to `((1 - 2 b0) + j (1 - 2 b1)) / √2`.
pub fn qam_modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::Shape(format!("4-QAM needs an even bit count, got {}", bits.len())));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|p| {
            Complex64::new(
                (1.0 - 2.0 * (p[0] & 1) as f64) * INV_SQRT2,
                (1.0 - 2.0 * (p[1] & 1) as f64) * INV_SQRT2,
            )
        })
        .collect())
}

/// LLRs `log P(b=0)/P(b=1)` for equalised symbols whose residual complex
/// noise variance is `noise_var[i]` (`σ²/2` per real component).
pub fn qam_demodulate(symbols: &[Complex64], noise_var: &[f64]) -> Result<Vec<f64>> {
    if symbols.len() != noise_var.len() {
        return Err(Error::Shape(format!(
            "{} symbols but {} noise variances",
            symbols.len(),
            noise_var.len()
        )));
    }
    let mut out = Vec::with_capacity(2 * symbols.len());
    for (y, &var) in symbols.iter().zip(noise_var) {
        // per-real variance var/2; LLR = 2 (1/√2) y / (var/2)
        let scale = 2.0 * std::f64::consts::SQRT_2 / var.max(1e-300);
        out.push(scale * y.re);
        out.push(scale * y.im);
    }
    Ok(out)
}

/// Hard decisions from LLRs.
pub fn hard_bits(llr: &[f64]) -> Vec<u8> {
    llr.iter().map(|&l| u8::from(l < 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn constellation_has_unit_power_and_gray_neighbours() {
        let pts = qam_modulate(&[0, 0, 0, 1, 1, 1, 1, 0]).unwrap();
        let p: f64 = pts.iter().map(|c| c.norm_sqr()).sum::<f64>() / 4.0;
        assert!((p - 1.0).abs() < 1e-15);
        for c in &pts {
            assert!((c.re.abs() - INV_SQRT2).abs() < 1e-15 && (c.im.abs() - INV_SQRT2).abs() < 1e-15);
        }
        // consecutive points around the square differ in one bit
        let labels = [[0u8, 0], [0, 1], [1, 1], [1, 0]];
        for i in 0..4 {
            let (a, b) = (labels[i], labels[(i + 1) % 4]);
            let d = (a[0] ^ b[0]) + (a[1] ^ b[1]);
            assert_eq!(d, 1);
            let pa = qam_modulate(&a).unwrap()[0];
            let pb = qam_modulate(&b).unwrap()[0];
            assert!(((pa - pb).norm() - 2.0 * INV_SQRT2).abs() < 1e-12, "adjacent points");
        }
        assert!(qam_modulate(&[1, 0, 1]).is_err());
    }

    #[test]
    fn noiseless_demod_recovers_bits() {
        let mut r = rng::substream(3, &[]);
        let bits: Vec<u8> = (0..200).map(|_| r.random_range(0..2)).collect();
        let sym = qam_modulate(&bits).unwrap();
        let llr = qam_demodulate(&sym, &vec![0.1; sym.len()]).unwrap();
        assert_eq!(hard_bits(&llr), bits);
    }

    #[test]
    fn llr_matches_exact_posterior() {
        let y = Complex64::new(0.3, -0.9);
        let var = 0.4;
        let llr = qam_demodulate(&[y], &[var]).unwrap();
        let lik = |s: f64, v: f64| (-(v - s).powi(2) / var).exp();
        let exact = (lik(INV_SQRT2, y.re) / lik(-INV_SQRT2, y.re)).ln();
        assert!((llr[0] - exact).abs() < 1e-12);
    }
}
