//! Image batches.

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, Error, Result};

/// A batch of RGB images, shape `(N, 3, H, W)`, `f32` intensities in `[0, 1]`,
/// with `H` and `W` divisible by 8.
#[derive(Debug, Clone)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, h, w) = t
            .dims4()
            .map_err(|_| shape_err(format!("expected (N, 3, H, W), got {:?}", t.dims())))?;
        if c != 3 {
            return Err(shape_err(format!("expected 3 channels, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(shape_err(format!("image side {h}x{w} not divisible by 8")));
        }
        let t = t.to_dtype(DType::F32)?;
        if t.elem_count() > 0 {
            let lo = t.min_all()?.to_scalar::<f32>()?;
            let hi = t.max_all()?.to_scalar::<f32>()?;
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite("image"));
            }
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::Config(format!(
                    "image intensities must lie in [0, 1], found [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self(t))
    }

    /// Clamps into `[0, 1]` before validating the shape.
    pub fn from_clamped(t: &Tensor) -> Result<Self> {
        Self::new(t.clamp(0f32, 1f32)?)
    }

    pub fn from_vec(data: Vec<f32>, n: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Tensor::from_vec(data, (n, 3, h, w), &Device::Cpu)?)
    }

    /// Uniform random intensities from a seeded stream.
    pub fn random(n: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut r = crate::rng::substream(seed, &[crate::rng::tag::INIT, 0x1a]);
        let data = (0..n * 3 * h * w).map(|_| r.random::<f32>()).collect();
        Self::from_vec(data, n, h, w)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    /// Input dimension of one image, `3 * H * W`.
    pub fn pixel_dim(&self) -> usize {
        3 * self.height() * self.width()
    }

    pub fn image(&self, i: usize) -> Result<ImageTensor> {
        Ok(Self(self.0.narrow(0, i, 1)?))
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<ImageTensor> {
        Ok(Self(self.0.narrow(0, start, len)?))
    }

    pub fn select(&self, indices: &[usize]) -> Result<ImageTensor> {
        let idx = Tensor::from_vec(
            indices.iter().map(|&i| i as u32).collect::<Vec<_>>(),
            indices.len(),
            &Device::Cpu,
        )?;
        Ok(Self(self.0.index_select(&idx, 0)?))
    }

    pub fn concat(parts: &[ImageTensor]) -> Result<ImageTensor> {
        let ts: Vec<&Tensor> = parts.iter().map(|p| &p.0).collect();
        Ok(Self(Tensor::cat(&ts, 0)?))
    }

    pub fn to_vec(&self) -> Result<Vec<f32>> {
        Ok(self.0.flatten_all()?.to_vec1::<f32>()?)
    }

    /// SHA-256 over the raw little-endian bytes, used to check that two code
    /// paths saw bit-identical inputs.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for d in self.0.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in self.to_vec()? {
            hasher.update(v.to_le_bytes());
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        let dev = Device::Cpu;
        assert!(ImageTensor::new(Tensor::zeros((1, 3, 12, 16), DType::F32, &dev).unwrap()).is_err());
        assert!(ImageTensor::new(Tensor::zeros((1, 1, 16, 16), DType::F32, &dev).unwrap()).is_err());
        assert!(ImageTensor::new(Tensor::ones((1, 3, 8, 8), DType::F32, &dev).unwrap()).is_ok());
        let over = (Tensor::ones((1, 3, 8, 8), DType::F32, &dev).unwrap() * 1.5).unwrap();
        assert!(ImageTensor::new(over.clone()).is_err());
        assert!(ImageTensor::from_clamped(&over).is_ok());
    }
}
