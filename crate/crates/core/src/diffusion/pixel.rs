//! Space-to-depth (pixel unshuffle) and its inverse on `(N, C, H, W)`.

use candle_core::Tensor;

use crate::error::{shape_err, Result};

/// `(N, C, H, W) -> (N, C r², H/r, W/r)`. Output channel `c r² + i r + j`
/// holds input pixel `(y r + i, x r + j)` of channel `c`.
pub fn space_to_depth(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(shape_err(format!("{h}x{w} not divisible by factor {r}")));
    }
    Ok(x.reshape(vec![n, c, h / r, r, w / r, r])?
        .permute(vec![0, 1, 3, 5, 2, 4])?
        .reshape((n, c * r * r, h / r, w / r))?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(shape_err(format!("{c} channels not divisible by {}", r * r)));
    }
    let co = c / (r * r);
    Ok(x.reshape(vec![n, co, r, r, h, w])?
        .permute(vec![0, 1, 4, 2, 5, 3])?
        .reshape((n, co, h * r, w * r))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn shapes_and_roundtrip() {
        let x = Tensor::arange(0f32, 2.0 * 3.0 * 32.0 * 32.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 3, 32, 32))
            .unwrap();
        let y = space_to_depth(&x, 2).unwrap();
        assert_eq!(y.dims(), &[2, 12, 16, 16]);
        let back = depth_to_space(&y, 2).unwrap();
        assert_eq!(
            back.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn index_mapping_matches_brute_force() {
        let (c, h, w, r) = (2, 4, 4, 2);
        let x = Tensor::arange(0f32, (c * h * w) as f32, &Device::Cpu)
            .unwrap()
            .reshape((1, c, h, w))
            .unwrap();
        let y = space_to_depth(&x, r).unwrap().to_dtype(DType::F32).unwrap();
        let y = y.get(0).unwrap().to_vec3::<f32>().unwrap();
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    for yy in 0..h / r {
                        for xx in 0..w / r {
                            let expect = (ch * h * w + (yy * r + i) * w + xx * r + j) as f32;
                            assert_eq!(y[ch * r * r + i * r + j][yy][xx], expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_indivisible() {
        let x = Tensor::zeros((1, 3, 5, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(space_to_depth(&x, 2).is_err());
    }
}
