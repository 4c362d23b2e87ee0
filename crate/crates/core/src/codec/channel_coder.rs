//! Fixed affine channel coder `f = W S + b` and its pseudo-inverse decoder.

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Init, Scope};
use crate::rng;

/// Non-trainable linear map between flattened semantic symbols (`d` values)
/// and a channel vector of `k <= d` reals. `W` has orthonormal rows, so its
/// pseudo-inverse is `Wᵀ`; the bias is zero.
#[derive(Debug, Clone)]
pub struct ChannelCoder {
    weight: Tensor,
    bias: Tensor,
    k: usize,
    d: usize,
}

/// Modified Gram-Schmidt on `k` Gaussian rows of length `d`.
pub fn random_orthonormal_rows(k: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::substream(seed, &[rng::tag::INIT, 0xc0de]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = rng::standard_normal_vec(&mut r, d);
        for _ in 0..2 {
            for u in &rows {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    rows.into_iter().flatten().collect()
}

impl ChannelCoder {
    pub fn new(s: &mut Scope, k: usize, d: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::Config(format!(
                "channel length k = {k} must be in 1..={d} (flattened symbol size)"
            )));
        }
        if k % 2 != 0 {
            return Err(Error::Config(format!(
                "channel length k = {k} must be even (real-pair complex layout)"
            )));
        }
        // Created through the store so the map is persisted with the model;
        // callers keep it out of the optimiser.
        let w = Tensor::from_vec(random_orthonormal_rows(k, d, seed), (k, d), &Device::Cpu)?;
        let weight = s.param_from("weight", w)?;
        let bias = s.param("bias", &[k], Init::Zeros)?;
        Ok(Self { weight, bias, k, d })
    }

    /// Builds a coder from explicit tensors (for analysis and tests).
    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (k, d) = weight.dims2()?;
        if bias.dims() != [k] {
            return Err(shape_err(format!("bias {:?} for a {k}x{d} map", bias.dims())));
        }
        Ok(Self { weight, bias, k, d })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn symbol_dim(&self) -> usize {
        self.d
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// `(N, d)` or any `(N, ...)` with `d` trailing elements `-> (N, k)`.
    pub fn encode(&self, symbols: &Tensor) -> Result<Tensor> {
        let n = symbols.dim(0)?;
        let flat = symbols.reshape((n, ()))?;
        if flat.dim(1)? != self.d {
            return Err(shape_err(format!(
                "expected {} symbol values per image, got {}",
                self.d,
                flat.dim(1)?
            )));
        }
        Ok(flat.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    /// `(N, k) -> (N, d)` via `W⁺ (f̂ - b)`.
    pub fn decode(&self, received: &Tensor) -> Result<Tensor> {
        let (_, k) = received.dims2()?;
        if k != self.k {
            return Err(shape_err(format!("expected length-{} channel vectors, got {k}", self.k)));
        }
        Ok(received.broadcast_sub(&self.bias)?.matmul(&self.weight)?)
    }

    /// Max deviation of `W Wᵀ` from the identity.
    pub fn orthonormality_error(&self) -> Result<f64> {
        let w = self.weight.to_dtype(DType::F64)?;
        let g = w.matmul(&w.t()?)?;
        let eye = Tensor::eye(self.k, DType::F64, &Device::Cpu)?;
        Ok((g - eye)?.abs()?.max_all()?.to_scalar::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn randn(shape: (usize, usize), seed: u64) -> Tensor {
        let mut r = rng::substream(seed, &[]);
        Tensor::from_vec(
            rng::standard_normal_vec(&mut r, shape.0 * shape.1),
            shape,
            &Device::Cpu,
        )
        .unwrap()
    }

    #[test]
    fn orthonormal_and_persisted() {
        let mut store = ParamStore::new(0);
        let cc = ChannelCoder::new(&mut store.root().pp("cc"), 8, 12, 3).unwrap();
        assert!(cc.orthonormality_error().unwrap() < 1e-6);
        let stored = store.get("cc.weight").unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let live = cc.weight().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(stored, live);
        assert!(stored.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_expansion_and_odd_length() {
        let mut store = ParamStore::new(0);
        assert!(ChannelCoder::new(&mut store.root().pp("a"), 14, 12, 0).is_err());
        assert!(ChannelCoder::new(&mut store.root().pp("b"), 7, 12, 0).is_err());
    }

    #[test]
    fn identity_slice_and_zero() {
        let d = 6;
        let k = 4;
        let mut w = vec![0f64; k * d];
        for i in 0..k {
            w[i * d + i] = 1.0;
        }
        let cc = ChannelCoder::from_parts(
            Tensor::from_vec(w, (k, d), &Device::Cpu).unwrap(),
            Tensor::zeros(k, DType::F64, &Device::Cpu).unwrap(),
        )
        .unwrap();
        let s = randn((2, d), 1);
        let f = cc.encode(&s).unwrap();
        assert_eq!(
            f.to_vec2::<f64>().unwrap(),
            s.narrow(1, 0, k).unwrap().to_vec2::<f64>().unwrap()
        );
        let z = Tensor::zeros((1, d), DType::F64, &Device::Cpu).unwrap();
        assert!(cc.encode(&z).unwrap().to_vec2::<f64>().unwrap()[0].iter().all(|&v| v == 0.0));
        // Zero input decodes to the bias term only (here zero).
        let zf = Tensor::zeros((1, k), DType::F64, &Device::Cpu).unwrap();
        assert!(cc.decode(&zf).unwrap().to_vec2::<f64>().unwrap()[0].iter().all(|&v| v == 0.0));
        assert!(cc.decode(&Tensor::zeros((1, k + 2), DType::F64, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn roundtrip_is_projection() {
        let mut store = ParamStore::with_dtype(0, DType::F64);
        let (k, d) = (6, 10);
        let cc = ChannelCoder::new(&mut store.root(), k, d, 9).unwrap();
        let s = randn((3, d), 2);
        let back = cc.decode(&cc.encode(&s).unwrap()).unwrap();
        // Oracle: P = Wᵀ (W Wᵀ)⁻¹ W, computed with an explicit Gram solve.
        let w = cc.weight().to_vec2::<f64>().unwrap();
        let mut gram = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                gram[i][j] = (0..d).map(|c| w[i][c] * w[j][c]).sum();
            }
        }
        let sv = s.to_vec2::<f64>().unwrap();
        let bv = back.to_vec2::<f64>().unwrap();
        for (row, got) in sv.iter().zip(&bv) {
            let ws: Vec<f64> = (0..k).map(|i| (0..d).map(|c| w[i][c] * row[c]).sum()).collect();
            let coeff = solve(gram.clone(), ws);
            for c in 0..d {
                let expect: f64 = (0..k).map(|i| w[i][c] * coeff[i]).sum();
                assert!((expect - got[c]).abs() < 1e-9);
            }
        }
        // Square case is exact reconstruction.
        let mut store = ParamStore::with_dtype(0, DType::F64);
        let sq = ChannelCoder::new(&mut store.root(), d, d, 1).unwrap();
        let back = sq.decode(&sq.encode(&s).unwrap()).unwrap();
        let err = (back - &s).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(err < 1e-9);
    }

    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    }

    #[test]
    fn affine_superposition() {
        let mut store = ParamStore::with_dtype(0, DType::F64);
        let cc = ChannelCoder::new(&mut store.root(), 4, 8, 2).unwrap();
        let s1 = randn((1, 8), 3);
        let s2 = randn((1, 8), 4);
        let (a, b) = (0.7, -2.3);
        let zero = cc.encode(&Tensor::zeros((1, 8), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let lhs = (cc.encode(&((&s1 * a).unwrap() + (&s2 * b).unwrap()).unwrap()).unwrap() - &zero).unwrap();
        let rhs = (((cc.encode(&s1).unwrap() - &zero).unwrap() * a).unwrap()
            + ((cc.encode(&s2).unwrap() - &zero).unwrap() * b).unwrap())
        .unwrap();
        let err = (lhs - rhs).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(err < 1e-6);
    }
}
