//! N1: compresses images into the compact prior vector of width `4C′`.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Result};
use crate::nn::{leaky_relu, Conv2d, Linear, Scope};

use super::pixel::space_to_depth;

pub const UNSHUFFLE: usize = 2;
const TRUNK_DEPTH: usize = 4;

/// Two input heads (clean + decoded, or decoded only) feeding a shared
/// trunk of stride-2 convolutions, global average pooling and an affine
/// head.
#[derive(Debug, Clone)]
pub struct PriorExtractor {
    head_pair: Conv2d,
    head_single: Conv2d,
    trunk: Vec<Conv2d>,
    out: Linear,
}

impl PriorExtractor {
    pub fn new(s: &mut Scope, channels: usize) -> Result<Self> {
        let r2 = UNSHUFFLE * UNSHUFFLE;
        let trunk = (0..TRUNK_DEPTH)
            .map(|i| Conv2d::new(&mut s.pp(format!("trunk{i}")), channels, channels, 3, 2, 1, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            head_pair: Conv2d::new(&mut s.pp("head_pair"), 6 * r2, channels, 3, 1, 1, true)?,
            head_single: Conv2d::new(&mut s.pp("head_single"), 3 * r2, channels, 3, 1, 1, true)?,
            trunk,
            out: Linear::new(&mut s.pp("out"), channels, 4 * channels, true)?,
        })
    }

    fn run(&self, head: &Conv2d, x: &Tensor) -> Result<Tensor> {
        let mut h = leaky_relu(&head.forward(&space_to_depth(x, UNSHUFFLE)?)?, 0.1)?;
        for conv in &self.trunk {
            h = leaky_relu(&conv.forward(&h)?, 0.1)?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(self.out.forward(&pooled)?)
    }

    /// `Z = N1(PixelUnshuffle(Concat(Ŝ, I)))`.
    pub fn extract_pair(&self, s_hat: &Tensor, clean: &Tensor) -> Result<Tensor> {
        if s_hat.dims() != clean.dims() {
            return Err(shape_err(format!(
                "decoded {:?} and clean {:?} images differ in shape",
                s_hat.dims(),
                clean.dims()
            )));
        }
        self.run(&self.head_pair, &Tensor::cat(&[s_hat, clean], 1)?)
    }

    /// `D = N1(PixelUnshuffle(Ŝ))`.
    pub fn extract_single(&self, s_hat: &Tensor) -> Result<Tensor> {
        self.run(&self.head_single, s_hat)
    }
}
