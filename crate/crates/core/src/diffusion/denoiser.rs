//! Vector noise estimator on `Concat(Ẑ_t, embed(t), D)`.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Result};
use crate::nn::{Init, Linear, Scope};

use super::schedule::NoisePredictor;

/// Three fully connected layers with a residual middle layer.
#[derive(Debug, Clone)]
pub struct Denoiser {
    time_embed: Tensor,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    dim: usize,
}

impl Denoiser {
    pub fn new(s: &mut Scope, dim: usize, steps: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            time_embed: s.param("time_embed", &[steps, dim], Init::Normal(0.02))?,
            fc1: Linear::new(&mut s.pp("fc1"), 3 * dim, hidden, true)?,
            fc2: Linear::new(&mut s.pp("fc2"), hidden, hidden, true)?,
            fc3: Linear::new(&mut s.pp("fc3"), hidden, dim, true)?,
            dim,
        })
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        let (n, d) = z_t.dims2()?;
        if d != self.dim || cond.dims() != z_t.dims() {
            return Err(shape_err(format!(
                "denoiser expects two (N, {}) inputs, got {:?} and {:?}",
                self.dim,
                z_t.dims(),
                cond.dims()
            )));
        }
        let emb = self
            .time_embed
            .get(t - 1)?
            .unsqueeze(0)?
            .broadcast_as((n, d))?
            .to_dtype(z_t.dtype())?;
        let x = Tensor::cat(&[z_t, &emb, cond], D::Minus1)?;
        let h = self.fc1.forward(&x)?.gelu()?;
        let h = (&h + self.fc2.forward(&h)?.gelu()?)?;
        Ok(self.fc3.forward(&h)?)
    }
}
