//! N2: four-level U-Net of prior-modulated transformer blocks.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Error, Result};
use crate::nn::{ChannelNorm, Conv2d, DepthwiseConv3, Init, Linear, Pointwise, Scope};

use super::pixel::{depth_to_space, space_to_depth};

pub const LEVELS: usize = 4;

/// Per-channel affine modulation `x (1 + γ(Z)) + β(Z)`.
#[derive(Debug, Clone)]
struct Modulation {
    proj: Linear,
}

impl Modulation {
    fn new(s: &mut Scope, prior_dim: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&mut s.pp("modulation"), prior_dim, 2 * channels, true)?,
        })
    }

    fn apply(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let k = self.proj.forward(z)?.reshape((n, 2 * c, 1, 1))?;
        let scale = (k.narrow(1, 0, c)? + 1.0)?;
        let shift = k.narrow(1, c, c)?;
        Ok(x.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Transposed (channel-wise) multi-head attention with learned per-head
/// temperature.
#[derive(Debug, Clone)]
pub struct Dmta {
    modulation: Modulation,
    qkv: Pointwise,
    qkv_dw: DepthwiseConv3,
    temperature: Tensor,
    project_out: Pointwise,
    heads: usize,
}

impl Dmta {
    pub fn new(s: &mut Scope, dim: usize, heads: usize, prior_dim: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{dim} channels not divisible by {heads} heads")));
        }
        Ok(Self {
            modulation: Modulation::new(s, prior_dim, dim)?,
            qkv: Pointwise::new(&mut s.pp("qkv"), dim, 3 * dim)?,
            qkv_dw: DepthwiseConv3::new(&mut s.pp("qkv_dw"), 3 * dim)?,
            temperature: s.param("temperature", &[1, heads, 1, 1], Init::Ones)?,
            project_out: Pointwise::new(&mut s.pp("project_out"), dim, dim)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let x = self.modulation.apply(x, z)?;
        let qkv = self.qkv_dw.forward(&self.qkv.forward(&x)?)?;
        let ch = c / self.heads;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv.narrow(1, i * c, c)?.reshape((n, self.heads, ch, h * w))?)
        };
        let l2 = |t: Tensor| -> Result<Tensor> {
            let norm = (t.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
            Ok(t.broadcast_div(&norm)?)
        };
        let q = l2(split(0)?)?;
        let k = l2(split(1)?)?;
        let v = split(2)?;
        let attn = q.matmul(&k.transpose(2, 3)?.contiguous()?)?;
        let attn = attn.broadcast_mul(&self.temperature.to_dtype(attn.dtype())?)?;
        let attn = candle_nn::ops::softmax_last_dim(&attn)?;
        let out = attn.matmul(&v)?.reshape((n, c, h, w))?;
        Ok(self.project_out.forward(&out)?)
    }
}

/// Gated feed-forward: `GELU(a) ⊙ b` from a depthwise-mixed expansion.
#[derive(Debug, Clone)]
pub struct Dgfn {
    modulation: Modulation,
    project_in: Pointwise,
    dw: DepthwiseConv3,
    project_out: Pointwise,
    hidden: usize,
}

impl Dgfn {
    pub fn new(s: &mut Scope, dim: usize, expansion: usize, prior_dim: usize) -> Result<Self> {
        let hidden = dim * expansion;
        Ok(Self {
            modulation: Modulation::new(s, prior_dim, dim)?,
            project_in: Pointwise::new(&mut s.pp("project_in"), dim, 2 * hidden)?,
            dw: DepthwiseConv3::new(&mut s.pp("dw"), 2 * hidden)?,
            project_out: Pointwise::new(&mut s.pp("project_out"), hidden, dim)?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let x = self.modulation.apply(x, z)?;
        let h = self.dw.forward(&self.project_in.forward(&x)?)?;
        let gated = (h.narrow(1, 0, self.hidden)?.gelu()? * h.narrow(1, self.hidden, self.hidden)?)?;
        Ok(self.project_out.forward(&gated)?)
    }
}

/// `x + DMTA(LN(x), Z)` then `x + DGFN(LN(x), Z)`.
#[derive(Debug, Clone)]
pub struct DynamicBlock {
    norm1: ChannelNorm,
    attn: Dmta,
    norm2: ChannelNorm,
    ffn: Dgfn,
}

impl DynamicBlock {
    pub fn new(s: &mut Scope, dim: usize, heads: usize, expansion: usize, prior_dim: usize) -> Result<Self> {
        Ok(Self {
            norm1: ChannelNorm::new(&mut s.pp("norm1"), dim)?,
            attn: Dmta::new(&mut s.pp("attn"), dim, heads, prior_dim)?,
            norm2: ChannelNorm::new(&mut s.pp("norm2"), dim)?,
            ffn: Dgfn::new(&mut s.pp("ffn"), dim, expansion, prior_dim)?,
        })
    }

    pub fn attention(&self) -> &Dmta {
        &self.attn
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?, z)?)?;
        Ok((&x + self.ffn.forward(&self.norm2.forward(&x)?, z)?)?)
    }
}

/// Shared shape of N2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestorerShape {
    pub channels: usize,
    pub heads: [usize; LEVELS],
    pub blocks: [usize; LEVELS],
    pub ffn_expansion: usize,
}

impl RestorerShape {
    pub fn prior_dim(&self) -> usize {
        4 * self.channels
    }
}

#[derive(Debug, Clone)]
struct Level {
    blocks: Vec<DynamicBlock>,
}

impl Level {
    fn new(s: &mut Scope, n: usize, dim: usize, heads: usize, shape: &RestorerShape) -> Result<Self> {
        let blocks = (0..n)
            .map(|i| DynamicBlock::new(&mut s.pp(format!("block{i}")), dim, heads, shape.ffn_expansion, shape.prior_dim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(&x, z)?;
        }
        Ok(x)
    }
}

/// Encoder levels at widths `C′, 2C′, 4C′`, latent at `8C′`, decoder
/// mirroring the encoder with skip connections, residual output.
#[derive(Debug, Clone)]
pub struct Restorer {
    shape: RestorerShape,
    embed: Conv2d,
    enc: Vec<Level>,
    down: Vec<Conv2d>,
    latent: Level,
    up: Vec<Conv2d>,
    reduce: Vec<Pointwise>,
    dec: Vec<Level>,
    output: Conv2d,
}

impl Restorer {
    pub fn new(s: &mut Scope, shape: &RestorerShape) -> Result<Self> {
        let c = shape.channels;
        let width = |l: usize| c << l;
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..LEVELS - 1 {
            enc.push(Level::new(&mut s.pp(format!("enc{l}")), shape.blocks[l], width(l), shape.heads[l], shape)?);
            // conv to half width, then unshuffle doubles it: width(l) -> width(l+1)
            down.push(Conv2d::new(&mut s.pp(format!("down{l}")), width(l), width(l) / 2, 3, 1, 1, false)?);
        }
        let latent = Level::new(&mut s.pp("latent"), shape.blocks[3], width(3), shape.heads[3], shape)?;
        let mut up = Vec::new();
        let mut reduce = Vec::new();
        let mut dec = Vec::new();
        for l in (0..LEVELS - 1).rev() {
            // conv to double width, then shuffle quarters it: width(l+1) -> width(l)
            up.push(Conv2d::new(&mut s.pp(format!("up{l}")), width(l + 1), 2 * width(l + 1), 3, 1, 1, false)?);
            let dec_width = if l == 0 { 2 * c } else { width(l) };
            if l > 0 {
                reduce.push(Pointwise::new(&mut s.pp(format!("reduce{l}")), 2 * width(l), width(l))?);
            }
            dec.push(Level::new(&mut s.pp(format!("dec{l}")), shape.blocks[l], dec_width, shape.heads[l], shape)?);
        }
        Ok(Self {
            shape: *shape,
            embed: Conv2d::new(&mut s.pp("embed"), 3, c, 3, 1, 1, false)?,
            enc,
            down,
            latent,
            up,
            reduce,
            dec,
            output: Conv2d::new(&mut s.pp("output"), 2 * c, 3, 3, 1, 1, false)?,
        })
    }

    pub fn shape(&self) -> &RestorerShape {
        &self.shape
    }

    /// Blocks per level, encoder side then latent.
    pub fn block_counts(&self) -> [usize; LEVELS] {
        [
            self.enc[0].blocks.len(),
            self.enc[1].blocks.len(),
            self.enc[2].blocks.len(),
            self.latent.blocks.len(),
        ]
    }

    pub fn heads_per_level(&self) -> [usize; LEVELS] {
        [
            self.enc[0].blocks.first().map_or(0, |b| b.attn.heads()),
            self.enc[1].blocks.first().map_or(0, |b| b.attn.heads()),
            self.enc[2].blocks.first().map_or(0, |b| b.attn.heads()),
            self.latent.blocks.first().map_or(0, |b| b.attn.heads()),
        ]
    }

    /// Unclamped `Ŝ + N2(Ŝ, Z)`.
    pub fn forward_raw(&self, s_hat: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = s_hat.dims4()?;
        let factor = 1 << (LEVELS - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(shape_err(format!("{h}x{w} input not divisible by {factor}")));
        }
        if z.dims() != [s_hat.dim(0)?, self.shape.prior_dim()] {
            return Err(shape_err(format!(
                "prior {:?} does not match width {}",
                z.dims(),
                self.shape.prior_dim()
            )));
        }
        let mut x = self.embed.forward(s_hat)?;
        let mut skips = Vec::with_capacity(LEVELS - 1);
        for (level, down) in self.enc.iter().zip(&self.down) {
            x = level.forward(&x, z)?;
            skips.push(x.clone());
            x = space_to_depth(&down.forward(&x)?, 2)?;
        }
        x = self.latent.forward(&x, z)?;
        let mut reduce = self.reduce.iter();
        for (up, level) in self.up.iter().zip(&self.dec) {
            x = depth_to_space(&up.forward(&x)?, 2)?;
            x = Tensor::cat(&[&x, &skips.pop().expect("one skip per level")], 1)?;
            if let Some(r) = reduce.next() {
                x = r.forward(&x)?;
            }
            x = level.forward(&x, z)?;
        }
        Ok((s_hat + self.output.forward(&x)?)?)
    }

    /// `Î = clamp(Ŝ + N2(Ŝ, Z), 0, 1)`.
    pub fn forward(&self, s_hat: &Tensor, z: &Tensor) -> Result<Tensor> {
        Ok(self.forward_raw(s_hat, z)?.clamp(0f32, 1f32)?)
    }
}
