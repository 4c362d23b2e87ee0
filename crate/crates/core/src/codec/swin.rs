//! Window-based multi-head self-attention and Swin Transformer blocks.

use candle_core::{Device, Tensor, D};

use crate::error::{shape_err, Result};
use crate::nn::{Init, LayerNorm, Linear, Scope};

/// Multi-head self-attention inside one window, with a learned relative
/// position bias.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    bias_table: Tensor,
    bias_index: Tensor,
    heads: usize,
    window: usize,
}

/// Index into the `(2w-1)^2` relative-position table for every ordered pair
/// of tokens in a `w x w` window, row-major.
pub fn relative_position_index(window: usize) -> Vec<u32> {
    let l = window * window;
    let side = 2 * window - 1;
    let mut idx = Vec::with_capacity(l * l);
    for p in 0..l {
        let (pr, pc) = (p / window, p % window);
        for q in 0..l {
            let (qr, qc) = (q / window, q % window);
            let dr = pr + window - 1 - qr;
            let dc = pc + window - 1 - qc;
            idx.push((dr * side + dc) as u32);
        }
    }
    idx
}

impl WindowAttention {
    pub fn new(s: &mut Scope, dim: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(shape_err(format!("{dim} features cannot be split into {heads} heads")));
        }
        let side = 2 * window - 1;
        let index = relative_position_index(window);
        let n = index.len();
        Ok(Self {
            qkv: Linear::new(&mut s.pp("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(&mut s.pp("proj"), dim, dim, true)?,
            bias_table: s.param("relative_bias", &[side * side, heads], Init::Normal(0.02))?,
            bias_index: Tensor::from_vec(index, n, &Device::Cpu)?,
            heads,
            window,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `(heads, L, L)` additive bias.
    pub fn position_bias(&self) -> Result<Tensor> {
        let l = self.window * self.window;
        Ok(self
            .bias_table
            .index_select(&self.bias_index, 0)?
            .reshape((l, l, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?)
    }

    pub fn qkv(&self) -> &Linear {
        &self.qkv
    }

    pub fn proj(&self) -> &Linear {
        &self.proj
    }

    /// `windows`: `(B, L, C)` with `L = window^2`. `mask`: `(nW, L, L)` added to
    /// the logits of window `b % nW`.
    pub fn forward(&self, windows: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, l, c) = windows.dims3()?;
        let hd = c / self.heads;
        let scale = (hd as f64).powf(-0.5);
        let qkv = self
            .qkv
            .forward(windows)?
            .reshape((b, l, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = (qkv.get(0)? * scale)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut attn = q
            .matmul(&k.t()?)?
            .broadcast_add(&self.position_bias()?.unsqueeze(0)?)?;
        if let Some(mask) = mask {
            let nw = mask.dim(0)?;
            attn = attn
                .reshape((b / nw, nw, self.heads, l, l))?
                .broadcast_add(&mask.to_dtype(attn.dtype())?.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((b, self.heads, l, l))?;
        }
        let attn = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, l, c))?;
        Ok(self.proj.forward(&out)?)
    }
}

/// `(N, h, w, C) -> (N * nW, window^2, C)`.
pub fn window_partition(x: &Tensor, window: usize) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    if h % window != 0 || w % window != 0 {
        return Err(shape_err(format!("grid {h}x{w} cannot be tiled by {window}x{window} windows")));
    }
    Ok(x.reshape(vec![n, h / window, window, w / window, window, c])?
        .permute(vec![0, 1, 3, 2, 4, 5])?
        .reshape((n * (h / window) * (w / window), window * window, c))?)
}

pub fn window_reverse(windows: &Tensor, window: usize, h: usize, w: usize) -> Result<Tensor> {
    let (bw, _, c) = windows.dims3()?;
    let n = bw / ((h / window) * (w / window));
    Ok(windows
        .reshape(vec![n, h / window, w / window, window, window, c])?
        .permute(vec![0, 1, 3, 2, 4, 5])?
        .reshape((n, h, w, c))?)
}

/// Logit mask for shifted windows: tokens that came from different regions
/// before the cyclic shift cannot attend to each other.
pub fn shifted_window_mask(h: usize, w: usize, window: usize, shift: usize) -> Result<Tensor> {
    let region = |len: usize, i: usize| -> usize {
        if i < len - window {
            0
        } else if i < len - shift {
            1
        } else {
            2
        }
    };
    let mut labels = vec![0usize; h * w];
    for r in 0..h {
        for c in 0..w {
            labels[r * w + c] = region(h, r) * 3 + region(w, c);
        }
    }
    let (nh, nw) = (h / window, w / window);
    let l = window * window;
    let mut mask = Vec::with_capacity(nh * nw * l * l);
    for wr in 0..nh {
        for wc in 0..nw {
            let lab: Vec<usize> = (0..l)
                .map(|p| labels[(wr * window + p / window) * w + wc * window + p % window])
                .collect();
            for p in 0..l {
                for q in 0..l {
                    mask.push(if lab[p] == lab[q] { 0f32 } else { -100f32 });
                }
            }
        }
    }
    Ok(Tensor::from_vec(mask, (nh * nw, l, l), &Device::Cpu)?)
}

/// One Swin layer: `(S)W-MSA(LN(x)) + x` followed by `MLP(LN(x)) + x`.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    window: usize,
    shift: usize,
    grid: (usize, usize),
    mask: Option<Tensor>,
}

impl SwinBlock {
    /// `layer_index` parity selects regular (even) or shifted (odd) windows.
    /// When the grid is no larger than one window the shift is dropped,
    /// since it would only permute tokens inside a single window.
    pub fn new(
        s: &mut Scope,
        dim: usize,
        heads: usize,
        window: usize,
        grid: (usize, usize),
        layer_index: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let (h, w) = grid;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(shape_err(format!("grid {h}x{w} cannot be tiled by {window}x{window} windows")));
        }
        let shift = if layer_index % 2 == 1 && h.min(w) > window {
            (window / 2).max(1)
        } else {
            0
        };
        let mask = if shift > 0 {
            Some(shifted_window_mask(h, w, window, shift)?)
        } else {
            None
        };
        Ok(Self {
            norm1: LayerNorm::new(&mut s.pp("norm1"), dim)?,
            attn: WindowAttention::new(&mut s.pp("attn"), dim, heads, window)?,
            norm2: LayerNorm::new(&mut s.pp("norm2"), dim)?,
            fc1: Linear::new(&mut s.pp("fc1"), dim, mlp_ratio * dim, true)?,
            fc2: Linear::new(&mut s.pp("fc2"), mlp_ratio * dim, dim, true)?,
            window,
            shift,
            grid,
            mask,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn attention(&self) -> &WindowAttention {
        &self.attn
    }

    pub fn attention_sublayer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w, _) = x.dims4()?;
        if (h, w) != self.grid {
            return Err(shape_err(format!(
                "block built for a {:?} grid, got {h}x{w}",
                self.grid
            )));
        }
        let normed = self.norm1.forward(x)?;
        let s = self.shift as i32;
        let shifted = if s > 0 {
            normed.roll(-s, 1)?.roll(-s, 2)?
        } else {
            normed
        };
        let windows = window_partition(&shifted, self.window)?;
        let attended = self.attn.forward(&windows, self.mask.as_ref())?;
        let merged = window_reverse(&attended, self.window, h, w)?;
        let unshifted = if s > 0 {
            merged.roll(s, 1)?.roll(s, 2)?
        } else {
            merged
        };
        Ok((x + unshifted)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.attention_sublayer(x)?;
        let hidden = self.fc1.forward(&self.norm2.forward(&y)?)?.relu()?;
        Ok((&y + self.fc2.forward(&hidden)?)?)
    }
}

/// A run of Swin blocks alternating regular and shifted windows.
#[derive(Debug, Clone)]
pub struct SwinStage {
    blocks: Vec<SwinBlock>,
}

impl SwinStage {
    pub fn new(
        s: &mut Scope,
        dim: usize,
        depth: usize,
        heads: usize,
        window: usize,
        grid: (usize, usize),
        mlp_ratio: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| SwinBlock::new(&mut s.pp(format!("block{i}")), dim, heads, window, grid, i, mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[SwinBlock] {
        &self.blocks
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::DType;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut r = crate::rng::substream(seed, &[]);
        let n = shape.iter().product();
        Tensor::from_vec(crate::rng::standard_normal_vec_f32(&mut r, n), shape, &Device::Cpu).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn block_preserves_shape() {
        let mut store = ParamStore::new(0);
        let mut root = store.root();
        let b0 = SwinBlock::new(&mut root.pp("b0"), 32, 4, 2, (8, 8), 0, 4).unwrap();
        let b1 = SwinBlock::new(&mut root.pp("b1"), 32, 4, 2, (8, 8), 1, 4).unwrap();
        assert_eq!(b0.shift(), 0);
        assert_eq!(b1.shift(), 1);
        let x = randn(&[2, 8, 8, 32], 1);
        assert_eq!(b1.forward(&b0.forward(&x).unwrap()).unwrap().dims(), &[2, 8, 8, 32]);
    }

    #[test]
    fn zero_weights_give_identity() {
        let mut store = ParamStore::new(0);
        let stage = SwinStage::new(&mut store.root().pp("st"), 16, 2, 2, 2, (4, 4), 4).unwrap();
        store.fill("st", 0.0).unwrap();
        let x = randn(&[1, 4, 4, 16], 2);
        let y = stage.forward(&x).unwrap();
        assert_eq!(
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn tiling_error() {
        let mut store = ParamStore::new(0);
        assert!(SwinBlock::new(&mut store.root(), 16, 2, 3, (8, 8), 0, 4).is_err());
    }

    #[test]
    fn partition_reverse_roundtrip() {
        let x = randn(&[2, 4, 6, 3], 5);
        let w = window_partition(&x, 2).unwrap();
        assert_eq!(w.dims(), &[12, 4, 3]);
        let back = window_reverse(&w, 2, 4, 6).unwrap();
        assert_eq!(max_abs_diff(&x, &back), 0.0);
    }

    #[test]
    fn shifted_mask_structure() {
        let m = shifted_window_mask(4, 4, 2, 1).unwrap();
        assert_eq!(m.dims(), &[4, 4, 4]);
        let v = m.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // First window lies entirely in region 0: no masking.
        assert!(v[..16].iter().all(|&x| x == 0.0));
        // Last window mixes four regions: only the diagonal stays open.
        let last = &v[48..64];
        for p in 0..4 {
            for q in 0..4 {
                assert_eq!(last[p * 4 + q] == 0.0, p == q);
            }
        }
        let _ = DType::F32;
    }

    #[test]
    fn shifted_attention_without_mask_leak() {
        // With the mask, perturbing a token only affects tokens in the same
        // shifted window (and region).
        let mut store = ParamStore::new(7);
        let b = SwinBlock::new(&mut store.root(), 8, 2, 2, (4, 4), 1, 2).unwrap();
        let x = randn(&[1, 4, 4, 8], 3);
        let mut xv = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let y0 = b.attention_sublayer(&x).unwrap();
        // Token (0, 0) after a shift of -1 lands in the last window with
        // tokens from three other regions, so it must stay isolated.
        for c in 0..8 {
            xv[c] += 1.0;
        }
        let x1 = Tensor::from_vec(xv, (1, 4, 4, 8), &Device::Cpu).unwrap();
        let y1 = b.attention_sublayer(&x1).unwrap();
        let d = (y1 - y0).unwrap().abs().unwrap().sum(3).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(d[0] > 0.0);
        assert!(d[1..].iter().all(|&v| v < 1e-6), "{d:?}");
    }
}
