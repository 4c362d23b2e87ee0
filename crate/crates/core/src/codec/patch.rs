//! Patch partitioning, embedding and 2x2 merging/splitting of token grids.
//!
//! Token grids are channels-last: `(N, rows, cols, features)`.

use candle_core::Tensor;

use crate::error::{shape_err, Result};
use crate::nn::{Linear, Scope};

pub const PATCH: usize = 4;
/// Raw values per 4x4 RGB patch.
pub const PATCH_DIM: usize = 3 * PATCH * PATCH;

/// Splits `(N, 3, H, W)` images into non-overlapping 4x4 patches, giving a
/// `(N, H/4, W/4, 48)` grid ordered top-left to bottom-right. Inside a token
/// values are ordered channel-major, then patch row, then patch column.
pub fn patch_partition(images: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(shape_err(format!("expected 3 channels, got {c}")));
    }
    if h % PATCH != 0 || w % PATCH != 0 {
        return Err(shape_err(format!("image {h}x{w} not divisible by {PATCH}")));
    }
    let (gh, gw) = (h / PATCH, w / PATCH);
    Ok(images
        .reshape(vec![n, c, gh, PATCH, gw, PATCH])?
        .permute(vec![0, 2, 4, 1, 3, 5])?
        .reshape((n, gh, gw, PATCH_DIM))?)
}

/// Inverse of [`patch_partition`].
pub fn patch_reassemble(tokens: &Tensor) -> Result<Tensor> {
    let (n, gh, gw, d) = tokens.dims4()?;
    if d != PATCH_DIM {
        return Err(shape_err(format!("expected {PATCH_DIM}-wide tokens, got {d}")));
    }
    Ok(tokens
        .reshape(vec![n, gh, gw, 3, PATCH, PATCH])?
        .permute(vec![0, 3, 1, 4, 2, 5])?
        .reshape((n, 3, gh * PATCH, gw * PATCH))?)
}

/// Per-token affine projection `48 -> C`.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    proj: Linear,
}

impl PatchEmbed {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(s, PATCH_DIM, dim, true)?,
        })
    }

    pub fn from_linear(proj: Linear) -> Self {
        Self { proj }
    }

    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let d = tokens.dims().last().copied().unwrap_or(0);
        if d != PATCH_DIM {
            return Err(shape_err(format!("expected {PATCH_DIM}-wide tokens, got {d}")));
        }
        Ok(self.proj.forward(tokens)?)
    }
}

/// Concatenates each 2x2 neighbourhood into one `4C` token, in the order
/// (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
pub fn concat_neighbourhoods(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(format!("cannot merge an odd {h}x{w} grid")));
    }
    Ok(x.reshape(vec![n, h / 2, 2, w / 2, 2, c])?
        .permute(vec![0, 1, 3, 4, 2, 5])?
        .reshape((n, h / 2, w / 2, 4 * c))?)
}

/// Inverse of [`concat_neighbourhoods`].
pub fn split_neighbourhoods(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c4) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(shape_err(format!("feature width {c4} not divisible by 4")));
    }
    let c = c4 / 4;
    Ok(x.reshape(vec![n, h, w, 2, 2, c])?
        .permute(vec![0, 1, 4, 2, 3, 5])?
        .reshape((n, 2 * h, 2 * w, c))?)
}

/// `(h, w, C) -> (h/2, w/2, 2C)`: neighbourhood concatenation then a linear
/// reduction `4C -> 2C`.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    reduction: Linear,
}

impl PatchMerge {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            reduction: Linear::new(s, 4 * dim, 2 * dim, false)?,
        })
    }

    pub fn from_linear(reduction: Linear) -> Self {
        Self { reduction }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.reduction.forward(&concat_neighbourhoods(x)?)?)
    }
}

/// Decoder mirror of [`PatchMerge`]: `(h, w, 2C) -> (2h, 2w, C)` via a linear
/// expansion `2C -> 4C` and redistribution over the 2x2 neighbourhood.
#[derive(Debug, Clone)]
pub struct PatchSplit {
    expand: Linear,
}

impl PatchSplit {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            expand: Linear::new(s, 2 * dim, 4 * dim, false)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        split_neighbourhoods(&self.expand.forward(x)?)
    }
}
