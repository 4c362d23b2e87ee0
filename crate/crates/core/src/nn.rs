//! Parameter storage and the handful of layers the networks are built from.
//!
//! Parameters are created from a seeded ChaCha stream so that two models
//! built with the same seed are bit-identical, which candle's own
//! initialisers cannot guarantee.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::Optimizer;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    Normal(f64),
}

/// Named, seeded collection of trainable variables.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self::with_dtype(seed, DType::F32)
    }

    pub fn with_dtype(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: rng::substream(seed, &[rng::tag::INIT]),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    fn create(&mut self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} declared twice")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Normal(s) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    z * s
                })
                .collect(),
        };
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?;
        self.insert(name, t)
    }

    fn insert(&mut self, name: String, value: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} declared twice")));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Variables whose name starts with any of the given prefixes.
    pub fn vars_matching(&self, prefixes: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter whose name starts with `prefix`.
    pub fn fill(&self, prefix: &str, value: f64) -> Result<()> {
        for (name, var) in &self.vars {
            if name.starts_with(prefix) {
                let t = (var.as_tensor().zeros_like()? + value)?;
                var.set(&t)?;
            }
        }
        Ok(())
    }

    pub fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let t = var.as_tensor();
                let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((name.clone(), t.dims().to_vec(), data))
            })
            .collect()
    }

    /// Loads values for every parameter. Missing or misshapen entries are errors.
    pub fn import(&self, arrays: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        if arrays.len() != self.vars.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter arrays, found {}",
                self.vars.len(),
                arrays.len()
            )));
        }
        for (name, var) in &self.vars {
            let (shape, data) = arrays
                .get(name)
                .ok_or_else(|| Error::Shape(format!("parameter {name} missing")))?;
            if shape.as_slice() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: stored shape {shape:?}, model shape {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_slice(data, shape.as_slice(), &Device::Cpu)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// A name prefix inside a [`ParamStore`].
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: &mut *self.store,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.create(full, shape, init)
    }

    /// Registers a parameter with an explicit initial value.
    pub fn param_from(&mut self, name: &str, value: Tensor) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.insert(full, value)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &mut Scope, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = s.param("weight", &[out_dim, in_dim], Init::Uniform(bound))?;
        let bias = if bias {
            Some(s.param("bias", &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// Applies the map to the last dimension of `x`, whatever its rank.
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        y.reshape(out)
    }
}

/// Layer normalisation over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[dim], Init::Ones)?,
            bias: s.param("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Layer normalisation across the channel axis of an NCHW tensor.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl ChannelNorm {
    pub fn new(s: &mut Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[1, channels, 1, 1], Init::Ones)?,
            bias: s.param("bias", &[1, channels, 1, 1], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        s: &mut Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = s.param("weight", &[out_ch, in_ch, kernel, kernel], Init::Uniform(bound))?;
        let bias = if bias {
            Some(s.param("bias", &[1, out_ch, 1, 1], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

/// 1x1 convolution written as a batched matmul over `(N, C, H*W)`.
#[derive(Debug, Clone)]
pub struct Pointwise {
    weight: Tensor,
}

impl Pointwise {
    pub fn new(s: &mut Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        let bound = 1.0 / (in_ch as f64).sqrt();
        Ok(Self {
            weight: s.param("weight", &[out_ch, in_ch], Init::Uniform(bound))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let co = self.weight.dim(0)?;
        let flat = x.reshape((n, c, h * w))?;
        let k = self.weight.to_dtype(x.dtype())?.unsqueeze(0)?.broadcast_as((n, co, c))?;
        k.matmul(&flat)?.reshape((n, co, h, w))
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        s: &mut Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((out_ch * kernel * kernel) as f64).sqrt();
        Ok(Self {
            weight: s.param("weight", &[in_ch, out_ch, kernel, kernel], Init::Uniform(bound))?,
            bias: s.param("bias", &[1, out_ch, 1, 1], Init::Zeros)?,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.conv_transpose2d(&self.weight, self.padding, self.output_padding, self.stride, 1)?
            .broadcast_add(&self.bias)
    }
}

/// Depthwise 3x3 convolution (zero padding 1, stride 1) with a hand-written
/// backward pass; weight layout `(C, 1, 3, 3)` as in a grouped convolution.
#[derive(Debug, Clone)]
pub struct DepthwiseConv3 {
    weight: Tensor,
    bias: Tensor,
}

impl DepthwiseConv3 {
    pub fn new(s: &mut Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[channels, 1, 3, 3], Init::Uniform(1.0 / 3.0))?,
            bias: s.param("bias", &[1, channels, 1, 1], Init::Zeros)?,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let w = self.weight.to_dtype(x.dtype())?;
        x.contiguous()?
            .apply_op2(&w.contiguous()?, DepthwiseOp)?
            .broadcast_add(&self.bias.to_dtype(x.dtype())?)
    }
}

mod depthwise {
    use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor, WithDType};

    /// `y[n,c,i,j] = Σ_{dy,dx} x[n,c,i+dy-1,j+dx-1] w[c,dy,dx]`.
    pub(super) struct DepthwiseOp;

    /// Gradient of the input: correlation of `dy` with the flipped kernel.
    struct InputGrad;

    /// Gradient of the kernel.
    struct WeightGrad;

    fn dims(l: &Layout) -> candle_core::Result<(usize, usize, usize, usize)> {
        l.shape().dims4()
    }

    fn slice<'a, T: WithDType>(s: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
        match l.contiguous_offsets() {
            Some((a, b)) => Ok(&s[a..b]),
            None => candle_core::bail!("depthwise conv needs contiguous inputs"),
        }
    }

    /// Rows `i` of the output whose source row `i + dy - 1` is in range.
    fn rows(h: usize, dy: usize) -> std::ops::Range<usize> {
        match dy {
            0 => 1..h,
            1 => 0..h,
            _ => 0..h.saturating_sub(1),
        }
    }

    /// Output columns and the matching source columns for offset `dx`.
    fn cols(w: usize, dx: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        match dx {
            0 => (1..w, 0..w.saturating_sub(1)),
            1 => (0..w, 0..w),
            _ => (0..w.saturating_sub(1), 1..w),
        }
    }

    fn correlate<T: WithDType>(x: &[T], w: &[T], (n, c, h, wd): (usize, usize, usize, usize), flip: bool) -> Vec<T> {
        let mut out = vec![T::zero(); n * c * h * wd];
        let plane = h * wd;
        for (p, (xs, os)) in x.chunks_exact(plane).zip(out.chunks_exact_mut(plane)).enumerate() {
            let k = &w[(p % c) * 9..(p % c) * 9 + 9];
            for dy in 0..3 {
                for dx in 0..3 {
                    let kv = if flip { k[(2 - dy) * 3 + (2 - dx)] } else { k[dy * 3 + dx] };
                    let (oc, sc) = cols(wd, dx);
                    for i in rows(h, dy) {
                        let si = i + dy - 1;
                        let src = &xs[si * wd + sc.start..si * wd + sc.end];
                        let dst = &mut os[i * wd + oc.start..i * wd + oc.end];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += *v * kv;
                        }
                    }
                }
            }
        }
        out
    }

    fn kernel_grad<T: WithDType>(x: &[T], g: &[T], (_, c, h, wd): (usize, usize, usize, usize)) -> Vec<T> {
        let mut out = vec![T::zero(); c * 9];
        let plane = h * wd;
        for (p, (xs, gs)) in x.chunks_exact(plane).zip(g.chunks_exact(plane)).enumerate() {
            let ch = p % c;
            for dy in 0..3 {
                for dx in 0..3 {
                    let (oc, sc) = cols(wd, dx);
                    let mut acc = T::zero();
                    for i in rows(h, dy) {
                        let si = i + dy - 1;
                        let src = &xs[si * wd + sc.start..si * wd + sc.end];
                        let gr = &gs[i * wd + oc.start..i * wd + oc.end];
                        for (a, b) in src.iter().zip(gr) {
                            acc += *a * *b;
                        }
                    }
                    out[ch * 9 + dy * 3 + dx] += acc;
                }
            }
        }
        out
    }

    macro_rules! dispatch {
        ($s1:expr, $l1:expr, $s2:expr, $l2:expr, $f:expr) => {
            match ($s1, $s2) {
                (CpuStorage::F32(a), CpuStorage::F32(b)) => CpuStorage::F32($f(slice(a, $l1)?, slice(b, $l2)?)),
                (CpuStorage::F64(a), CpuStorage::F64(b)) => CpuStorage::F64($f(slice(a, $l1)?, slice(b, $l2)?)),
                _ => candle_core::bail!("depthwise conv supports f32/f64 with matching dtypes"),
            }
        };
    }

    impl CustomOp2 for DepthwiseOp {
        fn name(&self) -> &'static str {
            "depthwise3x3"
        }

        fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
            let d = dims(l1)?;
            if l2.shape().dims() != [d.1, 1, 3, 3] {
                candle_core::bail!("depthwise kernel {:?} for {} channels", l2.shape(), d.1);
            }
            let out = dispatch!(s1, l1, s2, l2, |x, w| correlate(x, w, d, false));
            Ok((out, l1.shape().clone()))
        }

        fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let grad = grad.contiguous()?;
            let gx = grad.apply_op2_no_bwd(w, &InputGrad)?;
            let gw = x.apply_op2_no_bwd(&grad, &WeightGrad)?;
            Ok((Some(gx), Some(gw)))
        }
    }

    impl CustomOp2 for InputGrad {
        fn name(&self) -> &'static str {
            "depthwise3x3-input-grad"
        }

        fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
            let d = dims(l1)?;
            let out = dispatch!(s1, l1, s2, l2, |g, w| correlate(g, w, d, true));
            Ok((out, l1.shape().clone()))
        }
    }

    impl CustomOp2 for WeightGrad {
        fn name(&self) -> &'static str {
            "depthwise3x3-weight-grad"
        }

        fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
            let d = dims(l1)?;
            let out = dispatch!(s1, l1, s2, l2, |x, g| kernel_grad(x, g, d));
            Ok((out, Shape::from((d.1, 1, 3, 3))))
        }
    }
}

use depthwise::DepthwiseOp;

pub fn leaky_relu(x: &Tensor, slope: f64) -> candle_core::Result<Tensor> {
    x.maximum(&(x * slope)?)
}

/// Mean over all elements, returned as a rank-0 tensor.
pub fn mean_all(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean_all()
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn adam(vars: Vec<Var>, lr: f64) -> Result<candle_nn::AdamW> {
    let params = candle_nn::ParamsAdamW {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    Ok(candle_nn::AdamW::new(vars, params)?)
}

/// Backpropagates `loss`, rescales the gradients of `vars` to a global L2
/// norm of at most `max_norm`, and applies one optimiser step.
pub fn clipped_step(
    opt: &mut candle_nn::AdamW,
    vars: &[Var],
    loss: &Tensor,
    max_norm: f64,
) -> Result<()> {
    let mut grads = loss.backward()?;
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            sq += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v) {
                grads.insert(v, (g * scale)?);
            }
        }
    }
    opt.step(&grads)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = || {
            let mut store = ParamStore::new(3);
            let lin = Linear::new(&mut store.root().pp("a"), 4, 3, true).unwrap();
            lin.weight().flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new(0);
        let mut root = store.root();
        root.param("x", &[2], Init::Zeros).unwrap();
        assert!(root.param("x", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn depthwise_matches_grouped_conv() {
        let mut store = ParamStore::new(1);
        let dw = DepthwiseConv3::new(&mut store.root().pp("dw"), 3).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, 5, 4), &Device::Cpu).unwrap();
        let ours = dw.forward(&x).unwrap();
        // Reference: grouped conv with the same taps.
        let reference = x.conv2d(&dw.weight, 1, 1, 1, 3).unwrap();
        let diff = (ours - reference).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f32>().unwrap() < 1e-5);
    }

    /// Nine shifted multiply-adds, differentiated by autograd.
    fn shifted_taps(x: &Tensor, w: &Tensor) -> Tensor {
        let (_, c, h, wd) = x.dims4().unwrap();
        let padded = x.pad_with_zeros(2, 1, 1).unwrap().pad_with_zeros(3, 1, 1).unwrap();
        let mut acc = x.zeros_like().unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                let tap = padded.narrow(2, dy, h).unwrap().narrow(3, dx, wd).unwrap();
                let k = w.narrow(2, dy, 1).unwrap().narrow(3, dx, 1).unwrap().reshape((1, c, 1, 1)).unwrap();
                acc = (acc + tap.broadcast_mul(&k).unwrap()).unwrap();
            }
        }
        acc
    }

    #[test]
    fn depthwise_gradients_match_autograd() {
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, 5, 4), &Device::Cpu).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 1, 3, 3), &Device::Cpu).unwrap()).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (2, 3, 5, 4), &Device::Cpu).unwrap();
        let ours = x.as_tensor().apply_op2(w.as_tensor(), DepthwiseOp).unwrap();
        let theirs = shifted_taps(x.as_tensor(), w.as_tensor());
        let ga = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &w] {
            let d = (ga.get(v).unwrap() - gb.get(v).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
            assert!(d.to_scalar::<f64>().unwrap() < 1e-12);
        }
    }

    #[test]
    fn export_import_roundtrip() {
        let mut a = ParamStore::new(1);
        Linear::new(&mut a.root().pp("l"), 3, 2, true).unwrap();
        let mut b = ParamStore::new(2);
        let lb = Linear::new(&mut b.root().pp("l"), 3, 2, true).unwrap();
        let arrays = a
            .export()
            .unwrap()
            .into_iter()
            .map(|(n, s, d)| (n, (s, d)))
            .collect();
        b.import(&arrays).unwrap();
        let wa = a.get("l.weight").unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let wb = lb.weight().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(wa, wb);
    }
}
