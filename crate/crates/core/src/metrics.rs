//! Image-quality metrics: MSE, PSNR and a feature-space perceptual distance.

use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::rng;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub mse: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub per_image: Vec<MetricReport>,
    pub mean: MetricReport,
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    let d = (a.to_dtype(DType::F64)? - b.to_dtype(DType::F64)?)?;
    Ok(d.sqr()?.mean_all()?.to_scalar::<f64>()?)
}

/// `10 log10(1 / mse)` for unit-peak images, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Per-image MSE for two `(N, ...)` batches.
pub fn per_image_mse(a: &ImageTensor, b: &ImageTensor) -> Result<Vec<f64>> {
    check_same(a.tensor(), b.tensor())?;
    let n = a.len();
    let d = (a.tensor().to_dtype(DType::F64)? - b.tensor().to_dtype(DType::F64)?)?;
    Ok(d.sqr()?.reshape((n, ()))?.mean(1)?.to_vec1::<f64>()?)
}

/// Maps an image batch to a list of feature maps `(N, C_l, H_l, W_l)`.
pub trait FeatureBackbone: Send + Sync {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;
}

/// Fixed random-weight convolutional pyramid: a stem at full resolution
/// followed by stride-2 stages, ReLU after each, one feature map per level.
#[derive(Debug, Clone)]
pub struct RandomConvPyramid {
    layers: Vec<(Tensor, Tensor, usize)>,
}

impl RandomConvPyramid {
    pub const DEFAULT_SEED: u64 = 0x1f1f_5eed;

    pub fn new(seed: u64) -> Result<Self> {
        Self::with_channels(seed, &[16, 32, 64, 64, 64])
    }

    pub fn with_channels(seed: u64, channels: &[usize]) -> Result<Self> {
        let mut rng = rng::substream(seed, &[rng::tag::INIT]);
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (level, &c_out) in channels.iter().enumerate() {
            let fan_in = c_in * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f32> = (0..c_out * fan_in)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect();
            let b: Vec<f32> = (0..c_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * 0.01) as f32
                })
                .collect();
            let stride = if level == 0 { 1 } else { 2 };
            layers.push((
                Tensor::from_vec(w, (c_out, c_in, 3, 3), &Device::Cpu)?,
                Tensor::from_vec(b, (1, c_out, 1, 1), &Device::Cpu)?,
                stride,
            ));
            c_in = c_out;
        }
        Ok(Self { layers })
    }
}

impl Default for RandomConvPyramid {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED).expect("static pyramid construction")
    }
}

impl FeatureBackbone for RandomConvPyramid {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        // Same [-1, 1] input scaling as the reference perceptual metric.
        let mut x = images.to_dtype(DType::F32)?.affine(2.0, -1.0)?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, b, stride) in &self.layers {
            if x.dim(2)? < 2 || x.dim(3)? < 2 {
                break;
            }
            x = x.conv2d(w, 1, *stride, 1, 1)?.broadcast_add(b)?.relu()?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

fn unit_normalize_channels(f: &Tensor) -> Result<Tensor> {
    let norm = (f.sqr()?.sum_keepdim(1)? + 1e-10)?.sqrt()?;
    Ok(f.broadcast_div(&norm)?)
}

/// Per-image perceptual distance: for every backbone level, channel-wise
/// unit-normalised features are compared by squared difference summed over
/// channels and averaged over space; levels are then averaged.
pub fn perceptual_distance(
    a: &ImageTensor,
    b: &ImageTensor,
    backbone: Option<&dyn FeatureBackbone>,
) -> Result<Vec<f64>> {
    let backbone = backbone.ok_or(Error::MissingBackbone)?;
    check_same(a.tensor(), b.tensor())?;
    let n = a.len();
    let fa = backbone.features(a.tensor())?;
    let fb = backbone.features(b.tensor())?;
    if fa.is_empty() {
        return Err(Error::Config("backbone produced no feature maps".into()));
    }
    let mut total = vec![0.0; n];
    for (x, y) in fa.iter().zip(&fb) {
        let d = (unit_normalize_channels(x)? - unit_normalize_channels(y)?)?
            .sqr()?
            .sum(1)?
            .reshape((n, ()))?
            .mean(1)?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        for (t, v) in total.iter_mut().zip(d) {
            *t += v;
        }
    }
    let levels = fa.len() as f64;
    Ok(total.into_iter().map(|t| t / levels).collect())
}

/// Per-image reports plus their plain average.
pub fn evaluate(
    reference: &ImageTensor,
    candidate: &ImageTensor,
    backbone: &dyn FeatureBackbone,
) -> Result<BatchMetrics> {
    let mses = per_image_mse(reference, candidate)?;
    let lp = perceptual_distance(reference, candidate, Some(backbone))?;
    let per_image: Vec<MetricReport> = mses
        .iter()
        .zip(&lp)
        .map(|(&m, &l)| MetricReport {
            psnr_db: psnr_from_mse(m),
            mse: m,
            lpips: l,
        })
        .collect();
    let mean = mean_report(&per_image);
    Ok(BatchMetrics { per_image, mean })
}

pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    MetricReport {
        psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        lpips: reports.iter().map(|r| r.lpips).sum::<f64>() / n,
    }
}
