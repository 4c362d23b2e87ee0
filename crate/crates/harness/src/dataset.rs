//! Dataset ingest: CIFAR-10 binary batches, image directories, or the
//! procedural set from `gsc_core::synth`.

use std::path::{Path, PathBuf};

use gsc_core::synth::synthetic_images;
use gsc_core::ImageTensor;

use crate::config::{DataConfig, DataSource};
use crate::error::{io_err, HarnessError, Result};

pub const CIFAR_SIDE: usize = 32;
/// One label byte followed by the R, G and B planes.
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Offset of the first evaluation image in the synthetic index space, far
/// beyond any training set.
const SYNTH_EVAL_OFFSET: u64 = 1 << 32;

/// Decodes CIFAR-10 binary records, dropping labels. Planes are already
/// channel-major so a record maps straight onto `(3, 32, 32)`.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(HarnessError::Dataset {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / CIFAR_RECORD * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(HarnessError::Dataset {
                path: path.to_path_buf(),
                reason: format!("label byte {} out of range", rec[0]),
            });
        }
        out.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(out)
}

pub fn load_cifar_file(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let data = parse_cifar_records(&bytes, path)?;
    let n = data.len() / (3 * CIFAR_SIDE * CIFAR_SIDE);
    Ok(ImageTensor::from_vec(data, n, CIFAR_SIDE, CIFAR_SIDE)?)
}

fn cifar_files(dir: &Path) -> Result<(Vec<PathBuf>, Option<PathBuf>)> {
    let mut train = Vec::new();
    let mut test = None;
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    for e in entries {
        let p = e.map_err(io_err(dir))?.path();
        match p.file_name().and_then(|n| n.to_str()) {
            Some(n) if n.starts_with("data_batch_") && n.ends_with(".bin") => train.push(p),
            Some("test_batch.bin") => test = Some(p),
            _ => {}
        }
    }
    train.sort();
    Ok((train, test))
}

/// Every readable image in `dir`, sorted by file name, converted to 8-bit
/// RGB and scaled to `[0, 1]`. All images must share one size.
pub fn load_image_dir(dir: &Path) -> Result<ImageTensor> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::EmptyDataset(dir.to_path_buf()));
    }
    let mut data = Vec::new();
    let mut size = None;
    for p in &paths {
        let img = image::open(p)
            .map_err(|e| HarnessError::Dataset {
                path: p.clone(),
                reason: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        match size {
            None => size = Some((h as usize, w as usize)),
            Some(s) if s != (h as usize, w as usize) => {
                return Err(HarnessError::Dataset {
                    path: p.clone(),
                    reason: format!("size {w}x{h} differs from the first image {}x{}", s.1, s.0),
                })
            }
            _ => {}
        }
        let (h, w) = (h as usize, w as usize);
        let raw = img.into_raw();
        for c in 0..3 {
            data.extend((0..h * w).map(|i| raw[3 * i + c] as f32 / 255.0));
        }
    }
    let (h, w) = size.expect("at least one image");
    ImageTensor::from_vec(data, paths.len(), h, w).map_err(|e| HarnessError::Dataset {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })
}

fn take(set: &ImageTensor, start: usize, n: usize, path: &Path) -> Result<ImageTensor> {
    if start + n > set.len() {
        return Err(HarnessError::Dataset {
            path: path.to_path_buf(),
            reason: format!("needs {} images, found {}", start + n, set.len()),
        });
    }
    Ok(set.slice(start, n)?)
}

/// Training and evaluation sets. A CIFAR directory splits into its
/// `data_batch_*` and `test_batch` files; a single file or an image
/// directory gives its first images to training and the next to evaluation.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: ImageTensor,
    pub eval: ImageTensor,
}

pub fn load_splits(cfg: &DataConfig) -> Result<Splits> {
    match &cfg.source {
        DataSource::Synthetic => Ok(Splits {
            train: synthetic_images(cfg.train_images, 32, 32, cfg.seed, 0)?,
            eval: synthetic_images(cfg.eval_images, 32, 32, cfg.seed, SYNTH_EVAL_OFFSET)?,
        }),
        DataSource::Cifar(path) if path.is_dir() => {
            let (train_files, test) = cifar_files(path)?;
            let test = test.ok_or_else(|| HarnessError::Dataset {
                path: path.clone(),
                reason: "no test_batch.bin".into(),
            })?;
            let mut parts = Vec::new();
            let mut have = 0;
            for f in &train_files {
                if have >= cfg.train_images {
                    break;
                }
                let part = load_cifar_file(f)?;
                have += part.len();
                parts.push(part);
            }
            let train = if cfg.train_images == 0 {
                load_cifar_file(&test)?.slice(0, 0)?
            } else if parts.is_empty() {
                return Err(HarnessError::Dataset {
                    path: path.clone(),
                    reason: "no data_batch_*.bin files".into(),
                });
            } else {
                take(&ImageTensor::concat(&parts)?, 0, cfg.train_images, path)?
            };
            let eval = take(&load_cifar_file(&test)?, 0, cfg.eval_images, &test)?;
            Ok(Splits { train, eval })
        }
        DataSource::Cifar(path) => {
            let all = load_cifar_file(path)?;
            Ok(Splits {
                train: take(&all, 0, cfg.train_images, path)?,
                eval: take(&all, cfg.train_images, cfg.eval_images, path)?,
            })
        }
        DataSource::ImageDir(path) => {
            let all = load_image_dir(path)?;
            Ok(Splits {
                train: take(&all, 0, cfg.train_images, path)?,
                eval: take(&all, cfg.train_images, cfg.eval_images, path)?,
            })
        }
    }
}
