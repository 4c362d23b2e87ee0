//! Training entry points that write checkpoints and loss logs under the
//! output root.

use std::path::Path;

use gsc_core::baseline::{train_deepjscc, DeepJscc};
use gsc_core::codec::{train_codec, SwinJscc};
use gsc_core::diffusion::{pretrain_stage, train_diffusion_stage, SftModel, KIND_DIFFUSION, KIND_PRETRAINED};
use gsc_core::train::TrainReport;
use gsc_core::ImageTensor;
use serde::Serialize;

use crate::config::HarnessConfig;
use crate::error::{io_err, Result};
use crate::pipeline::{checkpoint_dir, CODEC_FILE, DEEPJSCC_FILE, SFT_FILE};

pub const SFT_PRETRAINED_FILE: &str = "sft_pretrained.ckpt";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Serialize)]
struct LossLog<'a> {
    model: &'a str,
    steps: usize,
    seconds: f64,
    step_losses: &'a [f64],
    epoch_losses: &'a [f64],
}

fn log_report(out: &Path, model: &str, r: &TrainReport, seconds: f64) -> Result<()> {
    write_json(
        &out.join(format!("train_{model}.json")),
        &LossLog {
            model,
            steps: r.step_losses.len(),
            seconds,
            step_losses: &r.step_losses,
            epoch_losses: &r.epoch_losses,
        },
    )
}

pub fn train_codec_to(cfg: &HarnessConfig, train: &ImageTensor, out: &Path) -> Result<SwinJscc> {
    let codec = SwinJscc::new(&cfg.codec.arch())?;
    let t = std::time::Instant::now();
    let r = train_codec(&codec, train, &cfg.codec, &cfg.sweep.channels)?;
    let dir = checkpoint_dir(out);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    codec.save(dir.join(CODEC_FILE))?;
    log_report(out, "codec", &r, t.elapsed().as_secs_f64())?;
    Ok(codec)
}

#[derive(Serialize)]
struct SftLog<'a> {
    pretrain: &'a [f64],
    total: &'a [f64],
    l_pre: &'a [f64],
    l_diff: &'a [f64],
    seconds: f64,
}

/// Both stages against a trained codec. The stage-one model is kept as its
/// own checkpoint.
pub fn train_sft_to(cfg: &HarnessConfig, codec: &SwinJscc, train: &ImageTensor, out: &Path) -> Result<SftModel> {
    let model = SftModel::new(&cfg.sft.arch())?;
    let t = std::time::Instant::now();
    let pre = pretrain_stage(&model, codec, train, &cfg.sft, &cfg.sweep.channels)?;
    let dir = checkpoint_dir(out);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    model.save(KIND_PRETRAINED, dir.join(SFT_PRETRAINED_FILE))?;
    let diff = train_diffusion_stage(&model, codec, train, &cfg.sft, &cfg.sweep.channels)?;
    model.save(KIND_DIFFUSION, dir.join(SFT_FILE))?;
    write_json(
        &out.join("train_sft.json"),
        &SftLog {
            pretrain: &pre.step_losses,
            total: &diff.total.step_losses,
            l_pre: &diff.l_pre,
            l_diff: &diff.l_diff,
            seconds: t.elapsed().as_secs_f64(),
        },
    )?;
    Ok(model)
}

pub fn train_deepjscc_to(cfg: &HarnessConfig, train: &ImageTensor, out: &Path) -> Result<DeepJscc> {
    let model = DeepJscc::new(&cfg.deepjscc.arch())?;
    let t = std::time::Instant::now();
    let r = train_deepjscc(&model, train, &cfg.deepjscc, &cfg.sweep.channels)?;
    let dir = checkpoint_dir(out);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    model.save(dir.join(DEEPJSCC_FILE))?;
    log_report(out, "deepjscc", &r, t.elapsed().as_secs_f64())?;
    Ok(model)
}
