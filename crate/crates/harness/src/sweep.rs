//! SNR sweeps over every configured system with paired channel
//! realisations, CSV output and the ablation pairing check.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use gsc_core::metrics::{evaluate, MetricReport};
use gsc_core::{ChannelConfig, ChannelKind, ImageTensor};
use serde::Serialize;

use crate::config::{HarnessConfig, System};
use crate::error::{io_err, HarnessError, Result};
use crate::orchestrator::{make_jobs, run_concurrent, JobStatus, RunSettings};
use crate::pipeline::{self, Models, CODEC_FILE, DEEPJSCC_FILE, SFT_FILE};

pub const CSV_HEADER: &str = "system,channel,snr_db,seed,psnr_db,lpips,mse,runtime_s,n_images,status";
/// Columns that hold wall-clock measurements and are excluded from
/// reproducibility comparisons.
pub const TIMING_COLUMNS: &[&str] = &["runtime_s"];

/// Single-user rows use this user id in their stream keys.
pub const SWEEP_USER: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub system: System,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
    pub psnr_db: f64,
    pub lpips: f64,
    pub mse: f64,
    pub runtime_s: f64,
    pub n_images: usize,
    /// `ok`, or why the system was skipped.
    pub status: String,
}

impl ResultRow {
    fn ok(system: System, ch: &ChannelConfig, m: MetricReport, runtime_s: f64, n_images: usize) -> Self {
        Self {
            system,
            channel: ch.kind,
            snr_db: ch.snr_db,
            seed: ch.seed,
            psnr_db: m.psnr_db,
            lpips: m.lpips,
            mse: m.mse,
            runtime_s,
            n_images,
            status: "ok".into(),
        }
    }

    fn skipped(system: System, ch: &ChannelConfig, n_images: usize, why: String) -> Self {
        Self {
            system,
            channel: ch.kind,
            snr_db: ch.snr_db,
            seed: ch.seed,
            psnr_db: f64::NAN,
            lpips: f64::NAN,
            mse: f64::NAN,
            runtime_s: 0.0,
            n_images,
            status: why,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.system, self.channel, self.snr_db, self.seed, self.psnr_db, self.lpips, self.mse, self.runtime_s, self.n_images, self.status
        )
    }
}

/// Appends rows to `results.csv`, writing the header on creation and
/// refusing files with a different schema.
pub struct CsvWriter {
    file: std::fs::File,
}

impl CsvWriter {
    pub fn open(path: &Path) -> Result<Self> {
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let head = text.lines().next().unwrap_or("");
            if !head.is_empty() && head != CSV_HEADER {
                return Err(HarnessError::Config(format!(
                    "{} has header {head:?}, expected {CSV_HEADER:?}",
                    path.display()
                )));
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() == 0 {
            writeln!(file, "{CSV_HEADER}").map_err(io_err(path))?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(io_err("results.csv"))
    }
}

/// Drops the timing columns from CSV text, for reproducibility checks.
pub fn strip_timing(csv: &str) -> String {
    let cols: Vec<&str> = CSV_HEADER.split(',').collect();
    let keep: Vec<usize> = (0..cols.len()).filter(|&i| !TIMING_COLUMNS.contains(&cols[i])).collect();
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            keep.iter().filter_map(|&i| f.get(i).copied()).collect::<Vec<_>>().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-cell outcome of the classical link.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalCell {
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
    pub failure_rate: f64,
    pub psnr_db: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub classical: Vec<ClassicalCell>,
    /// GSC/NGF cells whose `Ŝ` hashes were compared; all must match.
    pub paired_cells: usize,
}

impl SweepOutput {
    pub fn row(&self, system: System, channel: ChannelKind, snr_db: f64, seed: u64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.channel == channel && r.snr_db == snr_db && r.seed == seed)
    }

    /// Seed-averaged metric per SNR for one system and channel.
    pub fn curve(&self, system: System, channel: ChannelKind, metric: impl Fn(&ResultRow) -> f64) -> Vec<(f64, f64)> {
        let mut snrs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.system == system && r.channel == channel && r.status == "ok")
            .map(|r| r.snr_db)
            .collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        snrs.into_iter()
            .map(|s| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.system == system && r.channel == channel && r.snr_db == s && r.status == "ok")
                    .map(&metric)
                    .collect();
                (s, v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

fn missing(file: &str) -> String {
    format!("missing_checkpoint:{file}")
}

/// Runs every (channel, SNR, seed, system) cell on `eval`. All systems in a
/// cell share one `ChannelConfig` and the stream keys `(0, i)`, so they see
/// the same noise and fading realisation.
pub fn run_sweep(cfg: &HarnessConfig, models: &Models, eval: &ImageTensor, mut sink: impl FnMut(&ResultRow) -> Result<()>) -> Result<SweepOutput> {
    let mut out = SweepOutput::default();
    let n = eval.len();
    let mb = cfg.mu.micro_batch;
    let systems = &cfg.sweep.systems;
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(io_err("tokio runtime"))?;
    let mut push = |row: ResultRow, out: &mut SweepOutput| -> Result<()> {
        sink(&row)?;
        out.rows.push(row);
        Ok(())
    };
    for &kind in &cfg.sweep.channels {
        for &snr in &cfg.sweep.snr_grid {
            for seed in cfg.sweep_seeds() {
                let ch = ChannelConfig::new(kind, snr, seed);
                tracing::info!(%kind, snr, seed, "sweep cell");
                // GSC and NGF must decode the same Ŝ; whichever runs second checks.
                let mut s_hat_hash: Option<String> = None;
                let mut pair = |h: String, out: &mut SweepOutput| -> Result<()> {
                    match &s_hat_hash {
                        Some(prev) if prev != &h => Err(HarnessError::Config(format!(
                            "GSC and NGF decoded different images at {kind} {snr} dB seed {seed}"
                        ))),
                        Some(_) => {
                            out.paired_cells += 1;
                            Ok(())
                        }
                        None => {
                            s_hat_hash = Some(h);
                            Ok(())
                        }
                    }
                };
                for &system in systems {
                    let row = match system {
                        System::Ngf => match &models.codec {
                            None => ResultRow::skipped(system, &ch, n, missing(CODEC_FILE)),
                            Some(codec) => {
                                let t = Instant::now();
                                let s_hat = pipeline::run_ngf(codec, eval, &ch, SWEEP_USER, 0, mb)?;
                                let dt = t.elapsed().as_secs_f64();
                                pair(s_hat.content_hash()?, &mut out)?;
                                ResultRow::ok(system, &ch, evaluate(eval, &s_hat, models.backbone.as_ref())?.mean, dt, n)
                            }
                        },
                        System::Gsc => match (&models.codec, &models.sft) {
                            (None, _) => ResultRow::skipped(system, &ch, n, missing(CODEC_FILE)),
                            (_, None) => ResultRow::skipped(system, &ch, n, missing(SFT_FILE)),
                            (Some(codec), Some(sft)) => {
                                let t = Instant::now();
                                let (s_hat, refined) = pipeline::run_gsc(codec, sft, eval, &ch, SWEEP_USER, 0, mb)?;
                                let dt = t.elapsed().as_secs_f64();
                                pair(s_hat.content_hash()?, &mut out)?;
                                ResultRow::ok(system, &ch, evaluate(eval, &refined, models.backbone.as_ref())?.mean, dt, n)
                            }
                        },
                        System::DeepJscc => match &models.deepjscc {
                            None => ResultRow::skipped(system, &ch, n, missing(DEEPJSCC_FILE)),
                            Some(m) => {
                                let t = Instant::now();
                                let img = pipeline::run_deepjscc(m, eval, &ch, SWEEP_USER, 0, mb)?;
                                let dt = t.elapsed().as_secs_f64();
                                ResultRow::ok(system, &ch, evaluate(eval, &img, models.backbone.as_ref())?.mean, dt, n)
                            }
                        },
                        System::Classical => {
                            let t = Instant::now();
                            let (img, status) = pipeline::run_classical(&models.classical, eval, &ch, SWEEP_USER, 0)?;
                            let dt = t.elapsed().as_secs_f64();
                            let m = evaluate(eval, &img, models.backbone.as_ref())?.mean;
                            let failed = status.iter().filter(|s| **s != gsc_core::baseline::DecodeStatus::Ok).count();
                            out.classical.push(ClassicalCell {
                                channel: kind,
                                snr_db: snr,
                                seed,
                                failure_rate: failed as f64 / n.max(1) as f64,
                                psnr_db: m.psnr_db,
                            });
                            ResultRow::ok(system, &ch, m, dt, n)
                        }
                        System::MuGsc => match (&models.codec, &models.sft) {
                            (None, _) => ResultRow::skipped(system, &ch, n, missing(CODEC_FILE)),
                            (_, None) => ResultRow::skipped(system, &ch, n, missing(SFT_FILE)),
                            _ => {
                                let settings = RunSettings {
                                    workers: cfg.mu.workers,
                                    symbol_rate: cfg.mu.symbol_rate,
                                    micro_batch: mb,
                                };
                                let jobs = make_jobs(eval, cfg.mu.users, &ch)?;
                                let (jobs, report) = runtime.block_on(run_concurrent(jobs, models, &settings, None))?;
                                if let Some(j) = jobs.iter().find(|j| j.status != JobStatus::Done) {
                                    return Err(HarnessError::JobFailed {
                                        user: j.user_id,
                                        cause: j.error.clone().unwrap_or_default(),
                                    });
                                }
                                let parts: Vec<ImageTensor> = jobs.iter().map(|j| j.result.as_ref().unwrap().refined.clone()).collect();
                                let all = ImageTensor::concat(&parts)?;
                                ResultRow::ok(system, &ch, evaluate(eval, &all, models.backbone.as_ref())?.mean, report.total_wall_s, n)
                            }
                        },
                    };
                    push(row, &mut out)?;
                }
            }
        }
    }
    Ok(out)
}

/// Sweep plus `results.csv`, the classical failure table and the plots.
pub fn sweep_to_dir(cfg: &HarnessConfig, models: &Models, eval: &ImageTensor, out_dir: &Path) -> Result<SweepOutput> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut csv = CsvWriter::open(&out_dir.join("results.csv"))?;
    let out = run_sweep(cfg, models, eval, |row| csv.append(row))?;
    let mut text = String::from("channel,snr_db,seed,failure_rate,psnr_db\n");
    for c in &out.classical {
        text.push_str(&format!("{},{},{},{},{}\n", c.channel, c.snr_db, c.seed, c.failure_rate, c.psnr_db));
    }
    if !out.classical.is_empty() {
        let p = out_dir.join("classical_failures.csv");
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    crate::plot::write_plots(&out, &cfg.sweep.channels, out_dir)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_timing_drops_runtime_column() {
        let csv = format!("{CSV_HEADER}\nGSC,awgn,0,1,20.5,0.1,0.01,3.25,200,ok");
        let s = strip_timing(&csv);
        assert!(!s.contains("runtime_s") && !s.contains("3.25"));
        assert!(s.ends_with("GSC,awgn,0,1,20.5,0.1,0.01,200,ok"));
    }

    #[test]
    fn writer_appends_and_checks_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        let ch = ChannelConfig::new(ChannelKind::Awgn, 3.0, 0);
        let row = ResultRow::skipped(System::Gsc, &ch, 10, "missing_checkpoint:codec.ckpt".into());
        CsvWriter::open(&p).unwrap().append(&row).unwrap();
        CsvWriter::open(&p).unwrap().append(&row).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        std::fs::write(&p, "a,b\n").unwrap();
        assert!(CsvWriter::open(&p).is_err());
    }
}
