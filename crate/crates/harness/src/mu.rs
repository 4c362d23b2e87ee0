//! The `mu-run` experiment: serial baseline, a cold concurrent pass and a
//! warm pass served from the cache.

use std::path::Path;
use std::sync::Arc;

use gsc_core::{ChannelConfig, ImageTensor};
use serde::Serialize;

use crate::config::HarnessConfig;
use crate::error::{io_err, Result};
use crate::orchestrator::{make_jobs, run_concurrent, run_serial, ResultCache, RunSettings, TimingReport, TransmissionJob};
use crate::pipeline::Models;
use crate::train::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct MuRunReport {
    pub serial: TimingReport,
    pub concurrent: TimingReport,
    pub warm_cache: TimingReport,
    /// Serial wall-clock over concurrent wall-clock.
    pub speedup: f64,
}

pub fn settings(cfg: &HarnessConfig) -> RunSettings {
    RunSettings {
        workers: cfg.mu.workers,
        symbol_rate: cfg.mu.symbol_rate,
        micro_batch: cfg.mu.micro_batch,
    }
}

fn per_user_csv(jobs: &[TransmissionJob]) -> String {
    let mut s = String::from("user,n_images,status,psnr_db,lpips,mse,wall_s,error\n");
    for j in jobs {
        let t = j.timing.unwrap_or_default();
        let (p, l, m) = j
            .result
            .as_ref()
            .map(|r| (r.metrics.psnr_db, r.metrics.lpips, r.metrics.mse))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        let status = serde_json::to_value(j.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let err = j.error.clone().unwrap_or_default().replace([',', '\n'], ";");
        s.push_str(&format!("{},{},{status},{p},{l},{m},{},{err}\n", j.user_id, j.images.len(), t.end_s - t.start_s));
    }
    s
}

pub fn mu_run(cfg: &HarnessConfig, models: &Models, eval: &ImageTensor, snr_db: f64, out: &Path) -> Result<MuRunReport> {
    let kind = cfg.sweep.channels[0];
    let channel = ChannelConfig::new(kind, snr_db, cfg.seed);
    let settings = settings(cfg);
    let (_, serial) = run_serial(make_jobs(eval, cfg.mu.users, &channel)?, models, &settings);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(io_err("tokio runtime"))?;
    let cache = Arc::new(ResultCache::new(cfg.mu.cache_capacity, cfg.mu.shadow_rate));
    let (jobs, concurrent) = rt.block_on(run_concurrent(make_jobs(eval, cfg.mu.users, &channel)?, models, &settings, Some(cache.clone())))?;
    let (_, warm_cache) = rt.block_on(run_concurrent(make_jobs(eval, cfg.mu.users, &channel)?, models, &settings, Some(cache)))?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let p = out.join("mu_results.csv");
    std::fs::write(&p, per_user_csv(&jobs)).map_err(io_err(&p))?;
    let report = MuRunReport {
        speedup: serial.total_wall_s / concurrent.total_wall_s,
        serial,
        concurrent,
        warm_cache,
    };
    write_json(&out.join("mu_timing.json"), &report)?;
    Ok(report)
}
