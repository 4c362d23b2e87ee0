//! Wall-clock comparison of serial GSC against concurrent MU-GSC on the same
//! multi-user workload.

use gsc_core::{ChannelConfig, ImageTensor};
use serde::Serialize;

use crate::config::HarnessConfig;
use crate::error::{HarnessError, Result};
use crate::orchestrator::{make_jobs, run_concurrent, run_serial, JobStatus, RunSettings, TransmissionJob};
use crate::pipeline::Models;

/// Median; the mean of the two middle values for even counts.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeitReport {
    pub images: usize,
    pub users: usize,
    pub workers: usize,
    pub micro_batch: usize,
    pub symbol_rate: f64,
    pub repetitions: usize,
    /// Raw serial GSC wall-clock per repetition.
    pub gsc_runs_s: Vec<f64>,
    pub mu_gsc_runs_s: Vec<f64>,
    pub gsc_median_s: f64,
    pub mu_gsc_median_s: f64,
    pub speedup: f64,
    pub gsc_per_image_s: f64,
    pub mu_gsc_per_image_s: f64,
    /// Serial and concurrent outputs agreed bit for bit in every repetition.
    pub outputs_identical: bool,
}

fn refined_bits(jobs: &[TransmissionJob]) -> Result<Vec<Vec<u32>>> {
    jobs.iter()
        .map(|j| match (&j.status, &j.result) {
            (JobStatus::Done, Some(r)) => Ok(r.refined.to_vec()?.iter().map(|v| v.to_bits()).collect()),
            _ => Err(HarnessError::JobFailed {
                user: j.user_id,
                cause: j.error.clone().unwrap_or_default(),
            }),
        })
        .collect()
}

/// One warm-up pass, then `cfg.timeit.repetitions` timed passes of each
/// mode on the first `cfg.timeit.images` images split over `cfg.mu.users`.
pub fn timeit_gsc_vs_mu(cfg: &HarnessConfig, models: &Models, eval: &ImageTensor) -> Result<TimeitReport> {
    let n = cfg.timeit.images.min(eval.len());
    let images = eval.slice(0, n)?;
    let channel = ChannelConfig::new(cfg.timeit.channel, cfg.timeit.snr_db, cfg.seed);
    let settings = RunSettings {
        workers: cfg.mu.workers,
        symbol_rate: cfg.mu.symbol_rate,
        micro_batch: cfg.mu.micro_batch,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(crate::error::io_err("tokio runtime"))?;

    let jobs = || make_jobs(&images, cfg.mu.users, &channel);
    let (warm, _) = run_serial(jobs()?, models, &settings);
    let reference = refined_bits(&warm)?;

    let mut gsc = Vec::new();
    let mut mu = Vec::new();
    let mut identical = true;
    for _ in 0..cfg.timeit.repetitions {
        let (done, report) = run_serial(jobs()?, models, &settings);
        identical &= refined_bits(&done)? == reference;
        gsc.push(report.total_wall_s);
        let (done, report) = rt.block_on(run_concurrent(jobs()?, models, &settings, None))?;
        identical &= refined_bits(&done)? == reference;
        mu.push(report.total_wall_s);
    }
    let (g, m) = (median(&gsc), median(&mu));
    tracing::info!(gsc_median_s = g, mu_gsc_median_s = m, speedup = g / m, "timeit");
    Ok(TimeitReport {
        images: n,
        users: cfg.mu.users,
        workers: cfg.mu.workers,
        micro_batch: cfg.mu.micro_batch,
        symbol_rate: cfg.mu.symbol_rate,
        repetitions: cfg.timeit.repetitions,
        gsc_runs_s: gsc,
        mu_gsc_runs_s: mu,
        gsc_median_s: g,
        mu_gsc_median_s: m,
        speedup: g / m,
        gsc_per_image_s: g / n as f64,
        mu_gsc_per_image_s: m / n as f64,
        outputs_identical: identical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_small_cases() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 4.0, 2.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        // Half the values lie on each side of the median.
        #[test]
        fn median_splits_the_sample(xs in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let m = median(&xs);
            let below = xs.iter().filter(|&&x| x < m).count();
            let above = xs.iter().filter(|&&x| x > m).count();
            prop_assert!(below <= xs.len() / 2 && above <= xs.len() / 2);
        }
    }
}
