//! Multi-user transmission: per-user data segmentation, asynchronous
//! concurrent processing in micro-batch subtasks, and a bounded result cache.
//!
//! Each subtask is encode, air interface, then receive and refine. The air
//! interface is simulated as a wait proportional to the channel uses, so on
//! a machine with few cores the concurrency gain comes from overlapping one
//! user's airtime with another user's compute. Outputs are a pure function
//! of (images, dataset indices, user id, channel config, models): scheduling
//! only changes timings.

use std::num::NonZeroUsize;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gsc_core::metrics::{evaluate, MetricReport};
use gsc_core::{ChannelConfig, ImageTensor, StreamKey};
use lru::LruCache;
use serde::Serialize;
use tokio::sync::{OnceCell, Semaphore};

use crate::error::{HarnessError, Result};
use crate::pipeline::{encode, micro_batches, receive, Models};

/// Splits `n` dataset indices into `k` contiguous, disjoint, exhaustive
/// streams; the first `n % k` users get one extra image.
pub fn segment_users(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 {
        return Err(HarnessError::Config("at least one user is required".into()));
    }
    if k > n {
        return Err(HarnessError::Config(format!("{k} users but only {n} images")));
    }
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    Ok((0..k)
        .map(|u| {
            let len = base + usize::from(u < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub s_hat: ImageTensor,
    pub refined: ImageTensor,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct JobTiming {
    /// Seconds since the start of the run.
    pub start_s: f64,
    pub end_s: f64,
    pub compute_s: f64,
    pub airtime_s: f64,
}

/// One user's transmission task.
#[derive(Debug, Clone)]
pub struct TransmissionJob {
    pub user_id: usize,
    pub images: ImageTensor,
    /// Dataset index of the first image; stream keys are `(user, index)`.
    pub first_index: u64,
    /// Channel and seed; `channel.seed` is the job seed.
    pub channel: ChannelConfig,
    pub status: JobStatus,
    pub result: Option<JobResult>,
    pub error: Option<String>,
    pub timing: Option<JobTiming>,
}

impl TransmissionJob {
    pub fn new(user_id: usize, images: ImageTensor, first_index: u64, channel: ChannelConfig) -> Self {
        Self {
            user_id,
            images,
            first_index,
            channel,
            status: JobStatus::Pending,
            result: None,
            error: None,
            timing: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.channel.seed
    }
}

/// One job per user over the segments of `images`.
pub fn make_jobs(images: &ImageTensor, users: usize, channel: &ChannelConfig) -> Result<Vec<TransmissionJob>> {
    segment_users(images.len(), users)?
        .into_iter()
        .enumerate()
        .map(|(u, r)| {
            let part = images.slice(r.start, r.len())?;
            Ok(TransmissionJob::new(u, part, r.start as u64, *channel))
        })
        .collect()
}

/// Output of one micro-batch subtask.
#[derive(Debug, Clone)]
pub struct MicroOutput {
    pub s_hat: ImageTensor,
    pub refined: ImageTensor,
}

impl MicroOutput {
    fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &ImageTensor, b: &ImageTensor| match (a.to_vec(), b.to_vec()) {
            (Ok(x), Ok(y)) => x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()),
            _ => false,
        };
        same(&self.s_hat, &other.s_hat) && same(&self.refined, &other.refined)
    }
}

/// Digest of everything a micro-batch output depends on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    /// Besides model version, content, channel kind, SNR and seed, the key
    /// covers the stream keys, since they select the noise realisation.
    pub fn new(model_version: &str, images: &ImageTensor, channel: &ChannelConfig, keys: &[StreamKey]) -> Result<Self> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(model_version.as_bytes());
        h.update(images.content_hash()?.as_bytes());
        h.update(channel.kind.as_str().as_bytes());
        h.update(channel.snr_db.to_bits().to_le_bytes());
        h.update(channel.power.to_bits().to_le_bytes());
        h.update(channel.seed.to_le_bytes());
        for k in keys {
            h.update(k.user.to_le_bytes());
            h.update(k.image.to_le_bytes());
        }
        Ok(Self(format!("{:x}", h.finalize())))
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub evictions: u64,
    pub shadow_checks: u64,
    pub shadow_mismatches: u64,
}

type Slot = Arc<OnceCell<Arc<MicroOutput>>>;

/// LRU cache with atomic get-or-compute: racing requests for one key share
/// a single computation.
pub struct ResultCache {
    slots: Mutex<LruCache<CacheKey, Slot>>,
    shadow_rate: f64,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    shadow_checks: AtomicU64,
    shadow_mismatches: AtomicU64,
}

impl ResultCache {
    pub fn new(capacity: usize, shadow_rate: f64) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self {
            slots: Mutex::new(LruCache::new(cap)),
            shadow_rate,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            shadow_checks: AtomicU64::new(0),
            shadow_mismatches: AtomicU64::new(0),
        }
    }

    fn slot(&self, key: &CacheKey) -> Slot {
        let mut slots = self.slots.lock().expect("cache lock");
        if let Some(s) = slots.get(key) {
            return s.clone();
        }
        let s: Slot = Arc::new(OnceCell::new());
        if let Some((old, _)) = slots.push(key.clone(), s.clone()) {
            if &old != key {
                self.evictions.fetch_add(1, Ordering::Relaxed);
                tracing::debug!(key = %old.0, "cache eviction");
            }
        }
        s
    }

    /// Returns the cached output and whether it was a hit. On a
    /// deterministic `shadow_rate` fraction of hits the producer is rerun and
    /// compared bit for bit.
    pub async fn get_or_compute<F, Fut>(&self, key: &CacheKey, producer: F) -> Result<(Arc<MicroOutput>, bool)>
    where
        F: Fn() -> Fut,
        Fut: std::future::Future<Output = Result<MicroOutput>>,
    {
        let slot = self.slot(key);
        let mut computed = false;
        let value = slot
            .get_or_try_init(|| {
                computed = true;
                let fut = producer();
                async move { fut.await.map(Arc::new) }
            })
            .await?
            .clone();
        if computed {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok((value, false));
        }
        let n = self.hits.fetch_add(1, Ordering::Relaxed) + 1;
        let every = if self.shadow_rate > 0.0 { (1.0 / self.shadow_rate).round().max(1.0) as u64 } else { 0 };
        if every > 0 && n % every == 0 {
            self.shadow_checks.fetch_add(1, Ordering::Relaxed);
            let fresh = producer().await?;
            if !fresh.bit_eq(&value) {
                self.shadow_mismatches.fetch_add(1, Ordering::Relaxed);
                tracing::error!(key = %key.0, "shadow recomputation differs from cached value");
            }
        }
        Ok((value, true))
    }

    pub fn stats(&self) -> CacheStats {
        let hits = self.hits.load(Ordering::Relaxed);
        let misses = self.misses.load(Ordering::Relaxed);
        CacheStats {
            hits,
            misses,
            hit_rate: if hits + misses == 0 { 0.0 } else { hits as f64 / (hits + misses) as f64 },
            evictions: self.evictions.load(Ordering::Relaxed),
            shadow_checks: self.shadow_checks.load(Ordering::Relaxed),
            shadow_mismatches: self.shadow_mismatches.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub workers: usize,
    pub symbol_rate: f64,
    pub micro_batch: usize,
}

impl RunSettings {
    pub fn airtime(&self, channel_uses: usize) -> Duration {
        Duration::from_secs_f64(channel_uses as f64 / self.symbol_rate)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UserTiming {
    pub user: usize,
    pub n_images: usize,
    pub status: JobStatus,
    pub error: Option<String>,
    pub start_s: f64,
    pub end_s: f64,
    pub wall_s: f64,
    pub compute_s: f64,
    pub airtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub mode: &'static str,
    pub users: usize,
    pub workers: usize,
    pub micro_batch: usize,
    pub symbol_rate: f64,
    pub n_images: usize,
    pub total_wall_s: f64,
    /// Sum of the per-user wall-clock times.
    pub sum_user_wall_s: f64,
    pub per_image_s: f64,
    pub per_user: Vec<UserTiming>,
    pub cache: Option<CacheStats>,
}

fn timing_report(mode: &'static str, jobs: &[TransmissionJob], settings: &RunSettings, total: f64, cache: Option<&ResultCache>) -> TimingReport {
    let per_user: Vec<UserTiming> = jobs
        .iter()
        .map(|j| {
            let t = j.timing.unwrap_or_default();
            UserTiming {
                user: j.user_id,
                n_images: j.images.len(),
                status: j.status,
                error: j.error.clone(),
                start_s: t.start_s,
                end_s: t.end_s,
                wall_s: t.end_s - t.start_s,
                compute_s: t.compute_s,
                airtime_s: t.airtime_s,
            }
        })
        .collect();
    let n_images = jobs.iter().map(|j| j.images.len()).sum::<usize>();
    TimingReport {
        mode,
        users: jobs.len(),
        workers: settings.workers,
        micro_batch: settings.micro_batch,
        symbol_rate: settings.symbol_rate,
        n_images,
        total_wall_s: total,
        sum_user_wall_s: per_user.iter().map(|u| u.wall_s).sum(),
        per_image_s: total / n_images.max(1) as f64,
        per_user,
        cache: cache.map(ResultCache::stats),
    }
}

fn finish_job(job: &mut TransmissionJob, models: &Models, parts: Result<Vec<MicroOutput>>, timing: JobTiming) {
    job.timing = Some(timing);
    let outcome = parts.and_then(|parts| {
        let s: Vec<ImageTensor> = parts.iter().map(|p| p.s_hat.clone()).collect();
        let r: Vec<ImageTensor> = parts.iter().map(|p| p.refined.clone()).collect();
        let s_hat = ImageTensor::concat(&s)?;
        let refined = ImageTensor::concat(&r)?;
        let metrics = evaluate(&job.images, &refined, models.backbone.as_ref())?.mean;
        Ok(JobResult { s_hat, refined, metrics })
    });
    match outcome {
        Ok(res) => {
            job.result = Some(res);
            job.status = JobStatus::Done;
        }
        Err(e) => {
            job.error = Some(e.to_string());
            job.status = JobStatus::Failed;
        }
    }
}

fn require_models(models: &Models) -> Result<()> {
    if models.codec.is_none() || models.sft.is_none() {
        return Err(gsc_core::Error::MissingModel("GSC needs codec and sft checkpoints".into()).into());
    }
    Ok(())
}

/// Baseline: jobs one after another, subtasks strictly in sequence, the
/// air interface waited out in place.
pub fn run_serial(mut jobs: Vec<TransmissionJob>, models: &Models, settings: &RunSettings) -> (Vec<TransmissionJob>, TimingReport) {
    let t0 = Instant::now();
    for job in jobs.iter_mut() {
        job.status = JobStatus::Running;
        let start = t0.elapsed().as_secs_f64();
        let mut compute = 0.0;
        let mut air = 0.0;
        let parts = (|| -> Result<Vec<MicroOutput>> {
            require_models(models)?;
            let (codec, sft) = (models.codec.as_deref().unwrap(), models.sft.as_deref().unwrap());
            let mut parts = Vec::new();
            for (a, b) in micro_batches(job.images.len(), settings.micro_batch) {
                let c = Instant::now();
                let keys = StreamKey::range(job.user_id as u64, job.first_index + a as u64, b - a);
                let enc = encode(codec, &job.images.slice(a, b - a)?, keys)?;
                compute += c.elapsed().as_secs_f64();
                let wait = settings.airtime(enc.channel_uses());
                std::thread::sleep(wait);
                air += wait.as_secs_f64();
                let c = Instant::now();
                let s_hat = receive(codec, &enc, &job.channel)?;
                let refined = sft.refine(&s_hat, job.channel.seed, &enc.keys)?;
                compute += c.elapsed().as_secs_f64();
                parts.push(MicroOutput { s_hat, refined });
            }
            Ok(parts)
        })();
        let timing = JobTiming {
            start_s: start,
            end_s: t0.elapsed().as_secs_f64(),
            compute_s: compute,
            airtime_s: air,
        };
        finish_job(job, models, parts, timing);
    }
    let total = t0.elapsed().as_secs_f64();
    let report = timing_report("serial", &jobs, settings, total, None);
    (jobs, report)
}

struct SubtaskTiming {
    compute_s: f64,
    airtime_s: f64,
}

async fn blocking<T: Send + 'static>(sem: &Semaphore, f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<(T, f64)> {
    let _permit = sem.acquire().await.expect("semaphore open");
    let c = Instant::now();
    let out = tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HarnessError::Config(format!("worker panicked: {e}")))??;
    Ok((out, c.elapsed().as_secs_f64()))
}

async fn run_subtask(
    models: Models,
    images: ImageTensor,
    channel: ChannelConfig,
    keys: Vec<StreamKey>,
    settings: RunSettings,
    sem: Arc<Semaphore>,
    timing: Arc<Mutex<SubtaskTiming>>,
) -> Result<MicroOutput> {
    require_models(&models)?;
    let codec = models.codec.clone().unwrap();
    let sft = models.sft.clone().unwrap();
    let c2 = codec.clone();
    let (enc, t_enc) = blocking(&sem, move || encode(&c2, &images, keys)).await?;
    let wait = settings.airtime(enc.channel_uses());
    tokio::time::sleep(wait).await;
    let ((s_hat, refined), t_dec) = blocking(&sem, move || {
        let s_hat = receive(&codec, &enc, &channel)?;
        let refined = sft.refine(&s_hat, channel.seed, &enc.keys)?;
        Ok((s_hat, refined))
    })
    .await?;
    let mut t = timing.lock().expect("timing lock");
    t.compute_s += t_enc + t_dec;
    t.airtime_s += wait.as_secs_f64();
    Ok(MicroOutput { s_hat, refined })
}

/// All jobs concurrently; every micro-batch is its own task and at most
/// `settings.workers` compute stages run at once. With a cache, a
/// micro-batch seen before is served from it.
pub async fn run_concurrent(
    jobs: Vec<TransmissionJob>,
    models: &Models,
    settings: &RunSettings,
    cache: Option<Arc<ResultCache>>,
) -> Result<(Vec<TransmissionJob>, TimingReport)> {
    if settings.workers == 0 {
        return Err(HarnessError::Config("worker budget must be at least 1".into()));
    }
    let version = match &cache {
        Some(_) => models.version()?,
        None => String::new(),
    };
    let sem = Arc::new(Semaphore::new(settings.workers));
    let t0 = Instant::now();
    let mut handles = Vec::with_capacity(jobs.len());
    for mut job in jobs {
        job.status = JobStatus::Running;
        let models = models.clone();
        let settings = settings.clone();
        let sem = sem.clone();
        let cache = cache.clone();
        let version = version.clone();
        handles.push(tokio::spawn(async move {
            let start = t0.elapsed().as_secs_f64();
            let timing = Arc::new(Mutex::new(SubtaskTiming { compute_s: 0.0, airtime_s: 0.0 }));
            let mut tasks = Vec::new();
            for (a, b) in micro_batches(job.images.len(), settings.micro_batch) {
                let part = job.images.slice(a, b - a);
                let keys = StreamKey::range(job.user_id as u64, job.first_index + a as u64, b - a);
                let (models, settings, sem, cache, timing, version) =
                    (models.clone(), settings.clone(), sem.clone(), cache.clone(), timing.clone(), version.clone());
                let channel = job.channel;
                tasks.push(tokio::spawn(async move {
                    let part = part?;
                    let produce = || run_subtask(models.clone(), part.clone(), channel, keys.clone(), settings.clone(), sem.clone(), timing.clone());
                    match cache {
                        Some(cache) => {
                            let key = CacheKey::new(&version, &part, &channel, &keys)?;
                            let (v, _) = cache.get_or_compute(&key, produce).await?;
                            Ok(MicroOutput::clone(&v))
                        }
                        None => produce().await,
                    }
                }));
            }
            let mut parts = Vec::with_capacity(tasks.len());
            let mut failure = None;
            for t in tasks {
                match t.await {
                    Ok(Ok(p)) => parts.push(p),
                    Ok(Err(e)) => failure = failure.or(Some(e)),
                    Err(e) => failure = failure.or(Some(HarnessError::Config(format!("subtask panicked: {e}")))),
                }
            }
            let t = timing.lock().expect("timing lock");
            let jt = JobTiming {
                start_s: start,
                end_s: t0.elapsed().as_secs_f64(),
                compute_s: t.compute_s,
                airtime_s: t.airtime_s,
            };
            drop(t);
            let parts = match failure {
                Some(e) => Err(e),
                None => Ok(parts),
            };
            (job, parts, jt)
        }));
    }
    let mut done = Vec::with_capacity(handles.len());
    for h in handles {
        let (mut job, parts, jt) = h
            .await
            .map_err(|e| HarnessError::Config(format!("job task panicked: {e}")))?;
        finish_job(&mut job, models, parts, jt);
        done.push(job);
    }
    let total = t0.elapsed().as_secs_f64();
    let report = timing_report("concurrent", &done, settings, total, cache.as_deref());
    Ok((done, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn segments_partition_the_dataset(n in 1usize..500, k in 1usize..20) {
            prop_assume!(k <= n);
            let segs = segment_users(n, k).unwrap();
            prop_assert_eq!(segs.len(), k);
            let mut next = 0;
            for s in &segs {
                prop_assert_eq!(s.start, next);
                next = s.end;
                prop_assert!(s.len() == n / k || s.len() == n / k + 1);
            }
            prop_assert_eq!(next, n);
        }
    }

    #[test]
    fn even_split_and_errors() {
        let segs = segment_users(300, 3).unwrap();
        assert!(segs.iter().all(|s| s.len() == 100));
        assert!(segment_users(2, 3).is_err());
        assert!(segment_users(5, 0).is_err());
    }

    fn out(v: f32) -> MicroOutput {
        let img = ImageTensor::from_vec(vec![v; 3 * 8 * 8], 1, 8, 8).unwrap();
        MicroOutput { s_hat: img.clone(), refined: img }
    }

    #[tokio::test]
    async fn second_request_hits_and_racers_compute_once() {
        let cache = Arc::new(ResultCache::new(4, 0.0));
        let calls = Arc::new(AtomicU64::new(0));
        let key = CacheKey("a".into());
        let produce = || {
            let calls = calls.clone();
            async move {
                calls.fetch_add(1, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(20)).await;
                Ok(out(0.25))
            }
        };
        let (a, b) = tokio::join!(cache.get_or_compute(&key, produce), cache.get_or_compute(&key, produce));
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(a.1 ^ b.1, "exactly one racer computes");
        assert!(a.0.bit_eq(&b.0));
        let stats = cache.stats();
        assert_eq!((stats.hits, stats.misses), (1, 1));
    }

    #[tokio::test]
    async fn lru_evicts_oldest_and_shadow_detects_drift() {
        let cache = ResultCache::new(2, 1.0);
        for k in ["a", "b", "c"] {
            cache.get_or_compute(&CacheKey(k.into()), || async { Ok(out(0.5)) }).await.unwrap();
        }
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.stats().evictions, 1);
        let (_, hit) = cache.get_or_compute(&CacheKey("a".into()), || async { Ok(out(0.5)) }).await.unwrap();
        assert!(!hit, "evicted key recomputes");
        // A producer that changed behind the cache's back is caught.
        let (_, hit) = cache.get_or_compute(&CacheKey("a".into()), || async { Ok(out(0.75)) }).await.unwrap();
        assert!(hit);
        let s = cache.stats();
        assert_eq!((s.shadow_checks, s.shadow_mismatches), (1, 1));
    }
}
