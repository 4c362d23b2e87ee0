//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment, keys are dotted
//! (`codec.steps`, `mu.users`). Lists are comma separated and pairs are
//! written `lo,hi`. Unknown keys are errors so typos never pass silently.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gsc_core::baseline::{ClassicalConfig, DeepJsccConfig};
use gsc_core::codec::CodecConfig;
use gsc_core::diffusion::SftConfig;
use gsc_core::ChannelKind;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

/// Systems a sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    Gsc,
    Ngf,
    DeepJscc,
    Classical,
    MuGsc,
}

impl System {
    pub const ALL: [System; 5] = [Self::Gsc, Self::Ngf, Self::DeepJscc, Self::Classical, Self::MuGsc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gsc => "GSC",
            Self::Ngf => "NGF",
            Self::DeepJscc => "DEEPJSCC",
            Self::Classical => "CLASSICAL",
            Self::MuGsc => "MU_GSC",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|sys| sys.as_str() == norm)
            .ok_or_else(|| HarnessError::Config(format!("unknown system {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Procedural images, reproducible from the data seed.
    Synthetic,
    /// CIFAR-10 binary archive: a `.bin` batch file or the directory holding them.
    Cifar(PathBuf),
    /// Directory of 8-bit RGB images.
    ImageDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_images: usize,
    pub eval_images: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub systems: Vec<System>,
    pub channels: Vec<ChannelKind>,
    pub snr_grid: Vec<f64>,
    /// Number of channel seeds, counted up from the base seed.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuConfig {
    pub users: usize,
    pub workers: usize,
    pub cache_capacity: usize,
    /// Simulated air interface rate in complex channel uses per second.
    pub symbol_rate: f64,
    /// Images per subtask.
    pub micro_batch: usize,
    /// Fraction of cache hits that are recomputed and compared.
    pub shadow_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeitConfig {
    pub repetitions: usize,
    pub images: usize,
    pub snr_db: f64,
    pub channel: ChannelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub codec: CodecConfig,
    pub sft: SftConfig,
    pub deepjscc: DeepJsccConfig,
    pub classical: ClassicalConfig,
    pub mu: MuConfig,
    pub timeit: TimeitConfig,
}

impl Default for HarnessConfig {
    /// Desk-scale preset sized for a single CPU core.
    fn default() -> Self {
        let train_snr = (1.0, 13.0);
        Self {
            seed: 0,
            data: DataConfig {
                source: DataSource::Synthetic,
                train_images: 2000,
                eval_images: 200,
                seed: 1,
            },
            sweep: SweepConfig {
                systems: vec![System::Gsc, System::Ngf, System::DeepJscc, System::Classical],
                channels: vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
                snr_grid: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0],
                seeds: 1,
            },
            codec: CodecConfig {
                learning_rate: 1e-3,
                steps: 600,
                train_snr_db: train_snr,
                ..CodecConfig::default()
            },
            sft: SftConfig {
                channels: 8,
                heads: [1, 2, 4, 8],
                blocks: [1, 1, 1, 1],
                batch_size: 8,
                learning_rate: 1e-3,
                pretrain_steps: 200,
                diffusion_steps: 200,
                ..SftConfig::default()
            },
            deepjscc: DeepJsccConfig {
                learning_rate: 1e-3,
                steps: 600,
                train_snr_db: train_snr,
                ..DeepJsccConfig::default()
            },
            classical: ClassicalConfig::default(),
            mu: MuConfig {
                users: 3,
                workers: 3,
                cache_capacity: 1024,
                symbol_rate: 20_000.0,
                micro_batch: 8,
                shadow_rate: 0.01,
            },
            timeit: TimeitConfig {
                repetitions: 5,
                images: 48,
                snr_db: 9.0,
                channel: ChannelKind::Awgn,
            },
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_num)
        .collect()
}

fn parse_pair(v: &str) -> std::result::Result<(f64, f64), String> {
    match parse_list::<f64>(v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!("expected `lo,hi`, got {v:?}")),
    }
}

fn parse_array<const N: usize>(v: &str) -> std::result::Result<[usize; N], String> {
    let items: Vec<usize> = parse_list(v)?;
    items
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated integers, got {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn parse_systems(v: &str) -> std::result::Result<Vec<System>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<System>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_channels(v: &str) -> std::result::Result<Vec<ChannelKind>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ChannelKind>().map_err(|e| e.to_string()))
        .collect()
}

/// Raw entries in file order; later duplicates override earlier ones.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::ConfigLine {
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(HarnessError::ConfigLine {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, k, v) in parse_entries(text)? {
            cfg.set(&k, &v).map_err(|msg| HarnessError::ConfigLine { line, msg })?;
        }
        let seed = cfg.seed;
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Applies one entry.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = parse_num(v)?,

            "data.source" => {
                self.data.source = match v.trim() {
                    "synthetic" => DataSource::Synthetic,
                    other => match other.split_once(':') {
                        Some(("cifar", p)) => DataSource::Cifar(PathBuf::from(p.trim())),
                        Some(("dir", p)) => DataSource::ImageDir(PathBuf::from(p.trim())),
                        _ => return Err(format!("data.source must be synthetic, cifar:<path> or dir:<path>, got {v:?}")),
                    },
                }
            }
            "data.train_images" => self.data.train_images = parse_num(v)?,
            "data.eval_images" => self.data.eval_images = parse_num(v)?,
            "data.seed" => self.data.seed = parse_num(v)?,

            "sweep.systems" => self.sweep.systems = parse_systems(v)?,
            "sweep.seeds" => self.sweep.seeds = parse_num(v)?,
            "channel.kinds" => self.sweep.channels = parse_channels(v)?,
            "channel.snr_grid" => self.sweep.snr_grid = parse_list(v)?,

            "codec.dim" => self.codec.dim = parse_num(v)?,
            "codec.window" => self.codec.window = parse_num(v)?,
            "codec.depths" => self.codec.depths = parse_array(v)?,
            "codec.heads" => self.codec.heads = parse_array(v)?,
            "codec.mlp_ratio" => self.codec.mlp_ratio = parse_num(v)?,
            "codec.compression_ratio" => self.codec.compression_ratio = parse_num(v)?,
            "codec.learning_rate" => self.codec.learning_rate = parse_num(v)?,
            "codec.batch_size" => self.codec.batch_size = parse_num(v)?,
            "codec.train_snr_db" => self.codec.train_snr_db = parse_pair(v)?,
            "codec.steps" => self.codec.steps = parse_num(v)?,
            "codec.grad_clip" => self.codec.grad_clip = parse_num(v)?,

            "sft.channels" => self.sft.channels = parse_num(v)?,
            "sft.heads" => self.sft.heads = parse_array(v)?,
            "sft.blocks" => self.sft.blocks = parse_array(v)?,
            "sft.ffn_expansion" => self.sft.ffn_expansion = parse_num(v)?,
            "sft.patch_size" => self.sft.patch_size = parse_num(v)?,
            "sft.batch_size" => self.sft.batch_size = parse_num(v)?,
            "sft.learning_rate" => self.sft.learning_rate = parse_num(v)?,
            "sft.beta" => self.sft.beta = parse_pair(v)?,
            "sft.timesteps" => self.sft.timesteps = parse_num(v)?,
            "sft.pretrain_steps" => self.sft.pretrain_steps = parse_num(v)?,
            "sft.diffusion_steps" => self.sft.diffusion_steps = parse_num(v)?,
            "sft.train_snr_db" => self.sft.train_snr_db = parse_pair(v)?,
            "sft.freeze_pretrained" => self.sft.freeze_pretrained = parse_bool(v)?,
            "sft.grad_clip" => self.sft.grad_clip = parse_num(v)?,

            "deepjscc.hidden" => self.deepjscc.hidden = parse_array(v)?,
            "deepjscc.compression_ratio" => self.deepjscc.compression_ratio = parse_num(v)?,
            "deepjscc.learning_rate" => self.deepjscc.learning_rate = parse_num(v)?,
            "deepjscc.batch_size" => self.deepjscc.batch_size = parse_num(v)?,
            "deepjscc.train_snr_db" => self.deepjscc.train_snr_db = parse_pair(v)?,
            "deepjscc.steps" => self.deepjscc.steps = parse_num(v)?,
            "deepjscc.grad_clip" => self.deepjscc.grad_clip = parse_num(v)?,

            "classical.jpeg_quality" => self.classical.jpeg_quality = parse_num(v)?,
            "classical.ldpc_blocklength" => self.classical.ldpc_blocklength = parse_num(v)?,
            "classical.ldpc_col_weight" => self.classical.ldpc_col_weight = parse_num(v)?,
            "classical.ldpc_row_weight" => self.classical.ldpc_row_weight = parse_num(v)?,
            "classical.bp_max_iters" => self.classical.bp_max_iters = parse_num(v)?,
            "classical.modulation_order" => self.classical.modulation_order = parse_num(v)?,
            "classical.code_seed" => self.classical.code_seed = parse_num(v)?,

            "mu.users" => self.mu.users = parse_num(v)?,
            "mu.workers" => self.mu.workers = parse_num(v)?,
            "mu.cache_capacity" => self.mu.cache_capacity = parse_num(v)?,
            "mu.symbol_rate" => self.mu.symbol_rate = parse_num(v)?,
            "mu.micro_batch" => self.mu.micro_batch = parse_num(v)?,
            "mu.shadow_rate" => self.mu.shadow_rate = parse_num(v)?,

            "timeit.repetitions" => self.timeit.repetitions = parse_num(v)?,
            "timeit.images" => self.timeit.images = parse_num(v)?,
            "timeit.snr_db" => self.timeit.snr_db = parse_num(v)?,
            "timeit.channel" => self.timeit.channel = v.parse().map_err(|e: gsc_core::Error| e.to_string())?,

            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Overrides the global seed and propagates it to every trained model.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.codec.seed = seed;
        self.sft.seed = seed;
        self.deepjscc.seed = seed;
        self
    }

    /// Channel seeds for the sweep, counted up from the global seed.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        (0..self.sweep.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.sweep.systems.is_empty() {
            return bad("sweep.systems is empty");
        }
        if self.sweep.snr_grid.is_empty() || self.sweep.snr_grid.iter().any(|s| !s.is_finite()) {
            return bad("channel.snr_grid must be a nonempty list of finite values");
        }
        if self.sweep.channels.is_empty() {
            return bad("channel.kinds is empty");
        }
        if self.sweep.seeds == 0 {
            return bad("sweep.seeds must be at least 1");
        }
        if self.data.eval_images == 0 {
            return bad("data.eval_images must be positive");
        }
        if self.mu.users == 0 || self.mu.workers == 0 || self.mu.micro_batch == 0 {
            return bad("mu.users, mu.workers and mu.micro_batch must be positive");
        }
        if self.mu.cache_capacity == 0 {
            return bad("mu.cache_capacity must be positive");
        }
        if !(self.mu.symbol_rate > 0.0) {
            return bad("mu.symbol_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.mu.shadow_rate) {
            return bad("mu.shadow_rate must lie in [0, 1]");
        }
        if self.timeit.repetitions < 5 {
            return bad("timeit.repetitions must be at least 5");
        }
        self.codec.validate()?;
        self.sft.validate()?;
        self.classical.validate()?;
        Ok(())
    }

    /// Canonical `key = value` rendering, parseable by [`HarnessConfig::parse`].
    pub fn to_flat(&self) -> String {
        let join = |xs: &[String]| xs.join(",");
        let nums = |xs: &[usize]| join(&xs.iter().map(|x| x.to_string()).collect::<Vec<_>>());
        let pair = |(a, b): (f64, f64)| format!("{a},{b}");
        let source = match &self.data.source {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::Cifar(p) => format!("cifar:{}", p.display()),
            DataSource::ImageDir(p) => format!("dir:{}", p.display()),
        };
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("seed", self.seed.to_string());
        m.insert("data.source", source);
        m.insert("data.train_images", self.data.train_images.to_string());
        m.insert("data.eval_images", self.data.eval_images.to_string());
        m.insert("data.seed", self.data.seed.to_string());
        m.insert("sweep.systems", join(&self.sweep.systems.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
        m.insert("sweep.seeds", self.sweep.seeds.to_string());
        m.insert("channel.kinds", join(&self.sweep.channels.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
        m.insert("channel.snr_grid", join(&self.sweep.snr_grid.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
        let c = &self.codec;
        m.insert("codec.dim", c.dim.to_string());
        m.insert("codec.window", c.window.to_string());
        m.insert("codec.depths", nums(&c.depths));
        m.insert("codec.heads", nums(&c.heads));
        m.insert("codec.mlp_ratio", c.mlp_ratio.to_string());
        m.insert("codec.compression_ratio", c.compression_ratio.to_string());
        m.insert("codec.learning_rate", c.learning_rate.to_string());
        m.insert("codec.batch_size", c.batch_size.to_string());
        m.insert("codec.train_snr_db", pair(c.train_snr_db));
        m.insert("codec.steps", c.steps.to_string());
        m.insert("codec.grad_clip", c.grad_clip.to_string());
        let s = &self.sft;
        m.insert("sft.channels", s.channels.to_string());
        m.insert("sft.heads", nums(&s.heads));
        m.insert("sft.blocks", nums(&s.blocks));
        m.insert("sft.ffn_expansion", s.ffn_expansion.to_string());
        m.insert("sft.patch_size", s.patch_size.to_string());
        m.insert("sft.batch_size", s.batch_size.to_string());
        m.insert("sft.learning_rate", s.learning_rate.to_string());
        m.insert("sft.beta", pair(s.beta));
        m.insert("sft.timesteps", s.timesteps.to_string());
        m.insert("sft.pretrain_steps", s.pretrain_steps.to_string());
        m.insert("sft.diffusion_steps", s.diffusion_steps.to_string());
        m.insert("sft.train_snr_db", pair(s.train_snr_db));
        m.insert("sft.freeze_pretrained", s.freeze_pretrained.to_string());
        m.insert("sft.grad_clip", s.grad_clip.to_string());
        let d = &self.deepjscc;
        m.insert("deepjscc.hidden", nums(&d.hidden));
        m.insert("deepjscc.compression_ratio", d.compression_ratio.to_string());
        m.insert("deepjscc.learning_rate", d.learning_rate.to_string());
        m.insert("deepjscc.batch_size", d.batch_size.to_string());
        m.insert("deepjscc.train_snr_db", pair(d.train_snr_db));
        m.insert("deepjscc.steps", d.steps.to_string());
        m.insert("deepjscc.grad_clip", d.grad_clip.to_string());
        let k = &self.classical;
        m.insert("classical.jpeg_quality", k.jpeg_quality.to_string());
        m.insert("classical.ldpc_blocklength", k.ldpc_blocklength.to_string());
        m.insert("classical.ldpc_col_weight", k.ldpc_col_weight.to_string());
        m.insert("classical.ldpc_row_weight", k.ldpc_row_weight.to_string());
        m.insert("classical.bp_max_iters", k.bp_max_iters.to_string());
        m.insert("classical.modulation_order", k.modulation_order.to_string());
        m.insert("classical.code_seed", k.code_seed.to_string());
        let u = &self.mu;
        m.insert("mu.users", u.users.to_string());
        m.insert("mu.workers", u.workers.to_string());
        m.insert("mu.cache_capacity", u.cache_capacity.to_string());
        m.insert("mu.symbol_rate", u.symbol_rate.to_string());
        m.insert("mu.micro_batch", u.micro_batch.to_string());
        m.insert("mu.shadow_rate", u.shadow_rate.to_string());
        let t = &self.timeit;
        m.insert("timeit.repetitions", t.repetitions.to_string());
        m.insert("timeit.images", t.images.to_string());
        m.insert("timeit.snr_db", t.snr_db.to_string());
        m.insert("timeit.channel", t.channel.to_string());
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_overrides() {
        let cfg = HarnessConfig::parse(
            "# desk run\n\nmu.users = 4   # four streams\ncodec.steps=10\nchannel.snr_grid = 0, 5\n",
        )
        .unwrap();
        assert_eq!(cfg.mu.users, 4);
        assert_eq!(cfg.codec.steps, 10);
        assert_eq!(cfg.sweep.snr_grid, vec![0.0, 5.0]);
    }

    #[test]
    fn unknown_keys_and_systems_rejected_with_line() {
        match HarnessConfig::parse("seed = 1\ncodec.stepz = 3\n") {
            Err(HarnessError::ConfigLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(HarnessConfig::parse("sweep.systems = GSC,VQVAE").is_err());
        assert!(HarnessConfig::parse("no equals sign").is_err());
        assert!(HarnessConfig::parse("sweep.systems =").is_err());
    }

    #[test]
    fn flat_rendering_round_trips() {
        let mut cfg = HarnessConfig::default().with_seed(5);
        cfg.sweep.systems = vec![System::Classical, System::MuGsc];
        cfg.data.source = DataSource::Cifar("/data/cifar".into());
        cfg.sft.train_snr_db = (-1.5, 9.0);
        let back = HarnessConfig::parse(&cfg.to_flat()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn system_names_parse_loosely() {
        assert_eq!("mu-gsc".parse::<System>().unwrap(), System::MuGsc);
        assert_eq!("DeepJSCC".parse::<System>().unwrap(), System::DeepJscc);
    }

    #[test]
    fn seeds_count_up_from_base() {
        let mut cfg = HarnessConfig::default().with_seed(10);
        cfg.sweep.seeds = 3;
        assert_eq!(cfg.sweep_seeds(), vec![10, 11, 12]);
    }
}
