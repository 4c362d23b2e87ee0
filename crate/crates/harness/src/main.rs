use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gsc_core::codec::SwinJscc;
use gsc_harness::config::HarnessConfig;
use gsc_harness::dataset::load_splits;
use gsc_harness::pipeline::{checkpoint_dir, Models, CODEC_FILE};
use gsc_harness::sweep::sweep_to_dir;
use gsc_harness::train::{train_codec_to, train_deepjscc_to, train_sft_to, write_json};
use gsc_harness::{mu, timeit, OUT_ENV};

#[derive(Parser)]
#[command(name = "gsc", version, about = "Generative semantic communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Global seed for training, channel realisations and diffusion noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; checkpoints live in `<out>/checkpoints`.
    #[arg(long, env = OUT_ENV, default_value = "gsc-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the Swin JSCC codec end to end over the configured channels.
    TrainCodec(Common),
    /// Train the semantic fine-tuning networks against a trained codec.
    TrainSft(Common),
    /// Evaluate every configured system over the SNR grid.
    Sweep(Common),
    /// Multi-user run: serial baseline, concurrent pass, warm-cache pass.
    MuRun {
        #[command(flatten)]
        common: Common,
        /// SNR of the run in dB.
        #[arg(long, default_value_t = 9.0)]
        snr_db: f64,
    },
    /// Train the DeepJSCC baseline and tabulate the classical link.
    Baseline(Common),
    /// Median wall-clock of serial GSC against concurrent MU-GSC.
    Timeit(Common),
}

fn setup(common: &Common) -> anyhow::Result<HarnessConfig> {
    let mut cfg = match &common.config {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    std::fs::write(common.out.join("config.txt"), cfg.to_flat())?;
    Ok(cfg)
}

fn load_codec(out: &Path) -> anyhow::Result<SwinJscc> {
    let p = checkpoint_dir(out).join(CODEC_FILE);
    if !p.exists() {
        bail!("{} not found; run `gsc train-codec` first", p.display());
    }
    Ok(SwinJscc::load(&p)?)
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::TrainCodec(c) => {
            let cfg = setup(&c)?;
            let data = load_splits(&cfg.data)?;
            train_codec_to(&cfg, &data.train, &c.out)?;
            println!("wrote {}", checkpoint_dir(&c.out).join(CODEC_FILE).display());
        }
        Command::TrainSft(c) => {
            let cfg = setup(&c)?;
            let codec = load_codec(&c.out)?;
            let data = load_splits(&cfg.data)?;
            train_sft_to(&cfg, &codec, &data.train, &c.out)?;
            println!("wrote {}", checkpoint_dir(&c.out).display());
        }
        Command::Sweep(c) => {
            let cfg = setup(&c)?;
            let data = load_splits(&cfg.data)?;
            let models = Models::load(&c.out, &cfg)?;
            let out = sweep_to_dir(&cfg, &models, &data.eval, &c.out)?;
            println!("{} rows appended to {}", out.rows.len(), c.out.join("results.csv").display());
        }
        Command::MuRun { common, snr_db } => {
            let cfg = setup(&common)?;
            let data = load_splits(&cfg.data)?;
            let models = Models::load(&common.out, &cfg)?;
            let r = mu::mu_run(&cfg, &models, &data.eval, snr_db, &common.out)?;
            println!(
                "serial {:.3}s, concurrent {:.3}s, speedup {:.2}x, warm-cache {:.3}s",
                r.serial.total_wall_s, r.concurrent.total_wall_s, r.speedup, r.warm_cache.total_wall_s
            );
        }
        Command::Baseline(c) => {
            let mut cfg = setup(&c)?;
            let data = load_splits(&cfg.data)?;
            train_deepjscc_to(&cfg, &data.train, &c.out)?;
            // The classical link has nothing to train; tabulate it over the grid.
            cfg.sweep.systems = vec![gsc_harness::System::Classical];
            let models = Models::load(&c.out, &cfg)?;
            let dir = c.out.join("baseline");
            sweep_to_dir(&cfg, &models, &data.eval, &dir)?;
            println!("wrote {} and {}", checkpoint_dir(&c.out).display(), dir.display());
        }
        Command::Timeit(c) => {
            let cfg = setup(&c)?;
            let data = load_splits(&cfg.data)?;
            let models = Models::load(&c.out, &cfg)?;
            let r = timeit::timeit_gsc_vs_mu(&cfg, &models, &data.eval)?;
            write_json(&c.out.join("timeit.json"), &r)?;
            println!(
                "GSC median {:.3}s, MU-GSC median {:.3}s, speedup {:.2}x over {} runs",
                r.gsc_median_s, r.mu_gsc_median_s, r.speedup, r.repetitions
            );
        }
    }
    Ok(())
}
