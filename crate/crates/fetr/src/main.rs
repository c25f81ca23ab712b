use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fetr::bench::{run_bench, to_csv};
use fetr::checkpoint::{Checkpoint, SplitRecord};
use fetr::config::Config;
use fetr::run::{self, RunOptions, SplitData};
use fetr::synth::write_synthetic;
use fetr::{Error, Result};
use fetr_core::backbone::Network;
use fetr_core::metrics::{topk_accuracy, RunMetrics};
use fetr_core::train::{predict, Trainer};

#[derive(Parser)]
#[command(
    name = "fetr",
    version,
    about = "Train and evaluate attention-augmented residual image classifiers"
)]
struct Cli {
    /// Seed for every random draw (overrides train.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// INI configuration file with [model], [train] and [data] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set train.lr=0.001.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a folder-per-class dataset, streaming JSON metrics to stdout.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint; its configuration replaces the file's.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Report 0 for wall_seconds so the stream is reproducible.
        #[arg(long)]
        no_wall_clock: bool,
    },
    /// Evaluate a checkpoint and print its metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        /// Write the per-class table to this CSV file.
        #[arg(long, value_name = "CSV")]
        per_class: Option<PathBuf>,
        /// Top-k accuracies to report [default: 1,5, capped at the class count].
        #[arg(long, value_delimiter = ',')]
        topk: Vec<usize>,
    },
    /// Compare criss-cross and dense attention on square maps, as CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the procedural texture dataset as PPM files.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn check_classes(stored: &[String], found: &[String], data: &Path) -> Result<()> {
    if stored != found {
        return Err(Error::Mismatch(format!(
            "checkpoint was trained on {} classes {:?} but {} has {} classes {:?}",
            stored.len(),
            stored,
            data.display(),
            found.len(),
            found
        )));
    }
    Ok(())
}

fn train(cli: &Cli, data: Option<&Path>, out: Option<&Path>, resume: Option<&Path>, no_wall_clock: bool) -> Result<()> {
    let mut cfg = config(cli)?;
    let dir = data
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.dir.clone())
        .ok_or_else(|| fetr_core::Error::Config("no dataset given (use --data or data.dir)".into()))?;
    let (mut trainer, split, data, every) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path)?;
            let split = ckpt.header.split.clone();
            let every = ckpt.header.checkpoint_every;
            let data = SplitData::load(&dir, &split)?;
            check_classes(&ckpt.header.classes, data.classes(), &dir)?;
            let trainer = ckpt.into_trainer()?;
            log::info!("resuming {} after epoch {}", path.display(), trainer.epoch);
            (trainer, split, data, every)
        }
        None => {
            let split = SplitRecord {
                train_ratio: cfg.data.train_ratio,
                seed: cfg.split_seed(),
            };
            let data = SplitData::load(&dir, &split)?;
            cfg.model.num_classes = data.classes().len();
            cfg.validate()?;
            let (net, store) = Network::init::<f32>(&cfg.model, cfg.train.seed)?;
            let trainer = Trainer::new(net, store, cfg.train.clone())?;
            (trainer, split, data, cfg.checkpoint_every)
        }
    };
    log::info!(
        "{} classes, {} training and {} validation images",
        data.classes().len(),
        data.train.len(),
        data.val.len()
    );
    let opts = RunOptions {
        out: out.map(Path::to_path_buf),
        checkpoint_every: every,
        wall_clock: !no_wall_clock,
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run::train(&mut trainer, &data, &split, &opts, &mut lock)?;
    Ok(())
}

fn eval(checkpoint: &Path, dir: &Path, split: Split, per_class: Option<&Path>, topk: &[usize]) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let data = SplitData::load(dir, &ckpt.header.split)?;
    check_classes(&ckpt.header.classes, data.classes(), dir)?;
    let classes = data.classes().to_vec();
    let k_classes = ckpt.header.spec.num_classes;
    let topk: Vec<usize> = if topk.is_empty() {
        [1, 5].into_iter().filter(|&k| k <= k_classes).collect()
    } else {
        topk.to_vec()
    };
    if let Some(&k) = topk.iter().find(|&&k| k == 0 || k > k_classes) {
        return Err(fetr_core::Error::Config(format!("--topk {k} is outside 1..={k_classes}")).into());
    }
    let trainer = ckpt.into_trainer()?;
    let samples = match split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::All => data.train.into_iter().chain(data.val).collect(),
    };
    let logits = predict(&trainer.network, &trainer.store, &samples, trainer.config.batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let metrics = RunMetrics::from_logits(&logits, k_classes, &labels)?;
    let mut by_k = serde_json::Map::new();
    for &k in &topk {
        by_k.insert(k.to_string(), topk_accuracy(&logits, k_classes, &labels, k)?.into());
    }
    let report = serde_json::json!({
        "samples": metrics.samples,
        "top1": metrics.top1,
        "top5": metrics.top5,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "topk": by_k,
    });
    println!("{report}");
    if let Some(path) = per_class {
        std::fs::write(path, metrics.per_class_csv(&classes)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            data,
            out,
            resume,
            no_wall_clock,
        } => train(cli, data.as_deref(), out.as_deref(), resume.as_deref(), *no_wall_clock),
        Command::Eval {
            checkpoint,
            data,
            split,
            per_class,
            topk,
        } => eval(checkpoint, data, *split, per_class.as_deref(), topk),
        Command::Bench {
            sizes,
            channels,
            repeats,
            out,
        } => {
            let rows = run_bench(sizes, *channels, *repeats, cli.seed.unwrap_or(0))?;
            let csv = to_csv(&rows);
            match out {
                Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e))?,
                None => std::io::stdout()
                    .write_all(csv.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
            Ok(())
        }
        Command::Synth {
            classes,
            per_class,
            size,
            out,
        } => {
            let manifest = write_synthetic(out, *classes, *per_class, *size, cli.seed.unwrap_or(0))?;
            log::info!(
                "wrote {} images in {} classes to {}",
                manifest.train.len() + manifest.val.len(),
                manifest.classes.len(),
                out.display()
            );
            println!("{}", manifest.hash);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Warn
        } else {
            log::LevelFilter::Info
        })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
