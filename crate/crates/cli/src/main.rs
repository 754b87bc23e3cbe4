use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gackan::cli::{
    self, DatasetConfig, EvalOptions, GenOptions, InferOptions, InputFormat, TrainOptions,
};
use gackan::gackan::ArchConfig;
use gackan::traineval::{Split, TrainConfig};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "gackan", version, about = "GNSS jamming dataset synthesis and GAC-KAN classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Reference,
}

impl Profile {
    fn arch(self) -> ArchConfig {
        match self {
            Profile::Desk => ArchConfig::desk(),
            Profile::Reference => ArchConfig::reference(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Iq,
    Spt,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize every (class, JNR, trial) sample and write the manifest.
    GenDataset {
        /// Flat JSON overriding simulation, imaging and split settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Start from the small 2 MHz / 64×64 profile.
        #[arg(long)]
        desk_scale: bool,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Also write 8-bit PPM previews under `ppm/`.
        #[arg(long)]
        export_ppm: bool,
    },
    /// Train on a generated dataset and write a checkpoint plus history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat JSON overriding training hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Hyperparameter defaults: desk (30 epochs, batch 32) or reference.
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Architecture JSON; defaults to the profile matching the image size.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write report.json plus SVG figures.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Fold asymmetric convolution branches into single kernels.
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and FLOP counts with a per-layer breakdown.
    Report {
        #[arg(long, conflicts_with = "arch")]
        ckpt: Option<PathBuf>,
        /// Count a freshly built profile instead of a checkpoint.
        #[arg(long, value_enum)]
        arch: Option<Profile>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one I/Q recording or spectrogram tensor.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Sample rate of I/Q input in Hz; defaults to the training rate.
        #[arg(long)]
        sample_rate: Option<f64>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Err(e) if e
            .downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        other => other,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenDataset {
            config,
            out,
            seed,
            desk_scale,
            parallel,
            export_ppm,
        } => {
            let base = if desk_scale { DatasetConfig::desk() } else { DatasetConfig::default() };
            let config = match config {
                Some(p) => cli::overlay_config(&base, &p)?,
                None => base,
            };
            let manifest = cli::gen_dataset(&GenOptions {
                config,
                out: out.clone(),
                seed,
                parallel,
                export_ppm,
            })?;
            let (tr, va, te) = manifest.split_counts();
            println!(
                "wrote {} samples to {} (train {tr}, val {va}, test {te})",
                manifest.records.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            config,
            profile,
            arch,
        } => {
            let base = match profile {
                Profile::Desk => TrainConfig::desk(),
                Profile::Reference => TrainConfig::default(),
            };
            let config = match config {
                Some(p) => cli::overlay_config(&base, &p)?,
                None => base,
            };
            let arch = arch
                .map(|p| cli::overlay_config(&ArchConfig::reference(), &p))
                .transpose()?;
            let history = cli::train(&TrainOptions {
                data,
                out: out.clone(),
                config,
                arch,
            })?;
            println!(
                "best epoch {} with validation accuracy {:.4}; checkpoint {}",
                history.best_epoch,
                history.best_val_accuracy,
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            report,
            split,
            batch_size,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let r = cli::eval(&EvalOptions {
                ckpt,
                data,
                report: report.clone(),
                split,
                batch_size,
            })?;
            println!("accuracy {:.4} over {} samples", r.metrics.overall_accuracy, r.metrics.count);
            for b in &r.metrics.per_jnr {
                println!("  {:>6} dB  {:.4}  ({}/{})", b.jnr_db, b.accuracy, b.correct, b.total);
            }
            println!("report written to {}", report.display());
        }
        Command::Fuse { ckpt, out } => {
            let s = cli::fuse(&ckpt, &out)?;
            if s.already_fused {
                println!("input already fused; copied unchanged ({} params)", s.params_after);
            } else {
                println!("params {} -> {}", s.params_before, s.params_after);
            }
        }
        Command::Report { ckpt, arch, out } => {
            let r = match (ckpt, arch) {
                (Some(p), _) => cli::report(&p)?,
                (None, Some(profile)) => cli::report_arch(&profile.arch())?,
                (None, None) => bail!("pass --ckpt or --arch"),
            };
            let mut stdout = std::io::stdout().lock();
            writeln!(
                stdout,
                "params {}  FLOPs {} at {}×{}{}",
                r.params,
                r.flops.total,
                r.input_hw.0,
                r.input_hw.1,
                if r.fused { " (fused)" } else { "" }
            )?;
            writeln!(stdout, "convention: {}", r.flops.convention)?;
            for (name, f) in &r.flops.layers {
                writeln!(stdout, "  {name:<40} {f}")?;
            }
            if let Some(p) = out {
                let text = serde_json::to_string_pretty(&r)?;
                std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Infer {
            ckpt,
            input,
            format,
            sample_rate,
        } => {
            let format = match format {
                FormatArg::Iq => InputFormat::Iq,
                FormatArg::Spt => InputFormat::Spt,
            };
            let p = cli::infer(&InferOptions {
                ckpt,
                input,
                format,
                sample_rate_hz: sample_rate,
            })?;
            println!("{} (code {})", p.class.name(), p.code);
            let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
            println!("probabilities [{}]", probs.join(", "));
        }
    }
    Ok(())
}
