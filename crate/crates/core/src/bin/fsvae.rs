use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fsvae::cli::{
    cmd_dct_check, cmd_eval, cmd_export_latents, cmd_loss_bench, cmd_synth, cmd_train, exit_code, DctCheckOptions,
    Overrides, RunConfig,
};
use fsvae::losses::AlignmentLoss;
use fsvae::pipeline::EvalMode;

#[derive(Parser)]
#[command(name = "fsvae", version, about = "Frequency-enhanced cross-modal VAE for zero-shot skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run config (flat TOML, optional [synth] table).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Check DCT round-trip, energy preservation and enhancement invariants.
    DctCheck {
        /// Feature file whose sequences are checked instead of random ones.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one basis entry; the check must then fail.
        #[arg(long)]
        corrupt_basis: bool,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run training stages 2-4 and write a checkpoint and loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory with features.jsonl, embeddings.jsonl and split.json.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        loss: Option<AlignmentLoss>,
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Evaluate a checkpoint in ZSL or GZSL mode.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "zsl")]
        mode: EvalMode,
        #[arg(long)]
        out: PathBuf,
        /// Config the checkpoint is expected to come from.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare alignment losses across label-noise rates on synthetic data.
    LossBench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated label-noise rates.
        #[arg(long, value_delimiter = ',', default_value = "0,0.2")]
        noise_rate: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Write skeleton latent means of every sample.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(common: &Common, extra: Overrides) -> fsvae::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        ..extra
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> fsvae::Result<bool> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = run_config(&common, Overrides::default())?;
            let o = cmd_synth(&cfg)?;
            println!("wrote {} records of {} classes to {}", o.records, o.classes, o.files.features.display());
            println!(
                "nearest-prototype oracle: zsl {:.4} seen {:.4} all {:.4}",
                o.oracle.zsl_accuracy, o.oracle.seen_accuracy, o.oracle.all_accuracy
            );
            Ok(true)
        }
        Command::DctCheck {
            input,
            seed,
            corrupt_basis,
            out,
        } => {
            let report = cmd_dct_check(&DctCheckOptions {
                input,
                corrupt_basis,
                seed,
                ..DctCheckOptions::default()
            })?;
            for c in &report.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {:<15} max error {:.3e} (tolerance {:.0e})", c.name, c.max_error, c.tolerance);
            }
            println!("{} sequences in {:.2?}", report.sequences, report.elapsed);
            if let Some(path) = out {
                report.save(path)?;
            }
            Ok(report.passed())
        }
        Command::Train {
            common,
            data,
            loss,
            noise_rate,
        } => {
            let cfg = run_config(
                &common,
                Overrides {
                    data,
                    loss,
                    noise_rate,
                    ..Overrides::default()
                },
            )?;
            let o = cmd_train(&cfg)?;
            println!("config_hash {}", o.config_hash);
            if o.corrupted_labels > 0 {
                println!("corrupted {} training labels", o.corrupted_labels);
            }
            if let Some(l) = o.summary.final_loss() {
                println!("final stage-2 loss {l:?}");
            }
            println!("checkpoint {}", o.checkpoint.display());
            println!("loss log {}", o.loss_log.display());
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            data,
            mode,
            out,
            config,
        } => {
            let expected = config.map(RunConfig::load).transpose()?.map(|c| c.config_hash());
            let o = cmd_eval(&checkpoint, &data, mode, &out, expected.as_deref())?;
            if let Some((found, expected)) = &o.hash_mismatch {
                eprintln!("warning: checkpoint config hash {found} does not match config hash {expected}");
            }
            let r = &o.report;
            let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
            match r.mode {
                EvalMode::Zsl => println!("zsl accuracy {}", pct(r.zsl_accuracy)),
                EvalMode::Gzsl => println!(
                    "seen {} unseen {} harmonic mean {}",
                    pct(r.seen_accuracy),
                    pct(r.unseen_accuracy),
                    pct(r.harmonic_mean)
                ),
            }
            println!("report {}", o.report_path.display());
            Ok(true)
        }
        Command::LossBench {
            common,
            noise_rate,
            seeds,
        } => {
            let cfg = run_config(&common, Overrides::default())?;
            let table = cmd_loss_bench(&cfg, &noise_rate, seeds)?;
            print!("{}", table.to_tsv());
            Ok(true)
        }
        Command::ExportLatents { checkpoint, data, out } => {
            let n = cmd_export_latents(&checkpoint, &data, &out)?;
            println!("wrote {n} latent rows to {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
