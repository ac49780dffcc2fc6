//! Batch CLI over the library; every subcommand is a thin wrapper around a
//! `run` module driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use annobench::align::TrainConfig;
use annobench::config::RunConfig;
use annobench::run::{
    cmd_align_train, cmd_align_translate, cmd_annotate, cmd_deg, cmd_evaluate, cmd_report,
    AlignTrainArgs, RunError,
};

#[derive(Parser)]
#[command(name = "annobench", version, about = "Cell type annotation benchmark harness")]
struct Cli {
    /// Base directory for relative paths in configs and flags.
    #[arg(short, long, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank differentially expressed genes per cell type (TSV to stdout).
    Deg {
        /// Bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        /// Markers kept per cell type.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Minimum raw reads per cell (raw-count bundles only).
        #[arg(long, default_value_t = 200)]
        min_reads: u64,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build prompts, call providers, and persist transcripts/predictions.
    Annotate {
        #[arg(long)]
        config: PathBuf,
        /// Abort on the first failed sample (exit code 1).
        #[arg(long)]
        fail_fast: bool,
    },
    /// Score predictions against the bundle's synonym references.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render the leaderboard and combined summary CSV.
    Report {
        /// Run config (supplies output dir and provenance digest) …
        #[arg(long)]
        config: Option<PathBuf>,
        /// … or point straight at an output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Cross-modality translation model.
    #[command(subcommand)]
    Align(AlignCommand),
}

#[derive(Subcommand)]
enum AlignCommand {
    /// Train the accessibility→expression translator on paired bundles.
    Train {
        /// Expression bundle (lognorm layout).
        #[arg(long)]
        rna: PathBuf,
        /// Accessibility bundle (binary layout).
        #[arg(long)]
        atac: PathBuf,
        /// Pairing file: rna_cell_id<TAB>atac_cell_id<TAB>class.
        #[arg(long)]
        pairs: PathBuf,
        /// Checkpoint output path (JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        step_size: f64,
        /// Discriminator updates per generator update.
        #[arg(long, default_value_t = 1)]
        disc_steps: usize,
        /// Allow classes smaller than the batch size.
        #[arg(long)]
        with_replacement: bool,
        /// Keep only the most informative accessibility columns.
        #[arg(long)]
        tfidf_keep: Option<usize>,
        #[arg(long, default_value_t = 8)]
        d_latent: usize,
        #[arg(long, default_value_t = 32)]
        d_embed: usize,
    },
    /// Translate an accessibility bundle into a pseudo-expression bundle.
    Translate {
        /// Trained checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Accessibility bundle (binary layout).
        #[arg(long)]
        atac: PathBuf,
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    let workdir = cli.workdir;
    match cli.command {
        Command::Deg {
            bundle,
            k,
            min_reads,
            out,
        } => {
            let tsv = cmd_deg(&workdir.join(bundle), k, min_reads)?;
            match out {
                Some(path) => {
                    let path = workdir.join(path);
                    std::fs::write(&path, tsv).map_err(|source| RunError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    println!("wrote {}", path.display());
                }
                None => print!("{tsv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Annotate { config, fail_fast } => {
            let cfg = RunConfig::load(&workdir.join(config))?;
            let outcome = cmd_annotate(&cfg, &workdir, fail_fast)?;
            let mut failures = 0;
            for slice in &outcome.slices {
                println!(
                    "{} {}: {} samples ({} new, {} resumed), {} failed",
                    slice.model,
                    slice.strategy.as_str(),
                    slice.samples_total,
                    slice.samples_run,
                    slice.samples_skipped,
                    slice.failures
                );
                failures += slice.failures;
            }
            for (provider, calls) in &outcome.gateway_calls {
                println!("{provider}: {calls} gateway calls");
            }
            if outcome.skipped_types > 0 {
                eprintln!("warning: {} cell types skipped by marker selection", outcome.skipped_types);
            }
            if failures > 0 {
                eprintln!("warning: {failures} samples failed (rows recorded)");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { config } => {
            let cfg = RunConfig::load(&workdir.join(config))?;
            let outcome = cmd_evaluate(&cfg, &workdir)?;
            println!(
                "scored {} rows across {} slices; summary at {}",
                outcome.rows_scored,
                outcome.slices.len(),
                outcome.summary_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { config, output_dir } => {
            let (dir, digest) = match (config, output_dir) {
                (Some(path), _) => {
                    let cfg = RunConfig::load(&workdir.join(path))?;
                    (workdir.join(&cfg.output_dir), cfg.digest())
                }
                (None, Some(dir)) => (workdir.join(dir), "unspecified".to_string()),
                (None, None) => {
                    return Err(RunError::Invalid(
                        "report needs --config or --output-dir".to_string(),
                    ))
                }
            };
            let leaderboard = cmd_report(&dir, &digest)?;
            print!("{leaderboard}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Align(cmd) => match cmd {
            AlignCommand::Train {
                rna,
                atac,
                pairs,
                out,
                steps,
                batch_size,
                gamma,
                seed,
                step_size,
                disc_steps,
                with_replacement,
                tfidf_keep,
                d_latent,
                d_embed,
            } => {
                let args = AlignTrainArgs {
                    rna_bundle: workdir.join(rna),
                    atac_bundle: workdir.join(atac),
                    pairs: workdir.join(pairs),
                    checkpoint_out: workdir.join(out),
                    train: TrainConfig {
                        step_size,
                        steps,
                        batch_size,
                        gamma,
                        seed,
                        disc_steps_per_gen_step: disc_steps,
                        sample_with_replacement: with_replacement,
                    },
                    d_latent,
                    d_embed,
                    tfidf_keep,
                };
                let final_rec = cmd_align_train(&args)?;
                println!(
                    "trained {} steps; final reconstruction loss {final_rec:.6}; checkpoint at {}",
                    steps,
                    args.checkpoint_out.display()
                );
                Ok(ExitCode::SUCCESS)
            }
            AlignCommand::Translate { model, atac, out } => {
                let out = workdir.join(out);
                let n = cmd_align_translate(&workdir.join(model), &workdir.join(atac), &out)?;
                println!("translated {n} cells into {}", out.display());
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}
