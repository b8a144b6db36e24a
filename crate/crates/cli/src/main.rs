use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ampkin::amputation::AmputationLabel;
use ampkin_cli::commands::{self, QuantizeArgs};
use ampkin_cli::config::DecodeMode;
use ampkin_cli::{CliError, CliResult, Config, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ampkin", version, about = "Amputation-aware body model toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject unknown fields in annotation records.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decode {
    Soft,
    Hard,
}

#[derive(Subcommand)]
enum Command {
    /// Pose records (or the rest pose) and print vertices and joints as JSON lines.
    Forward {
        /// Annotation records as JSON lines.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply an amputation label such as "Rleg:2" and re-emit records.
    Amputate {
        /// Merged with each record's own label, keeping the higher level per limb.
        #[arg(long)]
        label: AmputationLabel,
        /// Annotation records; the rest pose when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Quantize latents or decode token logits against a codebook.
    Quantize {
        /// JSON array of latent rows.
        #[arg(long)]
        latents: Option<PathBuf>,
        /// JSON array of logit rows.
        #[arg(long)]
        logits: Option<PathBuf>,
        /// Non-amputee codebook; a seeded random one when absent.
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Amputee codebook used when any bit of --y-hat is set.
        #[arg(long)]
        amp_codebook: Option<PathBuf>,
        /// Binary limb vector, e.g. "0,0,0,1"; enables codebook switching.
        #[arg(long, value_parser = parse_y_hat)]
        y_hat: Option<[u8; 4]>,
        /// Run one EMA step and a dead-code reset with the latents.
        #[arg(long)]
        update: bool,
        /// Where to save the codebook after --update.
        #[arg(long)]
        codebook_out: Option<PathBuf>,
        /// Overrides the configured decode mode for logits.
        #[arg(long, value_enum)]
        decode: Option<Decode>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare predicted records against ground truth.
    Eval {
        /// Predicted records, matched to ground truth by position.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic annotated set.
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Directory for images/, heatmaps/ and records.jsonl.
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a posed mesh as Wavefront OBJ.
    ExportObj {
        /// Annotation records; the rest pose when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Which record to export.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Extra amputation applied before posing.
        #[arg(long)]
        label: Option<AmputationLabel>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check records against every annotation invariant.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_y_hat(s: &str) -> Result<[u8; 4], String> {
    let bits: Vec<u8> = s
        .split(',')
        .map(|b| match b.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(format!("{other:?} is not 0 or 1")),
        })
        .collect::<Result<_, _>>()?;
    bits.try_into().map_err(|_| "expected four comma-separated bits".to_string())
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(commands::create_file(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| ampkin::Error::from(io::Error::from(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(ampkin::Error::from)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    ampkin_cli::init_thread_pool()?;
    let mut config = match &cli.config {
        Some(p) => Config::load(p).map_err(CliError::in_file(p))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Context::new(config, cli.strict)?;

    match cli.command {
        Command::Forward { input, output } => {
            let meshes = commands::cmd_forward(&ctx, input.as_deref())?;
            commands::write_jsonl(&mut sink(output.as_deref())?, &meshes)
        }
        Command::Amputate { label, input, output } => {
            let records = commands::cmd_amputate(&ctx, &label, input.as_deref())?;
            commands::write_jsonl(&mut sink(output.as_deref())?, &records)
        }
        Command::Quantize {
            latents,
            logits,
            codebook,
            amp_codebook,
            y_hat,
            update,
            codebook_out,
            decode,
            output,
        } => {
            let args = QuantizeArgs {
                latents,
                logits,
                codebook,
                amp_codebook,
                y_hat,
                update,
                codebook_out,
                decode: decode.map(|d| match d {
                    Decode::Soft => DecodeMode::Soft,
                    Decode::Hard => DecodeMode::Hard,
                }),
            };
            write_json(output.as_deref(), &commands::cmd_quantize(&ctx, &args)?)
        }
        Command::Eval { pred, gt, output } => {
            write_json(output.as_deref(), &commands::cmd_eval(&ctx, &pred, &gt)?)
        }
        Command::Synth { count, output } => {
            write_json(None, &commands::cmd_synth(&ctx, count, &output)?)
        }
        Command::ExportObj {
            input,
            index,
            label,
            output,
        } => {
            let mut w = sink(output.as_deref())?;
            commands::cmd_export_obj(&ctx, input.as_deref(), index, label.as_ref(), &mut w)?;
            w.flush().map_err(ampkin::Error::from)?;
            Ok(())
        }
        Command::Validate { input } => {
            let n = commands::cmd_validate(&ctx, &input)?;
            write_json(None, &serde_json::json!({ "records": n, "violations": 0 }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
