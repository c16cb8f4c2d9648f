use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use freedave_core::bench::{self, DecoderSpec, RunConfig};
use freedave_core::pathlab::DEFAULT_STEP_CAP;
use freedave_core::{Error, ErrorClass};

/// Masked-diffusion decoding: static, threshold and draft-and-verify.
#[derive(Parser)]
#[command(name = "freedave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode once and print a summary; optionally write the full result as JSON.
    Decode {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's decoder: static, threshold or freedave.
        #[arg(long)]
        decoder: Option<String>,
        /// Draft steps for freedave.
        #[arg(long)]
        d: Option<usize>,
        /// Confidence threshold for the threshold decoder.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Static reference plus the config's decoder; writes CSV, or JSON for a .json path.
    Compare {
        /// One or more configs; those differing only in decoder share a reference.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force feasible paths for a small config and check the verifier against them.
    Pathlab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
        max_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draft-and-verify at each d against one static reference.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated draft step counts, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',', required = true)]
        d_list: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record every predictor query of a static and a freedave decode to a trace file.
    RecordTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a trace file and replay static and freedave decoding on it.
    ReplayValidate {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Decode) => 2,
        Some(ErrorClass::Trace) => 3,
        Some(ErrorClass::Usage) | None => 1,
    }
}

fn load(path: &Path) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load(path)?)
}

fn decoder_override(
    cfg: &RunConfig,
    name: Option<&str>,
    d: Option<usize>,
    threshold: Option<f64>,
) -> anyhow::Result<DecoderSpec> {
    let current = cfg.decoder;
    Ok(match name {
        None => match (current, d, threshold) {
            (DecoderSpec::Freedave { .. }, Some(d), _) => DecoderSpec::Freedave { d },
            (DecoderSpec::Threshold { .. }, _, Some(t)) => DecoderSpec::Threshold { threshold: t },
            (_, None, None) => current,
            _ => bail!(
                "--d / --threshold do not apply to the config's {} decoder",
                current.label()
            ),
        },
        Some("static") => DecoderSpec::Static,
        Some("freedave") => match (d, current) {
            (Some(d), _) | (None, DecoderSpec::Freedave { d }) => DecoderSpec::Freedave { d },
            _ => bail!("--decoder freedave needs --d"),
        },
        Some("threshold") => match (threshold, current) {
            (Some(threshold), _) | (None, DecoderSpec::Threshold { threshold }) => {
                DecoderSpec::Threshold { threshold }
            }
            _ => bail!("--decoder threshold needs --threshold"),
        },
        Some(other) => bail!("unknown decoder {other:?} (expected static, threshold or freedave)"),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Decode {
            config,
            decoder,
            d,
            threshold,
            seed,
            out,
        } => {
            let mut cfg = load(&config)?;
            cfg.decoder = decoder_override(&cfg, decoder.as_deref(), d, threshold)?;
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            let setup = cfg.prepare()?;
            let result = setup.decode(cfg.decoder)?;
            println!(
                "decoder={} forward_calls={} sequence_evaluations={} steps_taken={} valid_tokens={}",
                result.decoder.label(),
                result.nfe.forward_calls,
                result.nfe.sequence_evaluations,
                result.steps_taken,
                bench::valid_token_count(&result.tokens, &setup.vocab()),
            );
            println!("tokens={:?}", result.tokens);
            if let Some(out) = out {
                write_json(&out, &result)?;
            }
        }
        Command::Compare { config, out } => {
            let configs = config
                .iter()
                .map(|p| load(p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let report = bench::run_comparison(&configs)?;
            report.write(&out)?;
            for row in &report.rows {
                println!(
                    "{} forward_calls={} nfe_speedup={:.3} lossless={}",
                    row.decoder, row.forward_calls, row.nfe_speedup, row.lossless
                );
            }
        }
        Command::Pathlab {
            config,
            max_steps,
            out,
        } => {
            let cfg = load(&config)?;
            let summary = bench::pathlab_summary(&cfg, max_steps)?;
            write_json(&out, &summary)?;
            println!(
                "steps={} edges={} optimal={:?} span={} verifier_agrees={}",
                summary.steps,
                summary.edges.len(),
                summary.optimal.cut_points,
                summary.optimal.span,
                summary.lemma.agrees()
            );
        }
        Command::Sweep {
            config,
            d_list,
            out,
        } => {
            let cfg = load(&config)?;
            let report = bench::sweep_draft_steps(&cfg, &d_list)?;
            report.write(&out)?;
            for row in &report.rows {
                println!(
                    "{} forward_calls={} lossless={}",
                    row.decoder, row.forward_calls, row.lossless
                );
            }
        }
        Command::RecordTrace {
            config,
            d,
            topk,
            out,
        } => {
            let cfg = load(&config)?;
            let trace = bench::record_trace(&cfg, d, topk)?;
            trace.write(&out)?;
            println!("records={}", trace.records.len());
        }
        Command::ReplayValidate { trace } => {
            let v = bench::validate_trace(&trace)?;
            println!(
                "records={} static_tokens={:?} freedave_lossless={}",
                v.records,
                v.static_tokens,
                v.freedave_lossless
                    .map_or("n/a".to_string(), |b| b.to_string())
            );
        }
    }
    Ok(())
}
