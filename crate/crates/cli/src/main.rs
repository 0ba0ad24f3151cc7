//! `daomix` command-line interface.
//!
//! Exit codes: 0 success, 1 command-line misuse, 2 unreadable or invalid
//! files, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use daomix::data::{generate, SynthConfig};
use daomix_cli::config::{parse_mix, parse_mode, parse_scope, RunConfig};
use daomix_cli::error::{CliError, Result};
use daomix_cli::{corpus, runner};

#[derive(Parser)]
#[command(
    name = "daomix",
    version,
    about = "Multi-task training with adaptive task weighting"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a run configuration file.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a corpus file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Constant-weight runs over a list of w_c values plus one adaptive run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated classification weights, e.g. 0.05,0.10,0.15
        #[arg(long)]
        wc: String,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Generate a synthetic corpus file.
    GenData {
        #[arg(long)]
        n: usize,
        /// Five comma-separated class proportions.
        #[arg(long)]
        mix: String,
        /// Probability that a token is noise rather than class vocabulary.
        #[arg(long)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        /// Output path; `.csv` writes CSV, anything else JSONL.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in gradient and invariant checks.
    Verify,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured mode: dao, constant, or single-task.
    #[arg(long)]
    mode: Option<String>,
    /// Override the constant classification weight; the regression weight
    /// becomes 1 - wc.
    #[arg(long)]
    wc: Option<f64>,
    /// Override the adapter rank; 0 turns adapters off.
    #[arg(long)]
    lora_rank: Option<usize>,
    /// Override which parameters the per-task gradient norms cover.
    #[arg(long)]
    grad_norm_scope: Option<String>,
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => train(args),
        Cmd::Eval { checkpoint, data } => {
            let (report, n) = runner::eval_checkpoint(&checkpoint, &data)?;
            print!("{}", runner::format_report(&report, n));
            Ok(())
        }
        Cmd::Sweep { config, wc, out } => {
            let cfg = RunConfig::load(&config)?;
            let wc_values = parse_wc_list(&wc)?;
            let rows = runner::sweep(&cfg, &wc_values, &out)?;
            for row in &rows {
                println!("{}: mse = {}, acc = {}", row.run, row.mse, row.acc);
            }
            println!("wrote {}", out.join("sweep.csv").display());
            Ok(())
        }
        Cmd::GenData {
            n,
            mix,
            noise,
            seed,
            out,
        } => {
            let mix = parse_mix(&mix).map_err(usage)?;
            let data = generate(&SynthConfig {
                n,
                mix,
                noise,
                seed,
            })?;
            corpus::save(&data, &out)?;
            println!(
                "wrote {} examples to {} (class counts {:?})",
                data.len(),
                out.display(),
                data.class_histogram()
            );
            Ok(())
        }
        Cmd::Verify => verify(),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(mode) = &args.mode {
        cfg.train.mode = parse_mode(mode).map_err(usage)?;
    }
    if let Some(wc) = args.wc {
        cfg.train.w_c = wc;
        cfg.train.w_r = 1.0 - wc;
    }
    if let Some(rank) = args.lora_rank {
        cfg.train.model.lora_rank = if rank == 0 { None } else { Some(rank) };
    }
    if let Some(scope) = &args.grad_norm_scope {
        cfg.train.grad_norm_scope = parse_scope(scope).map_err(usage)?;
    }
    cfg.validate()?;

    let outcome = runner::run(&cfg, &args.out, args.resume.as_deref())?;
    print!(
        "{}",
        runner::format_report(&outcome.final_report, outcome.final_report.confusion.total())
    );
    println!("logs in {}", args.out.display());
    println!("checkpoint at {}", outcome.checkpoint.display());
    Ok(())
}

fn verify() -> Result<()> {
    let results = daomix::verify::run_all();
    let mut failed = 0usize;
    for r in &results {
        let status = if r.passed { "ok  " } else { "FAIL" };
        println!("{status} {}: {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} of {} checks failed",
            results.len()
        )));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

/// A command-line flag carried a malformed value.
fn usage(e: CliError) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_wc_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--wc: {p:?} is not a number")))
        })
        .collect()
}
