//! Command-line front end for the tomography pipeline.
//!
//! Exit codes: 0 on success, 2 when inputs or configuration are rejected
//! (including I/O problems), 3 when a numerical stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpt_tomo::pipeline::{
    emit_plot_data, load_counts, monte_carlo_errorbars, report_from_json, report_to_json,
    run_analysis, write_atomic, CountsData, InputSpec, PipelineConfig, SynthSpec,
};
use gpt_tomo::wlra::{fit_rank_k, FitOptions};
use gpt_tomo::Error;

#[derive(Parser)]
#[command(
    name = "gpt-tomo",
    about = "Self-consistent tomography: fit, model-select, and bound GPT models from counts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a counts file from a depolarized qubit experiment.
    Synth(SynthArgs),
    /// Fit a single rank and print the fit summary as JSON.
    Fit(FitArgs),
    /// Run the full analysis chain and write counts.csv and report.json.
    Analyze(AnalyzeArgs),
    /// Monte Carlo error bars for the bound quantities at a fixed rank.
    Mc(McArgs),
    /// Write plot tables for an existing report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.98)]
    w: f64,
    #[arg(long, default_value_t = 0.98)]
    w_prime: f64,
    /// Expected counts per measured cell.
    #[arg(long, default_value_t = 20000.0)]
    counts_per_cell: f64,
    /// Fiducial design with this many fiducial rows/columns; default full grid.
    #[arg(long)]
    fiducial: Option<usize>,
    /// Planar rebit ground truth instead of the full qubit.
    #[arg(long)]
    planar: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Path of the counts CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Counts CSV to fit.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Counts CSV to analyze; mutually exclusive with --config.
    #[arg(long, conflicts_with = "config")]
    input: Option<PathBuf>,
    /// JSON pipeline configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Candidate ranks, as an inclusive span "2..10" or a list "3,4,5".
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// Counts CSV to resample.
    #[arg(long)]
    input: PathBuf,
    /// Rank the resamples are refit at (take it from a prior analyze run).
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 100)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the error bars here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json from a prior analyze run.
    #[arg(long)]
    report: PathBuf,
    /// counts.csv the report was computed from.
    #[arg(long)]
    counts: PathBuf,
    /// Directory for the plot tables.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) | Error::Io(_) => ExitCode::from(2),
                Error::Numerical { .. } => ExitCode::from(3),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Fit(args) => fit(args),
        Command::Analyze(args) => analyze(args),
        Command::Mc(args) => mc(args),
        Command::Report(args) => report(args),
    }
}

fn synth(args: SynthArgs) -> Result<(), Error> {
    let mut config = PipelineConfig::new(InputSpec::Synth(SynthSpec {
        m: args.m,
        n: args.n,
        w: args.w,
        w_prime: args.w_prime,
        counts_per_cell: args.counts_per_cell,
        fiducial: args.fiducial,
        planar: args.planar,
    }));
    config.seed = args.seed;
    let (counts, _) = load_counts(&config)?;
    counts.write_csv(&args.out)?;
    println!(
        "wrote {} measured cells to {}",
        counts.cells.len(),
        args.out.display()
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Error> {
    let counts = CountsData::read_csv(&args.input)?;
    let freq = counts.to_frequencies()?;
    let mut opts = FitOptions::for_rank(args.rank);
    opts.restarts = args.restarts;
    opts.seed = args.seed;
    let result = fit_rank_k(&freq, &opts)?;
    let summary = serde_json::json!({
        "rank": args.rank,
        "chi2": result.chi2,
        "iterations": result.iterations,
        "converged": result.converged,
        "ridge_applied": result.ridge_applied,
    });
    let text = format!("{summary:#}\n");
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let mut config = match (&args.config, &args.input) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| Error::Invalid(format!("bad config {}: {e}", path.display())))?
        }
        (None, Some(input)) => PipelineConfig::new(InputSpec::CountsFile(input.clone())),
        (None, None) => {
            return Err(Error::Invalid(
                "analyze needs --input or --config".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap forbids --input with --config"),
    };
    if let Some(spec) = &args.ranks {
        config.ranks = parse_ranks(spec)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(resamples) = args.resamples {
        config.resamples = resamples;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    let report = run_analysis(&config)?;
    println!(
        "selected rank {} (weight {:.4}); epsilon* = {:.6}; volume ratio = {:.6}",
        report.selected_rank,
        report
            .rank_table
            .iter()
            .find(|r| r.rank == report.selected_rank)
            .map_or(f64::NAN, |r| r.weight),
        report.shrink.epsilon_star,
        report.bounds.volume_ratio
    );
    if let Some(dir) = &config.out_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn mc(args: McArgs) -> Result<(), Error> {
    let counts = CountsData::read_csv(&args.input)?;
    let mut config = PipelineConfig::new(InputSpec::CountsFile(args.input.clone()));
    config.seed = args.seed;
    config.resamples = args.resamples;
    let std = monte_carlo_errorbars(&counts, args.rank, &config)?;
    let text = format!(
        "{:#}\n",
        serde_json::to_value(&std).map_err(|e| Error::Io(e.to_string()))?
    );
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.report)?;
    let report = report_from_json(&text)?;
    let counts = CountsData::read_csv(&args.counts)?;
    let freq = counts.to_frequencies()?;
    emit_plot_data(&report, &freq, &args.out)?;
    // Round-trip sanity: the report on disk must stay parseable as written.
    let _ = report_to_json(&report)?;
    println!("plot tables in {}", args.out.display());
    Ok(())
}

/// Accepts "2..10" (inclusive) or a comma list "3,4,5".
fn parse_ranks(spec: &str) -> Result<Vec<usize>, Error> {
    let bad = |s: &str| Error::Invalid(format!("cannot parse ranks from '{s}'"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad(spec))?;
        let hi: usize = hi.trim().parse().map_err(|_| bad(spec))?;
        if lo > hi {
            return Err(bad(spec));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(spec)))
        .collect()
}
