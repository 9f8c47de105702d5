//! Command-line interface: experiment runs, report emission, dataset
//! validation, and the descriptive chi-squared test.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use pdi::error::{PdiError, Result};
use pdi::estimators::Method;
use pdi::evaluation::{self, MetricsTable};
use pdi::io::{
    CsvSchemaOptions, ExperimentConfig, ReportFormat, emit_report, ingest_csv, run_experiment,
};
use pdi::model::{GroupingRules, RatingScale, partition_groups, validate_dataset};

#[derive(Parser)]
#[command(
    name = "pdi",
    version,
    about = "Per-group annotation means from LLM proxy labels plus a small human budget"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment (synthetic by default) and write run
    /// artifacts.
    Run(Box<RunArgs>),
    /// Emit a report from an existing run directory.
    Report(ReportArgs),
    /// Validate a CSV annotation dataset and print the check report.
    Validate(CsvArgs),
    /// Chi-squared test of rating-level versus group on a CSV dataset.
    Chi2(Chi2Args),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults to the built-in synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per method.
    #[arg(long)]
    trials: Option<usize>,
    /// Expected total human-annotation budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Uniform burn-in size.
    #[arg(long)]
    burnin: Option<usize>,
    /// Number of adaptive batches.
    #[arg(long)]
    batches: Option<usize>,
    /// Uniform smoothing weight in [0,1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Nominal miscoverage level of the intervals.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bootstrap resamples per interval.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Comma-separated methods: classical,llm_only,ppi,pdi.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// LLM variant column to use as the proxy.
    #[arg(long)]
    variant: Option<String>,
    /// Demographic axis to partition on.
    #[arg(long)]
    axis: Option<String>,
    /// Inclusion-probability floor as a fraction of the uniform rate.
    #[arg(long)]
    pi_floor: Option<f64>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Args)]
struct CsvArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "instance_id")]
    instance_col: String,
    #[arg(long, default_value = "human_rating")]
    rating_col: String,
    #[arg(long, default_value = "llm_")]
    llm_prefix: String,
    /// Comma-separated demographic columns (axis name = column name).
    #[arg(long, value_delimiter = ',', required = true)]
    demographics: Vec<String>,
    /// Rating scale: `binary` or `min,max` (e.g. `1,5`).
    #[arg(long, default_value = "1,5")]
    scale: String,
    #[arg(long)]
    text_col: Option<String>,
}

#[derive(Args)]
struct Chi2Args {
    #[command(flatten)]
    csv: CsvArgs,
    /// Demographic axis to test against rating levels.
    #[arg(long)]
    axis: String,
}

fn parse_scale(text: &str) -> Result<RatingScale> {
    if text == "binary" {
        return Ok(RatingScale::Binary);
    }
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() == 2 {
        if let (Ok(min), Ok(max)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
            let scale = RatingScale::Range { min, max };
            scale.validate()?;
            return Ok(scale);
        }
    }
    Err(PdiError::Config(format!(
        "cannot parse scale `{text}` (expected `binary` or `min,max`)"
    )))
}

impl CsvArgs {
    fn schema(&self) -> Result<CsvSchemaOptions> {
        Ok(CsvSchemaOptions {
            instance_col: self.instance_col.clone(),
            rating_col: self.rating_col.clone(),
            llm_prefix: self.llm_prefix.clone(),
            demographics: self
                .demographics
                .iter()
                .map(|c| (c.clone(), c.clone()))
                .collect(),
            scale: parse_scale(&self.scale)?,
            text_col: self.text_col.clone(),
        })
    }
}

fn apply_overrides(config: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(budget) = args.budget {
        config.sampling.n_human = budget;
    }
    if let Some(burnin) = args.burnin {
        config.sampling.n_burnin = burnin;
    }
    if let Some(batches) = args.batches {
        config.sampling.batches = batches;
    }
    if let Some(gamma) = args.gamma {
        config.sampling.gamma = gamma;
    }
    if let Some(pi_floor) = args.pi_floor {
        config.sampling.pi_floor = pi_floor;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(bootstrap) = args.bootstrap {
        config.bootstrap = bootstrap;
    }
    if let Some(methods) = &args.method {
        config.methods = methods
            .iter()
            .map(|m| Method::from_str(m))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(variant) = &args.variant {
        config.variant = variant.clone();
    }
    if let Some(axis) = &args.axis {
        config.partition.axis = axis.clone();
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    Ok(())
}

fn print_metrics(metrics: &MetricsTable) {
    println!(
        "{:<10} {:<12} {:>9} {:>9} {:>11} {:>14}",
        "method", "group", "coverage", "delta_pp", "mean_count", "ci_width_mean"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    for row in &metrics.rows {
        println!(
            "{:<10} {:<12} {:>9} {:>9} {:>11} {:>14}",
            row.method.to_string(),
            row.group,
            fmt(row.coverage),
            fmt(row.delta_pp),
            fmt(row.mean_count),
            fmt(row.ci_width_mean),
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut config, args)?;
    let summary = run_experiment(&config)?;
    if let Some(metrics) = &summary.metrics {
        print_metrics(metrics);
    }
    for (value, metrics) in &summary.sweep {
        println!("--- sweep point {value} ---");
        print_metrics(metrics);
    }
    if summary.failure_count > 0 {
        println!("note: {} trial cells failed (see metrics.json)", summary.failure_count);
    }
    println!("artifacts written to {}", summary.root.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let format = ReportFormat::from_str(&args.format)?;
    let written = emit_report(&args.run_dir, format)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_validate(args: &CsvArgs) -> Result<()> {
    let schema = args.schema()?;
    let (dataset, rejects) = ingest_csv(&args.csv, &schema)?;
    if !rejects.rejected.is_empty() {
        println!(
            "rejected {} of {} rows:",
            rejects.rejected.len(),
            rejects.total_rows
        );
        for r in &rejects.rejected {
            println!("  row {}: {}", r.row, r.reason);
        }
    }
    let report = validate_dataset(&dataset);
    for check in &report.checks {
        let status = if check.passed { "pass" } else { "FAIL" };
        let kind = if check.hard { "hard" } else { "soft" };
        println!("[{status}] {} ({kind})", check.name);
        for detail in &check.details {
            println!("    {detail}");
        }
    }
    if report.accepted() {
        println!("dataset accepted: {} records", dataset.len());
        Ok(())
    } else {
        Err(PdiError::Data("dataset rejected by hard checks".into()))
    }
}

fn cmd_chi2(args: &Chi2Args) -> Result<()> {
    let schema = args.csv.schema()?;
    let (dataset, _) = ingest_csv(&args.csv.csv, &schema)?;
    let partition = partition_groups(&dataset, &args.axis, &GroupingRules::PerCategory)?;
    let table = evaluation::rating_contingency(&dataset, &partition)?;
    let result = evaluation::chi_squared_test(&table)?;
    println!(
        "chi2({}) = {:.3}, p = {:.4} (axis `{}`, {} groups x {} rating levels)",
        result.df,
        result.statistic,
        result.p_value,
        args.axis,
        table.len(),
        table[0].len(),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Chi2(args) => cmd_chi2(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
