use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pseudoclust::estimator::{fit_three_level, fit_two_level, ModelSpec};
use pseudoclust::hierarchy::{combine_datasets, read_csv, rescale_weights, summarize, write_csv, Depth, WeightScaling};
use pseudoclust::sim::{parse_config, run_table, SimulationReport};
use pseudoclust::Error;

#[derive(Parser)]
#[command(
    name = "pseudoclust",
    version,
    about = "Combine multi-level survey data and fit weighted mixed models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Raw,
    ClusterSize,
}

impl From<Scaling> for WeightScaling {
    fn from(s: Scaling) -> Self {
        match s {
            Scaling::Raw => WeightScaling::Raw,
            Scaling::ClusterSize => WeightScaling::ClusterSize,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Merge CSV sources of any depth into one pseudo-clustered depth-3 file.
    Combine {
        /// Comma-separated input files.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rescale conditional weights.
    Rescale {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "cluster-size")]
        mode: Scaling,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a two- or three-level random-intercept model; prints JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        levels: u8,
        /// Outcome column; the CSV layout has a single outcome, `y`.
        #[arg(long)]
        outcome: String,
        /// Comma-separated fixed-effect covariates (an intercept is always
        /// included); pass "" for an intercept-only model.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        fixed: Vec<String>,
        #[arg(long)]
        weighted: bool,
        #[arg(long, value_enum, default_value = "cluster-size")]
        scaling: Scaling,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo table; writes CSV to --out and markdown next to it.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's B.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides the config's master_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Overrides the config's weight scaling.
        #[arg(long, value_enum)]
        scaling: Option<Scaling>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print level counts, singleton and pseudo fractions and weight ranges as JSON.
    Summarize {
        #[arg(long)]
        data: PathBuf,
    },
}

/// Failure modes mapped onto exit codes.
enum Failure {
    Input(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            e @ Error::NonConvergence { .. } => Failure::NotConverged(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn combine(inputs: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let sources = inputs.iter().map(read_csv).collect::<Result<Vec<_>, _>>()?;
    let combined = combine_datasets(&sources)?;
    write_csv(&combined, out)?;
    eprintln!(
        "combined {} sources into {} rows",
        sources.len(),
        combined.n_observations()
    );
    Ok(())
}

fn rescale(data: &Path, mode: Scaling, out: &Path) -> Result<(), Failure> {
    let scaled = rescale_weights(&read_csv(data)?, mode.into())?;
    write_csv(&scaled, out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data: &Path,
    levels: u8,
    outcome: &str,
    fixed: &[String],
    weighted: bool,
    scaling: Scaling,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if outcome != "y" {
        return Err(Failure::Input(format!(
            "--outcome `{outcome}` is not a column; the outcome column is `y`"
        )));
    }
    let dataset = read_csv(data)?;
    let model = ModelSpec::new(fixed.iter().filter(|c| !c.is_empty()).cloned());
    let result = match (levels, dataset.depth()) {
        (3, Depth::Three) => fit_three_level(&dataset, &model, weighted, scaling.into())?,
        (3, d) => {
            return Err(Error::Structural(format!(
                "--levels 3 needs a supercluster_id column; {} has depth {}",
                data.display(),
                d.as_u8()
            ))
            .into())
        }
        (_, Depth::One) => {
            return Err(Error::Structural(format!("--levels 2 needs a cluster_id column in {}", data.display())).into())
        }
        _ => fit_two_level(&dataset, &model, weighted, scaling.into())?,
    };
    let text = serde_json::to_string_pretty(&result.to_json()).expect("JSON values serialize") + "\n";
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    if result.convergence.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "fit did not converge after {} iterations (score norm {:e})",
            result.convergence.iterations, result.convergence.final_score_norm
        )))
    }
}

fn run_with_threads(
    threads: usize,
    job: impl FnOnce() -> pseudoclust::Result<SimulationReport> + Send,
) -> Result<SimulationReport, Failure> {
    if threads == 0 {
        return Err(Failure::Input("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Failure::Input(format!("cannot start {threads} threads: {e}")))?;
        Ok(pool.install(job)?)
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads > 1 {
            eprintln!("built without parallel support; running on one thread");
        }
        Ok(job()?)
    }
}

fn simulate(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: usize,
    scaling: Option<Scaling>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg = parse_config(&read_text(config)?)?;
    if let Some(b) = reps {
        cfg.b = b;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(s) = scaling {
        cfg.settings.scaling = s.into();
    }
    cfg.validate()?;
    let started = std::time::Instant::now();
    let report = run_with_threads(threads, || run_table(&cfg, cfg.table))?;
    let md_path = out.with_extension("md");
    write_text(out, &report.to_csv_string()?)?;
    write_text(&md_path, &report.to_markdown())?;
    let failed: usize = report
        .scenarios
        .iter()
        .map(|s| s.nonconverged_weighted + s.nonconverged_unweighted)
        .sum();
    eprintln!(
        "{} x {} replications in {:.1}s; {failed} fits excluded; wrote {} and {}",
        report.scenarios.len(),
        report.b,
        started.elapsed().as_secs_f64(),
        out.display(),
        md_path.display()
    );
    Ok(())
}

fn summarize_file(data: &Path) -> Result<(), Failure> {
    let summary = summarize(&read_csv(data)?);
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Combine { inputs, out } => combine(&inputs, &out),
        Command::Rescale { data, mode, out } => rescale(&data, mode, &out),
        Command::Fit {
            data,
            levels,
            outcome,
            fixed,
            weighted,
            scaling,
            out,
        } => fit(&data, levels, &outcome, &fixed, weighted, scaling, out.as_deref()),
        Command::Simulate {
            config,
            reps,
            seed,
            threads,
            scaling,
            out,
        } => simulate(&config, reps, seed, threads, scaling, &out),
        Command::Summarize { data } => summarize_file(&data),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
