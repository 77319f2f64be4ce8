use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::bench::{self, Suite};
use crate::commands::{run_operation, Artifact, Operation};
use crate::config::ExperimentConfig;
use crate::error::{exit, CliError, Result};
use crate::ledger::{LedgerRow, ResultsLedger};
use crate::plot::emit_plot_data;

#[derive(Debug, Parser)]
#[command(name = "mfergodic", version, about = "Ergodic mean-field control experiments")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise reproducible runs.
    #[arg(long, global = true, env = "MFERGODIC_THREADS")]
    pub threads: Option<usize>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the config output directory.
    #[arg(long, global = true, env = "MFERGODIC_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dissipativity report; fails when eta <= 0.
    Check { config: PathBuf },
    /// Trajectory and second-moment CSVs.
    Simulate { config: PathBuf },
    /// Synchronous coupling gap against its envelope.
    Couple { config: PathBuf },
    /// Discounted value at one rate.
    #[command(name = "value-beta")]
    ValueBeta { config: PathBuf },
    /// Finite-horizon value.
    #[command(name = "value-T")]
    ValueT { config: PathBuf },
    /// Ergodic constant and bias table by vanishing discount.
    #[command(name = "ergodic-pair")]
    ErgodicPair { config: PathBuf },
    /// Discount, horizon and long-run routes to lambda.
    Tauberian { config: PathBuf },
    /// Fixed-point residual of the ergodic pair.
    #[command(name = "fixed-point")]
    FixedPoint { config: PathBuf },
    /// Ergodic HJB residual on probe measures.
    #[command(name = "hjb-residual")]
    HjbResidual { config: PathBuf },
    /// Greedy feedback and its closed-loop diagnostics.
    Verify { config: PathBuf },
    /// Runs the acceptance suite and prints a pass/fail table.
    Bench {
        #[arg(long, value_enum, default_value = "full")]
        suite: Suite,
        /// Run only these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

impl Command {
    fn operation(&self) -> Option<(Operation, &Path)> {
        Some(match self {
            Command::Check { config } => (Operation::Check, config),
            Command::Simulate { config } => (Operation::Simulate, config),
            Command::Couple { config } => (Operation::Couple, config),
            Command::ValueBeta { config } => (Operation::ValueBeta, config),
            Command::ValueT { config } => (Operation::ValueT, config),
            Command::ErgodicPair { config } => (Operation::ErgodicPair, config),
            Command::Tauberian { config } => (Operation::Tauberian, config),
            Command::FixedPoint { config } => (Operation::FixedPoint, config),
            Command::HjbResidual { config } => (Operation::HjbResidual, config),
            Command::Verify { config } => (Operation::Verify, config),
            Command::Bench { .. } => return None,
        })
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::config("--threads", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Bench { suite, only } => run_bench(cli, *suite, only),
        cmd => {
            let (op, path) = cmd.operation().expect("not bench");
            run_config(cli, op, path)
        }
    })
}

fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    artifacts
        .iter()
        .map(|a| match a {
            Artifact::Text { name, contents } => {
                let path = dir.join(name);
                std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
                Ok(path)
            }
            Artifact::Plot(p) => emit_plot_data(dir, p),
        })
        .collect()
}

fn run_config(cli: &Cli, op: Operation, path: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    let model = cfg.model()?;
    let started = Instant::now();
    let out = run_operation(op, &cfg)?;
    let runtime_s = started.elapsed().as_secs_f64();
    print!("{}", out.summary);
    let written = write_artifacts(&cfg.output_dir, &out.artifacts)?;
    std::fs::write(cfg.output_dir.join("config.json"), cfg.to_json())
        .map_err(|e| CliError::io(cfg.output_dir.join("config.json"), e))?;
    let ledger = ResultsLedger::in_dir(&cfg.output_dir);
    let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let hash = cfg.hash();
    for (label, est) in &out.estimates {
        ledger.append(&LedgerRow {
            timestamp: timestamp.clone(),
            benchmark: mfergodic::Dynamics::name(&model).to_string(),
            operation: label.clone(),
            seed: cfg.seed,
            estimate: est.value,
            stderr: est.stderr,
            runtime_s,
            config_hash: hash.clone(),
        })?;
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    match out.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_bench(cli: &Cli, suite: Suite, only: &[u32]) -> Result<()> {
    let ids: Vec<u32> = if only.is_empty() {
        suite.ids()
    } else {
        only.to_vec()
    };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=13).contains(&i)) {
        return Err(CliError::config("--only", format!("no criterion {bad}")));
    }
    let results = bench::run_suite(&ids, |r| println!("{}", r.line()));
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    let dir = cli.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    write_artifacts(
        &dir,
        &[Artifact::Text {
            name: "bench.csv".into(),
            contents: bench::results_csv(&results),
        }],
    )?;
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("criteria {} failed", failed.join(", "))))
    }
}
