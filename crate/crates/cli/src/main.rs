//! Command-line driver for the `ufo` toolkit.
//!
//! Wires the whole pipeline end to end: synthesize task data, train the
//! elastic multi-task supernet, benchmark sampled sub-networks, fit
//! per-task rank predictors, search under resource budgets, and extract
//! deployable trimmed models. Every command is a thin wrapper over
//! `ufo_core`; artifacts live in a run directory next to a manifest.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numerical failure. `UFO_SEED` overrides seeds read from config files.

use std::collections::BTreeSet;
use std::fs;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use ufo_core::bench_table::{
    correlation_report, export_bench, import_bench, import_bench_loose, BenchImport,
};
use ufo_core::error::CoreError;
use ufo_core::pipeline::{self, RunConfig};
use ufo_core::search::{Budget, SearchBudget, DEFAULT_QUOTA, DEFAULT_SUBSET_SIZE};
use ufo_core::taskgen::TaskSuiteSpec;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ufo",
    version,
    about = "Train one elastic multi-task supernet, then search and extract \
             per-task sub-networks without retraining",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a multi-task retrieval data file from a JSON spec
    GenTasks {
        /// Task-suite spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Directory that will hold tasks.ufod
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the elastic supernet and write a run directory
    Train {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Data directory from gen-tasks, or a task-suite file
        #[arg(long)]
        data: PathBuf,
        /// Run directory to create
        #[arg(long)]
        out: PathBuf,
        /// Ablation arm: disable the task-specific experts so every layer
        /// routes through the shared path only
        #[arg(long)]
        all_shared: bool,
    },
    /// Sample architectures and score each on every task benchmark
    EvalSubnets {
        /// Run directory with a trained checkpoint
        #[arg(long)]
        run: PathBuf,
        /// Explicit data location; omitted, the suite recorded in the run
        /// manifest is regenerated
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of distinct architectures to score
        #[arg(long)]
        count: usize,
        /// Architecture sampling seed
        #[arg(long)]
        seed: u64,
        /// Benchmark CSV to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one rank predictor per task from a benchmark table
    FitPredictors {
        /// Benchmark CSV from eval-subnets
        #[arg(long)]
        bench: PathBuf,
        /// Run directory that receives the predictors
        #[arg(long)]
        out: PathBuf,
        /// Holdout rank correlation a predictor must reach to count as
        /// ready; -1 or lower accepts unconditionally
        #[arg(long, default_value_t = ufo_core::predictor::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Pick the best architecture for the target tasks under budgets
    Search {
        /// Run directory with checkpoint and predictors
        #[arg(long)]
        run: PathBuf,
        /// Benchmark CSV; defaults to bench.csv inside the run directory
        #[arg(long)]
        bench: Option<PathBuf>,
        /// Comma-separated target task indices, e.g. 0 or 0,2
        #[arg(long)]
        targets: String,
        /// Compute budget as a fraction of the largest architecture's cost
        #[arg(long)]
        flops_frac: Option<f64>,
        /// Parameter budget as a fraction of the largest architecture's size
        #[arg(long)]
        params_frac: Option<f64>,
        /// Weight of the target tasks in the rank objective
        /// (default: 1 / number of tasks)
        #[arg(long)]
        lambda: Option<f64>,
        /// Candidate-set size
        #[arg(long, default_value_t = DEFAULT_SUBSET_SIZE)]
        subset_size: usize,
        /// Candidate sampling seed; defaults to the run seed
        #[arg(long)]
        seed: Option<u64>,
        /// Search report (JSON) to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a deployable trimmed model for one architecture
    Extract {
        /// Run directory with a trained checkpoint
        #[arg(long)]
        run: PathBuf,
        /// Architecture encoding, e.g. h6m3d1gSS|h4m2d0gSS
        #[arg(long)]
        arch: String,
        /// Comma-separated task indices the model must serve
        #[arg(long)]
        targets: String,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-benchmark rank-correlation matrix from a benchmark table
    Correlate {
        /// Benchmark CSV
        #[arg(long)]
        bench: PathBuf,
        /// Correlation CSV to write
        #[arg(long)]
        out: PathBuf,
        /// Heatmap location; defaults to the CSV path with .svg extension
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Validate and canonicalize benchmark tables
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Validate an external CSV against a run's architecture space and
    /// write the canonical arch_id-sorted table; bad rows are reported
    /// with line numbers and skipped
    Import {
        /// CSV to read
        #[arg(long)]
        csv: PathBuf,
        /// Run directory declaring the architecture space
        #[arg(long)]
        run: PathBuf,
        /// Canonical CSV to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit a run's benchmark table in canonical form; any invalid row
    /// fails the export
    Export {
        /// Run directory declaring the architecture space
        #[arg(long)]
        run: PathBuf,
        /// Input table; defaults to bench.csv inside the run directory
        #[arg(long)]
        bench: Option<PathBuf>,
        /// CSV to write
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Core(c) => match c {
            CoreError::NonFinite { .. }
            | CoreError::DegenerateRanks(_)
            | CoreError::Overflow(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Seed override from the environment; set, it replaces every seed that
/// would otherwise come from a config file or manifest.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("UFO_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!("UFO_SEED must be an unsigned integer, got {v:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("UFO_SEED: {e}"))),
    }
}

fn parse_targets(s: &str) -> Result<BTreeSet<usize>, CliError> {
    s.split(',')
        .map(|part| part.trim().parse())
        .collect::<Result<BTreeSet<usize>, _>>()
        .map_err(|_| {
            CliError::Usage(format!(
                "--targets wants comma-separated task indices, got {s:?}"
            ))
        })
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    let f = File::open(path).map_err(|e| {
        CliError::Core(CoreError::Config(format!(
            "cannot open {what} {}: {e}",
            path.display()
        )))
    })?;
    Ok(BufReader::new(f))
}

fn report_import_warnings(import: &BenchImport) {
    if !import.ignored_columns.is_empty() {
        eprintln!("ignored columns: {}", import.ignored_columns.join(", "));
    }
    for bad in &import.rejected {
        eprintln!("line {}: {}", bad.line, bad.message);
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenTasks { spec, out } => {
            let seed_override = env_seed()?;
            let mut suite_spec: TaskSuiteSpec =
                serde_json::from_reader(open(&spec, "task-suite spec")?)
                    .map_err(CoreError::from)?;
            if let Some(seed) = seed_override {
                suite_spec.seed = seed;
            }
            let path = pipeline::gen_tasks(&suite_spec, &out)?;
            println!(
                "generated {} tasks (seed {}) -> {}",
                suite_spec.tasks.len(),
                suite_spec.seed,
                path.display()
            );
        }
        Cmd::Train {
            config,
            data,
            out,
            all_shared,
        } => {
            let seed_override = env_seed()?;
            let mut run_config: RunConfig =
                serde_json::from_reader(open(&config, "run config")?).map_err(CoreError::from)?;
            if all_shared {
                run_config.train.shared_only = true;
            }
            if let Some(seed) = seed_override {
                run_config.train.seed = seed;
            }
            let manifest = pipeline::train_run(&run_config, &data, &out)?;
            println!(
                "trained supernet (seed {}, config {:016x}) -> {}",
                manifest.seed,
                manifest.config_hash,
                out.display()
            );
        }
        Cmd::EvalSubnets {
            run,
            data,
            count,
            seed,
            out,
        } => {
            let table = pipeline::eval_subnets(&run, data.as_deref(), count, seed, &out)?;
            println!(
                "scored {} architectures on {} benchmarks -> {}",
                table.len(),
                table.columns().len(),
                out.display()
            );
        }
        Cmd::FitPredictors {
            bench,
            out,
            threshold,
        } => {
            let summaries = pipeline::fit_predictors(&out, &bench, threshold)?;
            for s in &summaries {
                let kd = s
                    .kd
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into());
                let verdict = if s.ready { "ready" } else { "not ready" };
                println!(
                    "task {}: holdout tau {kd} over {} rows ({verdict}, {} training rows)",
                    s.task, s.holdout_rows, s.train_rows
                );
            }
        }
        Cmd::Search {
            run,
            bench,
            targets,
            flops_frac,
            params_frac,
            lambda,
            subset_size,
            seed,
            out,
        } => {
            let targets = parse_targets(&targets)?;
            let manifest = pipeline::load_manifest(&run)?;
            let num_tasks = manifest.suite.tasks.len();
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(manifest.seed),
            };
            let mut budget = SearchBudget::new(targets, num_tasks, seed);
            if let Some(f) = flops_frac {
                budget.constraint_flops = Budget::Fraction(f);
            }
            if let Some(p) = params_frac {
                budget.constraint_params = Budget::Fraction(p);
            }
            budget.lambda = lambda;
            budget.subset_size = subset_size;
            budget.quota = DEFAULT_QUOTA.min(subset_size.max(1));
            let bench = bench.unwrap_or_else(|| run.join("bench.csv"));
            let report = pipeline::search_run(&run, &bench, &budget, &out)?;
            println!("best {}", report.choice.encoding);
            println!(
                "objective {:.4}  mean score {:.4}  feasible {}/{}",
                report.choice.objective,
                report.choice.avg_perf,
                report.choice.feasible_count,
                report.candidates
            );
            println!(
                "flops {}  params {}  -> {}",
                report.choice.cost.flops,
                report.choice.cost.params,
                out.display()
            );
        }
        Cmd::Extract {
            run,
            arch,
            targets,
            out,
        } => {
            let targets = parse_targets(&targets)?;
            let model = pipeline::extract_run(&run, &arch, &targets, &out)?;
            let (_, params, _) = pipeline::load_run_checkpoint(&run)?;
            println!(
                "extracted {} params (supernet {}) -> {}",
                model.num_params(),
                params.numel(),
                out.display()
            );
        }
        Cmd::Correlate { bench, out, svg } => {
            let import = import_bench_loose(open(&bench, "benchmark table")?)?;
            report_import_warnings(&import);
            let report = correlation_report(&import.table)?;
            let mut csv = Vec::new();
            report.to_csv(&mut csv)?;
            fs::write(&out, csv).map_err(CoreError::from)?;
            let svg_path = svg.unwrap_or_else(|| out.with_extension("svg"));
            let mut heat = Vec::new();
            report.to_svg(&mut heat)?;
            fs::write(&svg_path, heat).map_err(CoreError::from)?;
            println!(
                "correlated {} benchmarks over {} rows -> {} and {}",
                report.names.len(),
                import.table.len(),
                out.display(),
                svg_path.display()
            );
        }
        Cmd::Bench { cmd } => run_bench(cmd)?,
    }
    Ok(())
}

fn run_bench(cmd: BenchCmd) -> Result<(), CliError> {
    match cmd {
        BenchCmd::Import { csv, run, out } => {
            let (scfg, _, _) = pipeline::load_run_checkpoint(&run)?;
            let mut import = import_bench(open(&csv, "benchmark table")?, &scfg.space)?;
            report_import_warnings(&import);
            if import.table.is_empty() {
                return Err(CoreError::Format("no valid rows to import".into()).into());
            }
            import.table.sort_by_arch_id();
            let mut bytes = Vec::new();
            export_bench(&import.table, &mut bytes)?;
            fs::write(&out, bytes).map_err(CoreError::from)?;
            println!(
                "imported {} rows ({} rejected) -> {}",
                import.table.len(),
                import.rejected.len(),
                out.display()
            );
        }
        BenchCmd::Export { run, bench, out } => {
            let (scfg, _, _) = pipeline::load_run_checkpoint(&run)?;
            let bench = bench.unwrap_or_else(|| run.join("bench.csv"));
            if !bench.exists() {
                return Err(CoreError::Config(format!(
                    "missing artifact {}: run `eval-subnets` first",
                    bench.display()
                ))
                .into());
            }
            let mut import = import_bench(open(&bench, "benchmark table")?, &scfg.space)?;
            if let Some(bad) = import.rejected.first() {
                return Err(CoreError::Format(format!(
                    "line {}: {} ({} invalid rows in all)",
                    bad.line,
                    bad.message,
                    import.rejected.len()
                ))
                .into());
            }
            import.table.sort_by_arch_id();
            let mut bytes = Vec::new();
            export_bench(&import.table, &mut bytes)?;
            fs::write(&out, bytes).map_err(CoreError::from)?;
            println!("exported {} rows -> {}", import.table.len(), out.display());
        }
    }
    Ok(())
}
