//! End-to-end run orchestration: the run-directory layout, the manifest
//! that fingerprints a run, and the pipeline steps shared by the
//! command-line driver and the integration tests.
//!
//! A run directory is created by `train` and accumulates artifacts:
//!
//! ```text
//! RUN/
//!   manifest.json        version, seed, config hash, full config
//!   supernet.ufoc        trained supernet checkpoint
//!   train_log.jsonl      one record per training step
//!   predictors/
//!     task<t>.ufop       fitted per-task predictors
//!     readiness.json     holdout verdicts per task
//!   search_report.json   default search output location
//! ```
//!
//! Task data lives in its own directory (`tasks.ufod`), so one dataset can
//! serve many runs. Every step is deterministic given its inputs and seed;
//! two runs with equal manifests produce byte-identical benchmark tables
//! and search reports. Steps check their prerequisites and fail with the
//! missing artifact named.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{cost, Architecture, CostMode, SearchSpace};
use crate::bench_table::{export_bench, import_bench, BenchRow, BenchTable, ColumnMeta};
use crate::error::{CoreError, Result};
use crate::eval::SubnetEvaluator;
use crate::predictor::{self, is_holdout, RankPredictor};
use crate::search::{
    orp_argmin, sample_candidates, IterationLog, PerfTable, SearchBudget, SearchMode, SearchReport,
};
use crate::supernet::{
    extract_subnet, load_checkpoint, save_checkpoint, GateState, SupernetConfig, SupernetParams,
    TrimmedModel,
};
use crate::taskgen::{self, TaskSuite, TaskSuiteSpec};
use crate::trainer::{self, TrainConfig};
use crate::util::fnv1a64;

pub const TASKS_FILE: &str = "tasks.ufod";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "supernet.ufoc";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PREDICTOR_DIR: &str = "predictors";
pub const READINESS_FILE: &str = "readiness.json";
pub const SEARCH_REPORT_FILE: &str = "search_report.json";

pub const DEFAULT_EXTRACT_DELTA: f64 = 0.2;

/// Everything a run needs beyond the task data: the architecture space,
/// the backbone dimensions, and the training hyperparameters. Task count,
/// image size, and class counts come from the task suite at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub heads: Vec<usize>,
    pub mlp_ratios: Vec<f64>,
    pub num_layers: usize,
    pub embed_dim: usize,
    pub head_dim: usize,
    #[serde(default)]
    pub forced_keep_layers: Vec<usize>,
    pub patch_size: usize,
    pub feature_dim: usize,
    pub train: TrainConfig,
    /// Gate discretization threshold used at extraction.
    #[serde(default = "default_delta")]
    pub extract_delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_EXTRACT_DELTA
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.extract_delta.is_finite() && (0.0..=1.0).contains(&self.extract_delta)) {
            return Err(CoreError::Config(format!(
                "extract_delta must lie in [0, 1], got {}",
                self.extract_delta
            )));
        }
        Ok(())
    }

    /// Builds the search space for this configuration against a task suite.
    pub fn space_for(&self, suite: &TaskSuite) -> Result<SearchSpace> {
        let image = suite_image_size(suite)?;
        if self.patch_size == 0 || image % self.patch_size != 0 {
            return Err(CoreError::Config(format!(
                "patch size {} must divide the image size {image}",
                self.patch_size
            )));
        }
        let grid = image / self.patch_size;
        SearchSpace::new(
            self.heads.clone(),
            self.mlp_ratios.clone(),
            self.num_layers,
            suite.tasks.len(),
            self.embed_dim,
            self.head_dim,
            grid * grid + 1,
            &self.forced_keep_layers,
            Some(self.patch_size * self.patch_size),
        )
    }

    pub fn supernet_for(&self, suite: &TaskSuite) -> Result<SupernetConfig> {
        let space = self.space_for(suite)?;
        SupernetConfig::new(
            space,
            suite_image_size(suite)?,
            self.patch_size,
            self.feature_dim,
            suite.spec.tasks.iter().map(|t| t.identities).collect(),
        )
    }
}

fn suite_image_size(suite: &TaskSuite) -> Result<usize> {
    let image = suite
        .spec
        .tasks
        .first()
        .ok_or_else(|| CoreError::Config("task suite has no tasks".into()))?
        .image_size;
    if suite.spec.tasks.iter().any(|t| t.image_size != image) {
        return Err(CoreError::Config(
            "all tasks must share one image size to feed one backbone".into(),
        ));
    }
    Ok(image)
}

/// Fingerprint of everything that determines a run's outputs.
pub fn config_fingerprint(config: &RunConfig, suite: &TaskSuiteSpec) -> Result<u64> {
    #[derive(Serialize)]
    struct Hashed<'a> {
        config: &'a RunConfig,
        suite: &'a TaskSuiteSpec,
    }
    Ok(fnv1a64(&serde_json::to_vec(&Hashed { config, suite })?))
}

/// Written to `manifest.json` when a run is trained. Two runs with equal
/// manifests produce byte-identical downstream reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: u64,
    pub config: RunConfig,
    pub suite: TaskSuiteSpec,
}

impl RunManifest {
    pub fn new(config: &RunConfig, suite: &TaskSuiteSpec) -> Result<Self> {
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.train.seed,
            config_hash: config_fingerprint(config, suite)?,
            config: config.clone(),
            suite: suite.clone(),
        })
    }
}

/// Resolves a prerequisite artifact or fails naming it and the step that
/// produces it.
fn artifact(dir: &Path, name: &str, produced_by: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.exists() {
        return Err(CoreError::Config(format!(
            "missing artifact {name} (expected at {}): run `{produced_by}` first",
            p.display()
        )));
    }
    Ok(p)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Generates the synthetic task data and writes it under `out_dir`.
pub fn gen_tasks(spec: &TaskSuiteSpec, out_dir: &Path) -> Result<PathBuf> {
    let suite = taskgen::generate(spec)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(TASKS_FILE);
    taskgen::save(&suite, &path)?;
    Ok(path)
}

/// Loads task data from a directory produced by [`gen_tasks`] (or a direct
/// path to the container file).
pub fn load_suite(data: &Path) -> Result<TaskSuite> {
    let p = if data.is_dir() {
        artifact(data, TASKS_FILE, "gen-tasks")?
    } else if data.exists() {
        data.to_path_buf()
    } else {
        return Err(CoreError::Config(format!(
            "missing task data {}: run `gen-tasks` first",
            data.display()
        )));
    };
    taskgen::load(&p)
}

/// Trains the supernet and initializes the run directory: checkpoint,
/// training log, and manifest.
pub fn train_run(config: &RunConfig, data: &Path, run_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let suite = load_suite(data)?;
    let scfg = config.supernet_for(&suite)?;
    fs::create_dir_all(run_dir)?;
    let mut log = BufWriter::new(File::create(run_dir.join(TRAIN_LOG_FILE))?);
    let (params, gates, _records) = trainer::train(&scfg, &config.train, &suite, &mut log)?;
    log.flush()?;
    save_checkpoint(&run_dir.join(CHECKPOINT_FILE), &scfg, &params, &gates)?;
    let manifest = RunManifest::new(config, &suite.spec)?;
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest> {
    let p = artifact(run_dir, MANIFEST_FILE, "train")?;
    Ok(serde_json::from_reader(BufReader::new(File::open(p)?))?)
}

pub fn load_run_checkpoint(run_dir: &Path) -> Result<(SupernetConfig, SupernetParams, GateState)> {
    let p = artifact(run_dir, CHECKPOINT_FILE, "train")?;
    load_checkpoint(&p)
}

/// The task suite a run was trained on: loaded from an explicit data
/// location when given, otherwise regenerated from the spec embedded in
/// the run manifest (generation is deterministic, so both routes agree).
pub fn suite_for_run(run_dir: &Path, data: Option<&Path>) -> Result<TaskSuite> {
    match data {
        Some(d) => load_suite(d),
        None => taskgen::generate(&load_manifest(run_dir)?.suite),
    }
}

/// Task-group labels from the declared relatedness: tasks sharing more
/// than half their generative factors land in one group, labeled by the
/// smallest member index.
fn task_groups(suite: &TaskSuiteSpec) -> Vec<String> {
    let n = suite.tasks.len();
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if suite.relatedness[i][j] > 0.5 {
                let (a, b) = (find(&mut root, i), find(&mut root, j));
                root[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).map(|i| format!("g{}", find(&mut root, i))).collect()
}

/// Samples `count` distinct architectures, scores each task through the
/// trained supernet (mean average precision in percentage points), and
/// writes the benchmark CSV. Evaluations fan out across threads; rows merge
/// in arch_id order.
pub fn eval_subnets(
    run_dir: &Path,
    data: Option<&Path>,
    count: usize,
    seed: u64,
    out_csv: &Path,
) -> Result<BenchTable> {
    if count == 0 {
        return Err(CoreError::Config("eval-subnets needs a positive count".into()));
    }
    let (scfg, params, gates) = load_run_checkpoint(run_dir)?;
    let suite = suite_for_run(run_dir, data)?;
    let evaluator = SubnetEvaluator::new(&scfg, &params, &gates, &suite)?;
    let archs = sample_candidates(&scfg.space, count, seed);
    if archs.is_empty() {
        return Err(CoreError::Config("the space yielded no candidates".into()));
    }

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(archs.len());
    let chunk = archs.len().div_ceil(workers);
    let ev = &evaluator;
    let chunked: Vec<Vec<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = archs
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    c.iter()
                        .map(|a| {
                            Ok(ev
                                .score_all(a)?
                                .into_iter()
                                .map(|m| m.mean_ap * 100.0)
                                .collect::<Vec<f64>>())
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let scored: Vec<Vec<f64>> = chunked.into_iter().flatten().collect();

    let groups = task_groups(&suite.spec);
    let columns = (0..suite.tasks.len())
        .map(|t| ColumnMeta::new(&format!("task{t}"), &groups[t], true))
        .collect::<Result<Vec<_>>>()?;
    let mut table = BenchTable::new(columns)?;
    for (i, (arch, scores)) in archs.iter().zip(scored).enumerate() {
        let c = cost(arch, &scfg.space, &CostMode::SupernetView)?;
        table.push_row(
            &scfg.space,
            BenchRow {
                arch_id: format!("a{i:05}"),
                encoding: arch.encode(),
                scores,
                flops: c.flops,
                params: c.params,
            },
        )?;
    }
    table.sort_by_arch_id();

    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(out_csv)?);
    export_bench(&table, &mut w)?;
    w.flush()?;
    Ok(table)
}

/// Reads a benchmark CSV produced by [`eval_subnets`], failing loudly on
/// any rejected row (internal artifacts must be pristine).
fn import_bench_strict(path: &Path, space: &SearchSpace) -> Result<BenchTable> {
    let file = File::open(path)?;
    let got = import_bench(BufReader::new(file), space)?;
    if !got.rejected.is_empty() {
        let lines: Vec<String> = got
            .rejected
            .iter()
            .map(|e| format!("line {}: {}", e.line, e.message))
            .collect();
        return Err(CoreError::Format(format!(
            "benchmark table {} has bad rows: {}",
            path.display(),
            lines.join("; ")
        )));
    }
    Ok(got.table)
}

/// Holdout verdict recorded for one task's predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub task: usize,
    /// Holdout rank correlation; absent when the holdout was too small or
    /// degenerate.
    pub kd: Option<f64>,
    pub ready: bool,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

/// Fits one predictor per task from the measured benchmark table, judges
/// each on the hash-designated holdout rows, and stores predictors plus
/// verdicts under the run directory.
pub fn fit_predictors(
    run_dir: &Path,
    bench_csv: &Path,
    threshold: f64,
) -> Result<Vec<PredictorSummary>> {
    let (scfg, _params, _gates) = load_run_checkpoint(run_dir)?;
    let space = &scfg.space;
    if !bench_csv.exists() {
        return Err(CoreError::Config(format!(
            "missing artifact {}: run `eval-subnets` first",
            bench_csv.display()
        )));
    }
    let table = import_bench_strict(bench_csv, space)?;
    if table.columns().len() != space.num_tasks() {
        return Err(CoreError::Config(format!(
            "benchmark table has {} score columns for {} tasks",
            table.columns().len(),
            space.num_tasks()
        )));
    }

    let mut train_archs = Vec::new();
    let mut hold_archs = Vec::new();
    let mut train_rows = Vec::new();
    let mut hold_rows = Vec::new();
    for row in table.rows() {
        let arch = Architecture::decode(&row.encoding, space)?;
        if is_holdout(&row.encoding) {
            hold_archs.push(arch);
            hold_rows.push(row);
        } else {
            train_archs.push(arch);
            train_rows.push(row);
        }
    }

    let pred_dir = run_dir.join(PREDICTOR_DIR);
    fs::create_dir_all(&pred_dir)?;
    let mut summaries = Vec::new();
    for t in 0..space.num_tasks() {
        let scores: Vec<f64> = train_rows.iter().map(|r| r.scores[t]).collect();
        let p = predictor::fit(
            space,
            t,
            &train_archs,
            &scores,
            predictor::DEFAULT_ALPHA2,
            predictor::DEFAULT_SIGMA2,
        )?;
        let mut w = BufWriter::new(File::create(pred_dir.join(format!("task{t}.ufop")))?);
        p.save(&mut w)?;
        w.flush()?;

        let truth: Vec<f64> = hold_rows.iter().map(|r| r.scores[t]).collect();
        let verdict = if hold_archs.len() >= 2 {
            p.readiness(space, &hold_archs, &truth, threshold).ok()
        } else {
            None
        };
        summaries.push(PredictorSummary {
            task: t,
            kd: verdict.map(|v| v.kd),
            ready: threshold <= -1.0 || verdict.is_some_and(|v| v.ready),
            train_rows: train_archs.len(),
            holdout_rows: hold_archs.len(),
        });
    }
    write_json(&pred_dir.join(READINESS_FILE), &summaries)?;
    Ok(summaries)
}

fn load_predictors(run_dir: &Path, space: &SearchSpace) -> Result<(Vec<RankPredictor>, Vec<PredictorSummary>)> {
    let pred_dir = artifact(run_dir, PREDICTOR_DIR, "fit-predictors")?;
    let summaries: Vec<PredictorSummary> = serde_json::from_reader(BufReader::new(File::open(
        artifact(&pred_dir, READINESS_FILE, "fit-predictors")?,
    )?))?;
    let mut predictors = Vec::with_capacity(space.num_tasks());
    for t in 0..space.num_tasks() {
        let p = artifact(&pred_dir, &format!("task{t}.ufop"), "fit-predictors")?;
        let mut r = BufReader::new(File::open(p)?);
        predictors.push(RankPredictor::load(&mut r, space)?);
    }
    Ok((predictors, summaries))
}

/// Constrained search over measured-plus-predicted candidates: benchmark
/// rows keep their measured scores, fresh uniformly sampled candidates are
/// scored by the fitted predictors, and the feasible rank-objective argmin
/// wins. The report is also written to `out`.
pub fn search_run(
    run_dir: &Path,
    bench_csv: &Path,
    budget: &SearchBudget,
    out: &Path,
) -> Result<SearchReport> {
    let (scfg, _params, _gates) = load_run_checkpoint(run_dir)?;
    let space = &scfg.space;
    budget.validate(space)?;
    let (predictors, summaries) = load_predictors(run_dir, space)?;
    if !bench_csv.exists() {
        return Err(CoreError::Config(format!(
            "missing artifact {}: run `eval-subnets` first",
            bench_csv.display()
        )));
    }
    let bench = import_bench_strict(bench_csv, space)?;

    // Measured rows first (already in arch_id order), then fresh distinct
    // candidates until the configured set size.
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut archs = Vec::new();
    for row in bench.rows() {
        if seen.insert(row.encoding.clone()) {
            archs.push(Architecture::decode(&row.encoding, space)?);
        }
    }
    let measured_count = archs.len();
    for a in sample_candidates(space, budget.subset_size, budget.seed) {
        if archs.len() >= budget.subset_size.max(measured_count) {
            break;
        }
        if seen.insert(a.encode()) {
            archs.push(a);
        }
    }

    let mut table = PerfTable::new(space, archs)?;
    let mut by_encoding: std::collections::BTreeMap<&str, &BenchRow> = Default::default();
    for row in bench.rows() {
        by_encoding.insert(row.encoding.as_str(), row);
    }
    let mut sampled = Vec::new();
    for row in 0..table.len() {
        let enc = table.encodings()[row].clone();
        if let Some(b) = by_encoding.get(enc.as_str()) {
            table.set_measured(row, &b.scores)?;
            sampled.push(enc);
        } else {
            for (t, p) in predictors.iter().enumerate() {
                let score = p.predict(space, &table.archs()[row])?;
                table.set_predicted(row, t, score)?;
            }
        }
    }

    let choice = orp_argmin(&table, space, budget)?;
    let (measured_cells, predicted_cells) = table.provenance_counts();
    let (resolved_flops, resolved_params) = budget.resolve(space)?;
    let report = SearchReport {
        mode: SearchMode::Predictors,
        budget: budget.clone(),
        resolved_flops,
        resolved_params,
        candidates: table.len(),
        iterations: vec![IterationLog {
            iteration: 1,
            sampled,
            kd: summaries.iter().map(|s| s.kd).collect(),
            ready: summaries.iter().map(|s| s.ready).collect(),
        }],
        choice,
        measured_cells,
        predicted_cells,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_json(out, &report)?;
    Ok(report)
}

/// Extracts a standalone trimmed model for `targets` at `encoding` and
/// writes it to `out`. Gate decisions come from the learned logits with the
/// run's discretization threshold.
pub fn extract_run(
    run_dir: &Path,
    encoding: &str,
    targets: &BTreeSet<usize>,
    out: &Path,
) -> Result<TrimmedModel> {
    let (scfg, params, gates) = load_run_checkpoint(run_dir)?;
    let manifest = load_manifest(run_dir)?;
    let arch = Architecture::decode(encoding, &scfg.space)?;
    let model = extract_subnet(
        &scfg,
        &params,
        &gates,
        &arch,
        targets,
        manifest.config.extract_delta,
    )?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    model.save(out)?;
    Ok(model)
}
