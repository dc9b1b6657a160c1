//! Constrained multi-task architecture search over rank tables.
//!
//! Candidates are scored per task (measured where a ground-truth harness
//! has been spent, predicted elsewhere), turned into per-task ranks over
//! the feasible set, and the winner minimizes the weighted rank sum
//! `lambda * sum over target tasks + (1 - lambda) * sum over the rest`
//! subject to flops and parameter budgets. A brute-force selector over
//! fully measured tables serves as the verification oracle for the
//! iterative search.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{cost, sample_uniform, Architecture, CostMode, CostReport, GateChoice, SearchSpace};
use crate::error::{CoreError, Result};
use crate::eval::SubnetEvaluator;
use crate::objectives::average_ranks;
use crate::predictor::{self, is_holdout, RankPredictor};

pub const DEFAULT_QUOTA: usize = 50;
pub const DEFAULT_SUBSET_SIZE: usize = 2000;
pub const DEFAULT_MAX_ITERATIONS: usize = 5;

/// One resource limit: an absolute count, or a fraction of what the
/// largest architecture (every layer kept, both paths everywhere) costs
/// under the budget's target-task trimming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Absolute(u64),
    Fraction(f64),
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::Absolute(u64::MAX)
    }

    fn validate(&self) -> Result<()> {
        if let Budget::Fraction(f) = self {
            if !(f.is_finite() && *f > 0.0) {
                return Err(CoreError::Config(format!(
                    "budget fraction must be positive and finite, got {f}"
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, reference: u64) -> u64 {
        match *self {
            Budget::Absolute(v) => v,
            Budget::Fraction(f) => (f * reference as f64).floor() as u64,
        }
    }
}

/// Everything that parameterizes one search: constraints, target tasks,
/// the rank weight, and the sampling/readiness controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub constraint_flops: Budget,
    pub constraint_params: Budget,
    /// Weight of the target tasks in the rank objective; `None` means
    /// `1 / num_tasks`.
    pub lambda: Option<f64>,
    /// Target task set; never empty.
    pub targets: BTreeSet<usize>,
    /// Maximum search iterations (`k`).
    pub max_iterations: usize,
    /// Per-task readiness thresholds on the holdout rank correlation.
    /// A threshold of -1 or lower marks the task always ready.
    pub thresholds: Vec<f64>,
    /// Ground-truth evaluations spent per iteration.
    pub quota: usize,
    /// Candidate-set size when the search samples its own candidates.
    pub subset_size: usize,
    pub seed: u64,
}

impl SearchBudget {
    pub fn new(targets: BTreeSet<usize>, num_tasks: usize, seed: u64) -> Self {
        SearchBudget {
            constraint_flops: Budget::unlimited(),
            constraint_params: Budget::unlimited(),
            lambda: None,
            targets,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            thresholds: vec![predictor::DEFAULT_THRESHOLD; num_tasks],
            quota: DEFAULT_QUOTA,
            subset_size: DEFAULT_SUBSET_SIZE,
            seed,
        }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        self.constraint_flops.validate()?;
        self.constraint_params.validate()?;
        if self.targets.is_empty() {
            return Err(CoreError::Config("target task set must not be empty".into()));
        }
        if let Some(&bad) = self.targets.iter().find(|&&t| t >= space.num_tasks()) {
            return Err(CoreError::Config(format!(
                "target task {bad} out of {} tasks",
                space.num_tasks()
            )));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && (0.0..=1.0).contains(&l)) {
                return Err(CoreError::Config(format!("lambda must lie in [0, 1], got {l}")));
            }
        }
        if self.thresholds.len() != space.num_tasks() {
            return Err(CoreError::Config(format!(
                "{} readiness thresholds for {} tasks",
                self.thresholds.len(),
                space.num_tasks()
            )));
        }
        if self.max_iterations == 0 || self.quota == 0 {
            return Err(CoreError::Config(
                "max_iterations and quota must be positive".into(),
            ));
        }
        if self.subset_size < self.quota {
            return Err(CoreError::Config(format!(
                "candidate set of {} cannot serve a quota of {}",
                self.subset_size, self.quota
            )));
        }
        Ok(())
    }

    pub fn lambda_value(&self, num_tasks: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / num_tasks as f64)
    }

    /// Absolute (flops, params) limits; fractions resolve against the
    /// largest architecture trimmed to the target tasks.
    pub fn resolve(&self, space: &SearchSpace) -> Result<(u64, u64)> {
        let needs_ref = matches!(self.constraint_flops, Budget::Fraction(_))
            || matches!(self.constraint_params, Budget::Fraction(_));
        let (ref_flops, ref_params) = if needs_ref {
            let r = cost(
                &space.max_arch(GateChoice::Both),
                space,
                &CostMode::Trimmed(self.targets.clone()),
            )?;
            (r.flops, r.params)
        } else {
            (0, 0)
        };
        Ok((
            self.constraint_flops.resolve(ref_flops),
            self.constraint_params.resolve(ref_params),
        ))
    }
}

/// Where a table cell came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Predicted,
}

/// One per-task score of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub score: f64,
    pub provenance: Provenance,
}

/// Candidate set with per-task score columns. Rows always decode to valid
/// architectures of the owning space; rank columns are derived on demand so
/// they can never drift from the scores.
#[derive(Debug, Clone)]
pub struct PerfTable {
    encodings: Vec<String>,
    archs: Vec<Architecture>,
    /// `cells[row][task]`; `None` marks a hole (neither measured nor
    /// predicted yet).
    cells: Vec<Vec<Option<Cell>>>,
    num_tasks: usize,
}

impl PerfTable {
    pub fn new(space: &SearchSpace, archs: Vec<Architecture>) -> Result<Self> {
        let mut encodings = Vec::with_capacity(archs.len());
        for a in &archs {
            crate::arch::ensure_valid(a, space)?;
            encodings.push(a.encode());
        }
        let cells = vec![vec![None; space.num_tasks()]; archs.len()];
        Ok(PerfTable {
            encodings,
            archs,
            cells,
            num_tasks: space.num_tasks(),
        })
    }

    pub fn len(&self) -> usize {
        self.archs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    pub fn archs(&self) -> &[Architecture] {
        &self.archs
    }

    pub fn encodings(&self) -> &[String] {
        &self.encodings
    }

    pub fn cell(&self, row: usize, task: usize) -> Option<Cell> {
        self.cells[row][task]
    }

    pub fn set_measured(&mut self, row: usize, scores: &[f64]) -> Result<()> {
        self.set_row(row, scores, Provenance::Measured)
    }

    pub fn set_predicted(&mut self, row: usize, task: usize, score: f64) -> Result<()> {
        self.check_score(score)?;
        if self.cells[row][task].map(|c| c.provenance) == Some(Provenance::Measured) {
            return Err(CoreError::Config(format!(
                "cell ({row}, {task}) is already measured; refusing to overwrite with a prediction"
            )));
        }
        self.cells[row][task] = Some(Cell {
            score,
            provenance: Provenance::Predicted,
        });
        Ok(())
    }

    fn set_row(&mut self, row: usize, scores: &[f64], provenance: Provenance) -> Result<()> {
        if scores.len() != self.num_tasks {
            return Err(CoreError::Config(format!(
                "{} scores for {} tasks",
                scores.len(),
                self.num_tasks
            )));
        }
        for &s in scores {
            self.check_score(s)?;
        }
        for (t, &s) in scores.iter().enumerate() {
            self.cells[row][t] = Some(Cell {
                score: s,
                provenance,
            });
        }
        Ok(())
    }

    fn check_score(&self, s: f64) -> Result<()> {
        if !s.is_finite() {
            return Err(CoreError::NonFinite {
                context: "table score".into(),
                step: None,
            });
        }
        Ok(())
    }

    pub fn fully_measured(&self) -> bool {
        self.cells
            .iter()
            .flatten()
            .all(|c| c.map(|c| c.provenance) == Some(Provenance::Measured))
    }

    /// Complete score vector of one row, or an error naming the hole.
    pub fn row_scores(&self, row: usize) -> Result<Vec<f64>> {
        (0..self.num_tasks)
            .map(|t| {
                self.cells[row][t].map(|c| c.score).ok_or_else(|| {
                    CoreError::InsufficientData(format!(
                        "candidate {} has no score for task {t}",
                        self.encodings[row]
                    ))
                })
            })
            .collect()
    }

    /// Best-first average ranks of `rows` on `task` (higher score, better
    /// rank).
    pub fn ranks_over(&self, rows: &[usize], task: usize) -> Result<Vec<f64>> {
        let scores: Vec<f64> = rows
            .iter()
            .map(|&r| {
                self.cells[r][task].map(|c| c.score).ok_or_else(|| {
                    CoreError::InsufficientData(format!(
                        "candidate {} has no score for task {task}",
                        self.encodings[r]
                    ))
                })
            })
            .collect::<Result<_>>()?;
        average_ranks(&scores, true)
    }

    pub fn provenance_counts(&self) -> (usize, usize) {
        let mut measured = 0;
        let mut predicted = 0;
        for c in self.cells.iter().flatten().flatten() {
            match c.provenance {
                Provenance::Measured => measured += 1,
                Provenance::Predicted => predicted += 1,
            }
        }
        (measured, predicted)
    }
}

/// Set-weighted score sum: `lambda * sum over targets + (1 - lambda) * sum
/// over the rest`. `scores` covers every task.
pub fn avg_perf(scores: &[f64], targets: &BTreeSet<usize>, lambda: f64) -> Result<f64> {
    weighted_sum(scores, targets, lambda)
}

/// The rank objective to minimize; same weighting over per-task ranks.
pub fn avg_rank_objective(ranks: &[f64], targets: &BTreeSet<usize>, lambda: f64) -> Result<f64> {
    weighted_sum(ranks, targets, lambda)
}

fn weighted_sum(values: &[f64], targets: &BTreeSet<usize>, lambda: f64) -> Result<f64> {
    if targets.is_empty() {
        return Err(CoreError::Config("target task set must not be empty".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= values.len()) {
        return Err(CoreError::Config(format!(
            "target task {bad} out of {} values",
            values.len()
        )));
    }
    if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
        return Err(CoreError::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: format!("objective input {bad}"),
            step: None,
        });
    }
    let mut total = 0.0;
    for (t, &v) in values.iter().enumerate() {
        total += if targets.contains(&t) { lambda } else { 1.0 - lambda } * v;
    }
    Ok(total)
}

/// Indices of `archs` whose trimmed-to-target cost fits the budget.
/// An empty result is a legitimate outcome, not an error.
pub fn filter_constraints(
    archs: &[Architecture],
    space: &SearchSpace,
    budget: &SearchBudget,
) -> Result<Vec<usize>> {
    budget.validate(space)?;
    let (max_flops, max_params) = budget.resolve(space)?;
    let mode = CostMode::Trimmed(budget.targets.clone());
    let mut keep = Vec::new();
    for (i, a) in archs.iter().enumerate() {
        let c = cost(a, space, &mode)?;
        if c.flops <= max_flops && c.params <= max_params {
            keep.push(i);
        }
    }
    Ok(keep)
}

/// Exhaustive selector over a fully measured table: per-task ranks over the
/// feasible rows, weighted rank sum, smallest objective wins, ties broken
/// by lexicographically smallest encoding. The verification oracle for
/// [`msa`].
pub fn brute_force_best(
    table: &PerfTable,
    space: &SearchSpace,
    budget: &SearchBudget,
) -> Result<SearchChoice> {
    if !table.fully_measured() {
        return Err(CoreError::InsufficientData(
            "brute-force selection needs every cell measured".into(),
        ));
    }
    let feasible = filter_constraints(table.archs(), space, budget)?;
    select_best(table, space, budget, &feasible)
}

/// Feasible-set rank-objective argmin over a table whose cells may mix
/// measured and predicted scores: the final selection stage of the
/// iterative search, exposed for pipelines that fill tables offline.
pub fn orp_argmin(
    table: &PerfTable,
    space: &SearchSpace,
    budget: &SearchBudget,
) -> Result<SearchChoice> {
    let feasible = filter_constraints(table.archs(), space, budget)?;
    select_best(table, space, budget, &feasible)
}

/// Winner of one selection pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchChoice {
    pub encoding: String,
    /// Weighted rank objective of the winner over the feasible set.
    pub objective: f64,
    /// Weighted score sum of the winner (same weights, raw scores).
    pub avg_perf: f64,
    /// Inference cost trimmed to the target tasks.
    pub cost: CostReport,
    pub feasible_count: usize,
}

fn select_best(
    table: &PerfTable,
    space: &SearchSpace,
    budget: &SearchBudget,
    feasible: &[usize],
) -> Result<SearchChoice> {
    if feasible.is_empty() {
        let (f, p) = nearest_feasible(table.archs(), space, budget)?;
        return Err(CoreError::EmptyFeasibleSet {
            suggested_flops: f,
            suggested_params: p,
        });
    }
    let lambda = budget.lambda_value(table.num_tasks);
    // Rank columns are computed over the feasible subset: the constrained
    // problem ranks only admissible candidates against each other.
    let mut rank_columns = Vec::with_capacity(table.num_tasks);
    for t in 0..table.num_tasks {
        rank_columns.push(table.ranks_over(feasible, t)?);
    }
    let mut best: Option<(f64, &str, usize)> = None;
    for (k, &row) in feasible.iter().enumerate() {
        let ranks: Vec<f64> = rank_columns.iter().map(|col| col[k]).collect();
        let obj = avg_rank_objective(&ranks, &budget.targets, lambda)?;
        let enc = table.encodings[row].as_str();
        let better = match &best {
            None => true,
            Some((bobj, benc, _)) => obj < *bobj || (obj == *bobj && enc < *benc),
        };
        if better {
            best = Some((obj, enc, row));
        }
    }
    let (objective, _, row) = best.expect("feasible set is non-empty");
    let scores = table.row_scores(row)?;
    Ok(SearchChoice {
        encoding: table.encodings[row].clone(),
        objective,
        avg_perf: avg_perf(&scores, &budget.targets, lambda)?,
        cost: cost(
            &table.archs[row],
            space,
            &CostMode::Trimmed(budget.targets.clone()),
        )?,
        feasible_count: feasible.len(),
    })
}

/// Smallest constraint relaxation that admits at least one candidate: the
/// budget stretched to cover the candidate that overshoots it the least.
fn nearest_feasible(
    archs: &[Architecture],
    space: &SearchSpace,
    budget: &SearchBudget,
) -> Result<(u64, u64)> {
    let (max_flops, max_params) = budget.resolve(space)?;
    let mode = CostMode::Trimmed(budget.targets.clone());
    let mut best: Option<(u128, u128, u64, u64)> = None;
    for a in archs {
        let c = cost(a, space, &mode)?;
        let over = c.flops.saturating_sub(max_flops) as u128
            + c.params.saturating_sub(max_params) as u128;
        let size = c.flops as u128 + c.params as u128;
        if best.is_none_or(|(bo, bs, _, _)| (over, size) < (bo, bs)) {
            best = Some((over, size, c.flops, c.params));
        }
    }
    let (_, _, f, p) = best.ok_or_else(|| {
        CoreError::InsufficientData("no candidates to suggest a feasible budget from".into())
    })?;
    Ok((f.max(max_flops), p.max(max_params)))
}

/// Ground truth for the search: scores one architecture on every task.
pub trait MeasureSource {
    fn measure(&mut self, arch: &Architecture) -> Result<Vec<f64>>;
}

/// Measures through a trained supernet: per-task retrieval mean average
/// precision in percentage points.
pub struct EvaluatorSource<'a, 'e> {
    pub evaluator: &'e SubnetEvaluator<'a>,
}

impl MeasureSource for EvaluatorSource<'_, '_> {
    fn measure(&mut self, arch: &Architecture) -> Result<Vec<f64>> {
        Ok(self
            .evaluator
            .score_all(arch)?
            .into_iter()
            .map(|m| m.mean_ap * 100.0)
            .collect())
    }
}

/// Replays a fully measured table, for oracle runs and tests.
pub struct TableSource<'t> {
    table: &'t PerfTable,
}

impl<'t> TableSource<'t> {
    pub fn new(table: &'t PerfTable) -> Self {
        TableSource { table }
    }
}

impl MeasureSource for TableSource<'_> {
    fn measure(&mut self, arch: &Architecture) -> Result<Vec<f64>> {
        let enc = arch.encode();
        let row = self
            .table
            .encodings
            .iter()
            .position(|e| e == &enc)
            .ok_or_else(|| {
                CoreError::InsufficientData(format!("architecture {enc} is not in the table"))
            })?;
        self.table.row_scores(row)
    }
}

/// Whether the search trusts fitted predictors for unmeasured cells or
/// measures every candidate outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    Predictors,
    Oracle,
}

/// One iteration's audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Encodings measured this iteration.
    pub sampled: Vec<String>,
    /// Holdout rank correlation per task; `null` when not computable yet.
    pub kd: Vec<Option<f64>>,
    pub ready: Vec<bool>,
}

/// Full search result: the winner plus everything needed to audit and
/// reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub mode: SearchMode,
    pub budget: SearchBudget,
    /// Absolute limits the fractions resolved to.
    pub resolved_flops: u64,
    pub resolved_params: u64,
    pub candidates: usize,
    pub iterations: Vec<IterationLog>,
    pub choice: SearchChoice,
    pub measured_cells: usize,
    pub predicted_cells: usize,
}

/// Distinct uniform candidates. Small spaces may not contain `size`
/// distinct architectures; sampling stops after a bounded effort.
pub fn sample_candidates(space: &SearchSpace, size: usize, seed: u64) -> Vec<Architecture> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    let mut misses = 0usize;
    while out.len() < size && misses < 200 * size.max(1) {
        let a = sample_uniform(space, &mut rng);
        if seen.insert(a.encode()) {
            out.push(a);
        } else {
            misses += 1;
        }
    }
    out
}

/// The iterative search: sample candidates, spend ground-truth quota,
/// fit per-task predictors, gate on holdout rank correlation, then fill
/// the table (measured where available, predicted elsewhere) and take the
/// feasible rank-objective argmin.
///
/// In [`SearchMode::Oracle`] every candidate is measured and predictors are
/// bypassed; the result equals [`brute_force_best`] on the same table.
pub fn msa<M: MeasureSource>(
    space: &SearchSpace,
    source: &mut M,
    budget: &SearchBudget,
    mode: SearchMode,
    candidates: Option<Vec<Architecture>>,
) -> Result<SearchReport> {
    budget.validate(space)?;
    let archs = match candidates {
        Some(a) => a,
        None => sample_candidates(space, budget.subset_size, budget.seed),
    };
    if archs.len() < budget.quota && mode == SearchMode::Predictors {
        return Err(CoreError::InsufficientData(format!(
            "{} candidates cannot serve a quota of {}",
            archs.len(),
            budget.quota
        )));
    }
    if archs.is_empty() {
        return Err(CoreError::InsufficientData("no candidates to search".into()));
    }
    let num_tasks = space.num_tasks();
    let mut table = PerfTable::new(space, archs)?;
    let mut iterations = Vec::new();

    match mode {
        SearchMode::Oracle => {
            let mut sampled = Vec::with_capacity(table.len());
            for row in 0..table.len() {
                let scores = source.measure(&table.archs[row])?;
                table.set_measured(row, &scores)?;
                sampled.push(table.encodings[row].clone());
            }
            iterations.push(IterationLog {
                iteration: 1,
                sampled,
                kd: vec![None; num_tasks],
                ready: vec![true; num_tasks],
            });
        }
        SearchMode::Predictors => {
            let mut rng = ChaCha20Rng::seed_from_u64(budget.seed);
            let mut measured: Vec<usize> = Vec::new();
            let mut unmeasured: Vec<usize> = (0..table.len()).collect();
            let mut predictors: Vec<Option<RankPredictor>> = vec![None; num_tasks];
            for n in 1..=budget.max_iterations {
                // Spend this iteration's ground-truth quota on fresh rows.
                let take = budget.quota.min(unmeasured.len());
                let mut sampled = Vec::with_capacity(take);
                for _ in 0..take {
                    let pick = rng.gen_range(0..unmeasured.len());
                    let row = unmeasured.swap_remove(pick);
                    let scores = source.measure(&table.archs[row])?;
                    table.set_measured(row, &scores)?;
                    measured.push(row);
                    sampled.push(table.encodings[row].clone());
                }

                // Fit on the non-holdout measured rows, judge on the rest.
                let (train_rows, hold_rows): (Vec<usize>, Vec<usize>) = measured
                    .iter()
                    .copied()
                    .partition(|&r| !is_holdout(&table.encodings[r]));
                let mut kd = Vec::with_capacity(num_tasks);
                let mut ready = Vec::with_capacity(num_tasks);
                for t in 0..num_tasks {
                    let fitted = fit_task(space, &table, t, &train_rows);
                    let verdict = match (&fitted, hold_rows.len()) {
                        (Ok(p), n) if n >= 2 => {
                            let holdout: Vec<Architecture> =
                                hold_rows.iter().map(|&r| table.archs[r].clone()).collect();
                            let truth: Vec<f64> = hold_rows
                                .iter()
                                .map(|&r| table.cells[r][t].expect("measured").score)
                                .collect();
                            p.readiness(space, &holdout, &truth, budget.thresholds[t]).ok()
                        }
                        _ => None,
                    };
                    kd.push(verdict.map(|v| v.kd));
                    ready.push(
                        budget.thresholds[t] <= -1.0 || verdict.is_some_and(|v| v.ready),
                    );
                    if let Ok(p) = fitted {
                        predictors[t] = Some(p);
                    }
                }
                iterations.push(IterationLog {
                    iteration: n,
                    sampled,
                    kd,
                    ready: ready.clone(),
                });
                if ready.iter().all(|&r| r) || unmeasured.is_empty() {
                    break;
                }
            }

            // Fill the holes with predictions.
            for row in 0..table.len() {
                for t in 0..num_tasks {
                    if table.cells[row][t].is_some() {
                        continue;
                    }
                    let p = predictors[t].as_ref().ok_or_else(|| {
                        CoreError::InsufficientData(format!(
                            "no usable predictor for task {t}; cannot fill unmeasured candidates"
                        ))
                    })?;
                    let score = p.predict(space, &table.archs[row])?;
                    table.set_predicted(row, t, score)?;
                }
            }
        }
    }

    let feasible = filter_constraints(table.archs(), space, budget)?;
    let choice = select_best(&table, space, budget, &feasible)?;
    let (measured_cells, predicted_cells) = table.provenance_counts();
    let (resolved_flops, resolved_params) = budget.resolve(space)?;
    Ok(SearchReport {
        mode,
        budget: budget.clone(),
        resolved_flops,
        resolved_params,
        candidates: table.len(),
        iterations,
        choice,
        measured_cells,
        predicted_cells,
    })
}

fn fit_task(
    space: &SearchSpace,
    table: &PerfTable,
    task: usize,
    train_rows: &[usize],
) -> Result<RankPredictor> {
    let archs: Vec<Architecture> = train_rows.iter().map(|&r| table.archs[r].clone()).collect();
    let scores: Vec<f64> = train_rows
        .iter()
        .map(|&r| table.cells[r][task].expect("measured row").score)
        .collect();
    predictor::fit(
        space,
        task,
        &archs,
        &scores,
        predictor::DEFAULT_ALPHA2,
        predictor::DEFAULT_SIGMA2,
    )
}
