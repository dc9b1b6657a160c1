//! Sub-network evaluation: embeds a task's query and gallery splits through
//! an architecture-gated forward pass and reports retrieval quality.
//!
//! Scores drive the benchmark tables, the predictor training sets, and the
//! rank search, so evaluation is deterministic: gates follow the
//! architecture's own per-task symbols ([`GatePolicy::FromArch`]) rather
//! than sampled mixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::arch::Architecture;
use crate::error::{CoreError, Result};
use crate::objectives::{retrieval_metrics, RetrievalMetrics};
use crate::supernet::{run_embeddings, GatePolicy, GateState, SupernetConfig, SupernetParams, TrimmedModel};
use crate::taskgen::{SplitTag, TaskSuite};
use crate::tensor::Tensor;
use crate::trainer::check_suite;

/// Images embedded per forward pass. Each row of the output is independent
/// of its batch-mates, so chunking only bounds tape memory.
pub const DEFAULT_EVAL_BATCH: usize = 16;

/// Scores architectures against a trained supernet on a task suite.
pub struct SubnetEvaluator<'a> {
    cfg: &'a SupernetConfig,
    params: &'a SupernetParams,
    gates: &'a GateState,
    suite: &'a TaskSuite,
    batch: usize,
}

impl<'a> SubnetEvaluator<'a> {
    pub fn new(
        cfg: &'a SupernetConfig,
        params: &'a SupernetParams,
        gates: &'a GateState,
        suite: &'a TaskSuite,
    ) -> Result<Self> {
        check_suite(cfg, suite)?;
        Ok(SubnetEvaluator {
            cfg,
            params,
            gates,
            suite,
            batch: DEFAULT_EVAL_BATCH,
        })
    }

    pub fn with_batch(mut self, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(CoreError::Config("evaluation batch must be positive".into()));
        }
        self.batch = batch;
        Ok(self)
    }

    /// Embeds one split of one task under `arch`, chunked by the batch
    /// size. Returns the embedding rows and their labels in split order.
    pub fn embed_split(
        &self,
        arch: &Architecture,
        task: usize,
        tag: SplitTag,
    ) -> Result<(Tensor, Vec<usize>)> {
        let data = self.suite.tasks.get(task).ok_or_else(|| {
            CoreError::Config(format!("task {task} out of {}", self.suite.tasks.len()))
        })?;
        let indices = data.indices_for(tag);
        if indices.is_empty() {
            return Err(CoreError::InsufficientData(format!(
                "task {task} has an empty {tag:?} split"
            )));
        }
        // FromArch never samples; the rng is a fixed placeholder.
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut chunks: Vec<Tensor> = Vec::new();
        for chunk in indices.chunks(self.batch) {
            let images = data.input_rows(chunk);
            let emb = run_embeddings(
                self.cfg,
                self.params,
                self.gates,
                arch,
                task,
                &images,
                GatePolicy::FromArch,
                &mut rng,
            )?;
            chunks.push(emb);
        }
        Ok((concat_row_chunks(&chunks)?, data.labels_for(&indices)))
    }

    /// Retrieval quality of `arch` on `task`: query split against gallery
    /// split.
    pub fn score(&self, arch: &Architecture, task: usize) -> Result<RetrievalMetrics> {
        let (q, ql) = self.embed_split(arch, task, SplitTag::Query)?;
        let (g, gl) = self.embed_split(arch, task, SplitTag::Gallery)?;
        retrieval_metrics(&q, &ql, &g, &gl, false)
    }

    /// Retrieval quality on every task, in task order.
    pub fn score_all(&self, arch: &Architecture) -> Result<Vec<RetrievalMetrics>> {
        (0..self.suite.tasks.len())
            .map(|t| self.score(arch, t))
            .collect()
    }
}

/// Scores an extracted standalone model on its own target tasks using the
/// same splits and metrics as the supernet evaluator.
pub fn score_trimmed(
    model: &TrimmedModel,
    suite: &TaskSuite,
    task: usize,
    batch: usize,
) -> Result<RetrievalMetrics> {
    if batch == 0 {
        return Err(CoreError::Config("evaluation batch must be positive".into()));
    }
    let data = suite.tasks.get(task).ok_or_else(|| {
        CoreError::Config(format!("task {task} out of {}", suite.tasks.len()))
    })?;
    let embed = |tag: SplitTag| -> Result<(Tensor, Vec<usize>)> {
        let indices = data.indices_for(tag);
        if indices.is_empty() {
            return Err(CoreError::InsufficientData(format!(
                "task {task} has an empty {tag:?} split"
            )));
        }
        let mut chunks = Vec::new();
        for chunk in indices.chunks(batch) {
            chunks.push(model.forward(&data.input_rows(chunk), task)?);
        }
        Ok((concat_row_chunks(&chunks)?, data.labels_for(&indices)))
    };
    let (q, ql) = embed(SplitTag::Query)?;
    let (g, gl) = embed(SplitTag::Gallery)?;
    retrieval_metrics(&q, &ql, &g, &gl, false)
}

fn concat_row_chunks(chunks: &[Tensor]) -> Result<Tensor> {
    let cols = chunks[0].cols();
    let rows: usize = chunks.iter().map(Tensor::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for c in chunks {
        if c.cols() != cols {
            return Err(CoreError::Shape {
                op: "concat_row_chunks",
                detail: format!("{} vs {cols} columns", c.cols()),
            });
        }
        data.extend_from_slice(c.data());
    }
    Tensor::new(vec![rows, cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{GateChoice, SearchSpace};
    use crate::taskgen::{self, SplitFractions, TaskSpec, TaskSuiteSpec};
    use crate::trainer::{train, TrainConfig};
    use std::collections::BTreeSet;

    fn fixture() -> (SupernetConfig, TaskSuite) {
        let space = SearchSpace::new(
            vec![2, 4],
            vec![1.0, 2.0],
            2,
            2,
            8,
            2,
            5,
            &[],
            Some(16),
        )
        .unwrap();
        let cfg = SupernetConfig::new(space, 8, 4, 6, vec![3, 3]).unwrap();
        let spec = TaskSpec {
            identities: 3,
            samples_per_identity: 8,
            image_size: 8,
            split: SplitFractions::default(),
            jitter: 2,
            noise: 30,
            id_strength: 96,
        };
        let suite = taskgen::generate(&TaskSuiteSpec::uniform(vec![spec; 2], 0.5, 61)).unwrap();
        (cfg, suite)
    }

    fn trained(cfg: &SupernetConfig, suite: &TaskSuite) -> (SupernetParams, GateState) {
        let tcfg = TrainConfig::new(6, 30, 0.05, 5, 29);
        let mut log = Vec::new();
        let (params, gates, _) = train(cfg, &tcfg, suite, &mut log).unwrap();
        (params, gates)
    }

    #[test]
    fn chunked_embedding_matches_one_shot_bitwise() {
        let (cfg, suite) = fixture();
        let (params, gates) = trained(&cfg, &suite);
        let arch = cfg.space.max_arch(GateChoice::Both);
        let small = SubnetEvaluator::new(&cfg, &params, &gates, &suite)
            .unwrap()
            .with_batch(2)
            .unwrap();
        let big = SubnetEvaluator::new(&cfg, &params, &gates, &suite)
            .unwrap()
            .with_batch(64)
            .unwrap();
        let (ea, la) = small.embed_split(&arch, 0, SplitTag::Query).unwrap();
        let (eb, lb) = big.embed_split(&arch, 0, SplitTag::Query).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ea.shape(), eb.shape());
        assert_eq!(ea.data(), eb.data());
    }

    #[test]
    fn scores_are_deterministic_and_in_range() {
        let (cfg, suite) = fixture();
        let (params, gates) = trained(&cfg, &suite);
        let ev = SubnetEvaluator::new(&cfg, &params, &gates, &suite).unwrap();
        let arch = cfg.space.max_arch(GateChoice::SharedOnly);
        let a = ev.score_all(&arch).unwrap();
        let b = ev.score_all(&arch).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean_ap.to_bits(), y.mean_ap.to_bits());
            assert!((0.0..=1.0).contains(&x.mean_ap));
            assert!((0.0..=1.0).contains(&x.rank1));
            assert_eq!(x.num_queries, suite.tasks[0].indices_for(SplitTag::Query).len());
        }
    }

    #[test]
    fn different_gate_symbols_produce_different_scores() {
        let (cfg, suite) = fixture();
        let (params, gates) = trained(&cfg, &suite);
        let ev = SubnetEvaluator::new(&cfg, &params, &gates, &suite).unwrap();
        let shared = cfg.space.max_arch(GateChoice::SharedOnly);
        let private = cfg.space.max_arch(GateChoice::PrivateOnly);
        let (es, _) = ev.embed_split(&shared, 0, SplitTag::Query).unwrap();
        let (ep, _) = ev.embed_split(&private, 0, SplitTag::Query).unwrap();
        assert_ne!(es.data(), ep.data(), "gate routing must reach the output");
    }

    #[test]
    fn trimmed_model_scores_match_the_supernet_evaluator() {
        let (cfg, suite) = fixture();
        let (params, gates) = trained(&cfg, &suite);
        let ev = SubnetEvaluator::new(&cfg, &params, &gates, &suite).unwrap();
        let arch = cfg.space.max_arch(GateChoice::SharedOnly);
        let targets: BTreeSet<usize> = [1usize].into_iter().collect();
        let model = crate::supernet::extract_subnet(
            &cfg,
            &params,
            &gates,
            &arch,
            &targets,
            crate::supernet::DEFAULT_BOTH_DELTA,
        )
        .unwrap();
        // Extraction freezes each target task's gates to decisions made
        // from the learned logits; mirror them for the supernet side.
        let mut decided = arch.clone();
        for (l, per_task) in model.manifest.decisions.iter().enumerate() {
            for &(t, d) in per_task {
                decided.layers[l].gates[t] = d;
            }
        }
        let direct = ev.score(&decided, 1).unwrap();
        let trimmed = score_trimmed(&model, &suite, 1, DEFAULT_EVAL_BATCH).unwrap();
        assert!(
            (direct.mean_ap - trimmed.mean_ap).abs() < 1e-9,
            "supernet {} vs trimmed {}",
            direct.mean_ap,
            trimmed.mean_ap
        );
        assert_eq!(direct.num_queries, trimmed.num_queries);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let (cfg, suite) = fixture();
        let (params, gates) = trained(&cfg, &suite);
        let ev = SubnetEvaluator::new(&cfg, &params, &gates, &suite).unwrap();
        let arch = cfg.space.max_arch(GateChoice::Both);
        assert!(ev.score(&arch, 5).is_err());
    }
}
