//! Train-once, deploy-many vision backbones.
//!
//! This crate trains a single elastic multi-task transformer supernet whose
//! layers expose head-count, FFN-width, layer-drop, and per-task FFN routing
//! knobs, then searches that space with learned rank predictors and extracts
//! trimmed deployable sub-networks without retraining.
//!
//! Module map:
//! - [`tensor`]: small dense-tensor autograd engine with numeric checking.
//! - [`arch`]: the search space, architecture encoding, and cost accounting.
//! - [`objectives`]: task losses, retrieval metrics, and rank statistics.
//! - [`taskgen`]: synthetic multi-task dataset families with tunable overlap.
//! - [`supernet`]: the elastic backbone, gating, and sub-network extraction.
//! - [`trainer`]: heterogeneous-batch supernet training.
//! - [`eval`]: sub-network evaluation harnesses.
//! - [`predictor`]: per-task quality predictors over architecture features.
//! - [`search`]: constrained multi-task search over predicted rank tables.
//! - [`bench_table`]: benchmark tables, import/export, and correlation reports.
//! - [`pipeline`]: end-to-end orchestration shared by the CLI and tests.

pub mod arch;
pub mod bench_table;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod pipeline;
pub mod predictor;
pub mod search;
pub mod supernet;
pub mod taskgen;
pub mod tensor;
pub mod trainer;
mod util;

pub use arch::{Architecture, CostMode, CostReport, GateChoice, LayerChoice, SearchSpace, Violation};
pub use bench_table::{BenchRow, BenchTable, ColumnMeta};
pub use error::{CoreError, Result};
pub use pipeline::{RunConfig, RunManifest};
pub use predictor::RankPredictor;
pub use search::{PerfTable, SearchBudget, SearchMode, SearchReport};
pub use supernet::{GatePolicy, GateState, SupernetConfig, SupernetParams, TrimmedModel};
pub use tensor::{Tape, Tensor, Var};
pub use trainer::{TrainConfig, TrainState};

pub use util::fnv1a64;
