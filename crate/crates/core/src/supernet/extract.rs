//! Turning a trained supernet into standalone trimmed deployments.
//!
//! Extraction discretizes each learned gate for the requested tasks, keeps
//! only the weight prefixes the architecture actually uses, and drops every
//! other task's private paths and heads. No retraining happens here; the
//! trimmed forward must reproduce the hard-gated supernet bit for bit up to
//! float noise.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{cost, ensure_valid, Architecture, CostMode, CostReport, GateChoice};
use crate::error::{CoreError, Result};
use crate::tensor::{io as tio, Tape, Tensor};

use super::forward::{BlockSpec, FfnPath, PathCoeff, StagedFfn, StemVars, TokenGeometry};
use super::{
    gate_coefficients, gate_decision, patchify, Ffn, GateState, HeadParams, SupernetConfig,
    SupernetParams,
};

/// Which weights one retained FFN path came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Shared,
    Private(usize),
}

/// One kept block of a trimmed model, stored at its active width.
#[derive(Debug, Clone)]
pub struct TrimmedLayer {
    pub heads: usize,
    pub hidden: usize,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub paths: Vec<(PathKind, Ffn)>,
}

/// Shape metadata for one kept layer, embedded in the manifest so a file can
/// be decoded without re-deriving extraction logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub heads: usize,
    pub hidden: usize,
    pub paths: Vec<PathKind>,
}

/// Everything about a trimmed model except the tensor payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrimmedManifest {
    /// Encoding of the architecture the model was extracted at.
    pub arch: String,
    /// Target tasks, ascending. Only these have heads in the file.
    pub tasks: Vec<usize>,
    /// Per layer, the discretized gate per target task (kept layers only;
    /// dropped layers carry an empty list).
    pub decisions: Vec<Vec<(usize, GateChoice)>>,
    /// Inference cost of this deployment: gate symbols overridden by the
    /// decisions, accounted over the target tasks (shared paths once).
    pub cost: CostReport,
    pub config: SupernetConfig,
    /// One entry per supernet layer; `None` marks a dropped layer.
    pub layers: Vec<Option<LayerMeta>>,
}

/// A standalone deployment: stem, kept blocks at active width, and the
/// target tasks' heads.
#[derive(Debug, Clone)]
pub struct TrimmedModel {
    pub manifest: TrimmedManifest,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub cls: Tensor,
    pub pos: Tensor,
    pub final_g: Tensor,
    pub final_b: Tensor,
    pub layers: Vec<Option<TrimmedLayer>>,
    /// `(task, head)` pairs aligned with `manifest.tasks`.
    pub heads: Vec<(usize, HeadParams)>,
}

fn take_cols(t: &Tensor, w: usize) -> Tensor {
    if t.cols() == w {
        return t.clone();
    }
    let mut data = Vec::with_capacity(t.rows() * w);
    for i in 0..t.rows() {
        data.extend_from_slice(&t.row(i)[..w]);
    }
    Tensor::new(vec![t.rows(), w], data).expect("prefix shape")
}

fn take_rows(t: &Tensor, r: usize) -> Tensor {
    if t.rows() == r {
        return t.clone();
    }
    let data = t.data()[..r * t.cols()].to_vec();
    Tensor::new(vec![r, t.cols()], data).expect("prefix shape")
}

fn trim_ffn(f: &Ffn, hidden: usize) -> Ffn {
    Ffn {
        w1: take_cols(&f.w1, hidden),
        b1: take_cols(&f.b1, hidden),
        w2: take_rows(&f.w2, hidden),
        b2: f.b2.clone(),
    }
}

/// Extracts a standalone model for `tasks` at `arch`, discretizing each
/// learned gate with threshold `delta` (probability gaps below it keep both
/// paths). Weights are copied, never retrained.
pub fn extract_subnet(
    cfg: &SupernetConfig,
    params: &SupernetParams,
    gates: &GateState,
    arch: &Architecture,
    tasks: &BTreeSet<usize>,
    delta: f64,
) -> Result<TrimmedModel> {
    ensure_valid(arch, &cfg.space)?;
    if tasks.is_empty() {
        return Err(CoreError::Config("extraction needs at least one task".into()));
    }
    if let Some(&bad) = tasks.iter().find(|&&t| t >= cfg.space.num_tasks()) {
        return Err(CoreError::Config(format!(
            "task {bad} out of {} tasks",
            cfg.space.num_tasks()
        )));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(CoreError::Config(format!(
            "both-path threshold must be non-negative and finite, got {delta}"
        )));
    }
    if gates.num_layers() != cfg.space.num_layers() || gates.num_tasks() != cfg.space.num_tasks() {
        return Err(CoreError::Config(format!(
            "gate state is {}x{}, space wants {}x{}",
            gates.num_layers(),
            gates.num_tasks(),
            cfg.space.num_layers(),
            cfg.space.num_tasks()
        )));
    }

    let mut decided = arch.clone();
    let mut decisions: Vec<Vec<(usize, GateChoice)>> = Vec::with_capacity(arch.layers.len());
    for (l, choice) in arch.layers.iter().enumerate() {
        if !choice.keep {
            decisions.push(Vec::new());
            continue;
        }
        let per_task: Vec<(usize, GateChoice)> = tasks
            .iter()
            .map(|&t| (t, gate_decision(gates.logits(l, t), delta)))
            .collect();
        for &(t, d) in &per_task {
            decided.layers[l].gates[t] = d;
        }
        decisions.push(per_task);
    }
    let cost = cost(&decided, &cfg.space, &CostMode::Trimmed(tasks.clone()))?;

    let dh = cfg.space.head_dim();
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut layer_meta = Vec::with_capacity(arch.layers.len());
    for (l, choice) in arch.layers.iter().enumerate() {
        if !choice.keep {
            layers.push(None);
            layer_meta.push(None);
            continue;
        }
        let w = choice.heads * dh;
        let hidden = cfg.space.hidden_dim(choice.mlp_ratio);
        let lp = &params.layers[l];
        let mut paths = Vec::new();
        if decisions[l].iter().any(|&(_, d)| d.uses_shared()) {
            paths.push((PathKind::Shared, trim_ffn(&lp.shared, hidden)));
        }
        for &(t, d) in &decisions[l] {
            if d.uses_private() {
                paths.push((PathKind::Private(t), trim_ffn(&lp.private[t], hidden)));
            }
        }
        layer_meta.push(Some(LayerMeta {
            heads: choice.heads,
            hidden,
            paths: paths.iter().map(|(k, _)| *k).collect(),
        }));
        layers.push(Some(TrimmedLayer {
            heads: choice.heads,
            hidden,
            wq: take_cols(&lp.wq, w),
            bq: take_cols(&lp.bq, w),
            wk: take_cols(&lp.wk, w),
            bk: take_cols(&lp.bk, w),
            wv: take_cols(&lp.wv, w),
            bv: take_cols(&lp.bv, w),
            wo: take_rows(&lp.wo, w),
            bo: lp.bo.clone(),
            ln1_g: lp.ln1_g.clone(),
            ln1_b: lp.ln1_b.clone(),
            ln2_g: lp.ln2_g.clone(),
            ln2_b: lp.ln2_b.clone(),
            paths,
        }));
    }

    let heads = tasks.iter().map(|&t| (t, params.heads[t].clone())).collect();
    Ok(TrimmedModel {
        manifest: TrimmedManifest {
            arch: arch.encode(),
            tasks: tasks.iter().copied().collect(),
            decisions,
            cost,
            config: cfg.clone(),
            layers: layer_meta,
        },
        patch_w: params.patch_w.clone(),
        patch_b: params.patch_b.clone(),
        cls: params.cls.clone(),
        pos: params.pos.clone(),
        final_g: params.final_g.clone(),
        final_b: params.final_b.clone(),
        layers,
        heads,
    })
}

impl TrimmedModel {
    /// Embeddings `[batch, feature_dim]` of `images` for `task`, which must
    /// be one of the extraction targets.
    pub fn forward(&self, images: &Tensor, task: usize) -> Result<Tensor> {
        let head_slot = self
            .heads
            .iter()
            .position(|&(t, _)| t == task)
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "task {task} is not in this model (tasks {:?})",
                    self.manifest.tasks
                ))
            })?;
        let cfg = &self.manifest.config;
        let patch_rows = patchify(cfg, images)?;

        let mut tape = Tape::new();
        let mut c = |t: &Tensor| tape.constant(t.clone());
        let stem = StemVars {
            patch_w: c(&self.patch_w),
            patch_b: c(&self.patch_b),
            cls: c(&self.cls),
            pos: c(&self.pos),
            final_g: c(&self.final_g),
            final_b: c(&self.final_b),
        };
        let mut blocks = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let Some(layer) = layer else { continue };
            let decision = self.manifest.decisions[l]
                .iter()
                .find(|&&(t, _)| t == task)
                .map(|&(_, d)| d)
                .ok_or_else(|| {
                    CoreError::Format(format!("layer {l} has no gate decision for task {task}"))
                })?;
            let [p_shared, p_private] = gate_coefficients(decision);
            let mut paths = Vec::new();
            for (kind, f) in &layer.paths {
                let coeff = match kind {
                    PathKind::Shared => p_shared,
                    PathKind::Private(t) if *t == task => p_private,
                    PathKind::Private(_) => 0.0,
                };
                if coeff == 0.0 {
                    continue;
                }
                paths.push(FfnPath {
                    vars: StagedFfn {
                        w1: tape.constant(f.w1.clone()),
                        b1: tape.constant(f.b1.clone()),
                        w2: tape.constant(f.w2.clone()),
                        b2: tape.constant(f.b2.clone()),
                    },
                    coeff: PathCoeff::Fixed(coeff),
                });
            }
            let vars = super::forward::BlockVars {
                wq: tape.constant(layer.wq.clone()),
                bq: tape.constant(layer.bq.clone()),
                wk: tape.constant(layer.wk.clone()),
                bk: tape.constant(layer.bk.clone()),
                wv: tape.constant(layer.wv.clone()),
                bv: tape.constant(layer.bv.clone()),
                wo: tape.constant(layer.wo.clone()),
                bo: tape.constant(layer.bo.clone()),
                ln1_g: tape.constant(layer.ln1_g.clone()),
                ln1_b: tape.constant(layer.ln1_b.clone()),
                ln2_g: tape.constant(layer.ln2_g.clone()),
                ln2_b: tape.constant(layer.ln2_b.clone()),
            };
            blocks.push(BlockSpec {
                vars,
                heads: layer.heads,
                hidden: layer.hidden,
                paths,
            });
        }
        let geom = TokenGeometry {
            patches: cfg.patches_per_image(),
            tokens: cfg.space.tokens(),
            head_dim: cfg.space.head_dim(),
            ln_eps: cfg.ln_eps,
        };
        let tokens = super::forward::assemble_tokens(&mut tape, &stem, &blocks, &geom, &patch_rows)?;
        let n = cfg.space.tokens();
        let batch = tape.value(tokens).rows() / n;
        let cls_rows: Vec<usize> = (0..batch).map(|i| i * n).collect();
        let cls = tape.lookup(tokens, &cls_rows)?;
        let (_, head) = &self.heads[head_slot];
        let hw = tape.constant(head.w.clone());
        let hb = tape.constant(head.b.clone());
        let emb = tape.matmul(cls, hw, false, false)?;
        let emb = tape.add_bias(emb, hb)?;
        Ok(tape.value(emb).clone())
    }

    /// Task's classifier weights (class centers), for scoring losses on a
    /// deployed model.
    pub fn classifier(&self, task: usize) -> Option<&Tensor> {
        self.heads
            .iter()
            .find(|&&(t, _)| t == task)
            .map(|(_, h)| &h.classifier)
    }

    /// Total stored scalar count, heads included.
    pub fn num_params(&self) -> u64 {
        let mut n = (self.patch_w.len()
            + self.patch_b.len()
            + self.cls.len()
            + self.pos.len()
            + self.final_g.len()
            + self.final_b.len()) as u64;
        for layer in self.layers.iter().flatten() {
            n += (layer.wq.len()
                + layer.bq.len()
                + layer.wk.len()
                + layer.bk.len()
                + layer.wv.len()
                + layer.bv.len()
                + layer.wo.len()
                + layer.bo.len()
                + layer.ln1_g.len()
                + layer.ln1_b.len()
                + layer.ln2_g.len()
                + layer.ln2_b.len()) as u64;
            for (_, f) in &layer.paths {
                n += f.numel();
            }
        }
        for (_, h) in &self.heads {
            n += h.numel();
        }
        n
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("stem.patch_w".into(), &self.patch_w),
            ("stem.patch_b".into(), &self.patch_b),
            ("stem.cls".into(), &self.cls),
            ("stem.pos".into(), &self.pos),
            ("final.g".into(), &self.final_g),
            ("final.b".into(), &self.final_b),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            let Some(layer) = layer else { continue };
            let base = format!("layer{l}");
            out.push((format!("{base}.wq"), &layer.wq));
            out.push((format!("{base}.bq"), &layer.bq));
            out.push((format!("{base}.wk"), &layer.wk));
            out.push((format!("{base}.bk"), &layer.bk));
            out.push((format!("{base}.wv"), &layer.wv));
            out.push((format!("{base}.bv"), &layer.bv));
            out.push((format!("{base}.wo"), &layer.wo));
            out.push((format!("{base}.bo"), &layer.bo));
            out.push((format!("{base}.ln1.g"), &layer.ln1_g));
            out.push((format!("{base}.ln1.b"), &layer.ln1_b));
            out.push((format!("{base}.ln2.g"), &layer.ln2_g));
            out.push((format!("{base}.ln2.b"), &layer.ln2_b));
            for (j, (_, f)) in layer.paths.iter().enumerate() {
                out.push((format!("{base}.path{j}.w1"), &f.w1));
                out.push((format!("{base}.path{j}.b1"), &f.b1));
                out.push((format!("{base}.path{j}.w2"), &f.w2));
                out.push((format!("{base}.path{j}.b2"), &f.b2));
            }
        }
        for (t, h) in &self.heads {
            out.push((format!("head{t}.w"), &h.w));
            out.push((format!("head{t}.b"), &h.b));
            out.push((format!("head{t}.classifier"), &h.classifier));
        }
        out
    }

    /// Writes manifest plus tensor payloads as one archive.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        tio::write_archive(&mut w, &self.manifest, &self.named_tensors())
    }

    /// Reads a model written by [`TrimmedModel::save`]. Values come back at
    /// `f32` precision.
    pub fn load(path: &Path) -> Result<TrimmedModel> {
        let mut r = BufReader::new(File::open(path)?);
        let (manifest, tensors): (TrimmedManifest, Vec<(String, Tensor)>) =
            tio::read_archive(&mut r)?;
        manifest.config.validate()?;
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut grab = |name: String| {
            by_name
                .remove(&name)
                .ok_or_else(|| CoreError::Format(format!("model file is missing tensor {name}")))
        };
        let patch_w = grab("stem.patch_w".into())?;
        let patch_b = grab("stem.patch_b".into())?;
        let cls = grab("stem.cls".into())?;
        let pos = grab("stem.pos".into())?;
        let final_g = grab("final.g".into())?;
        let final_b = grab("final.b".into())?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (l, meta) in manifest.layers.iter().enumerate() {
            let Some(meta) = meta else {
                layers.push(None);
                continue;
            };
            let base = format!("layer{l}");
            let mut paths = Vec::with_capacity(meta.paths.len());
            for (j, kind) in meta.paths.iter().enumerate() {
                paths.push((
                    *kind,
                    Ffn {
                        w1: grab(format!("{base}.path{j}.w1"))?,
                        b1: grab(format!("{base}.path{j}.b1"))?,
                        w2: grab(format!("{base}.path{j}.w2"))?,
                        b2: grab(format!("{base}.path{j}.b2"))?,
                    },
                ));
            }
            layers.push(Some(TrimmedLayer {
                heads: meta.heads,
                hidden: meta.hidden,
                wq: grab(format!("{base}.wq"))?,
                bq: grab(format!("{base}.bq"))?,
                wk: grab(format!("{base}.wk"))?,
                bk: grab(format!("{base}.bk"))?,
                wv: grab(format!("{base}.wv"))?,
                bv: grab(format!("{base}.bv"))?,
                wo: grab(format!("{base}.wo"))?,
                bo: grab(format!("{base}.bo"))?,
                ln1_g: grab(format!("{base}.ln1.g"))?,
                ln1_b: grab(format!("{base}.ln1.b"))?,
                ln2_g: grab(format!("{base}.ln2.g"))?,
                ln2_b: grab(format!("{base}.ln2.b"))?,
                paths,
            }));
        }
        let mut heads = Vec::with_capacity(manifest.tasks.len());
        for &t in &manifest.tasks {
            heads.push((
                t,
                HeadParams {
                    w: grab(format!("head{t}.w"))?,
                    b: grab(format!("head{t}.b"))?,
                    classifier: grab(format!("head{t}.classifier"))?,
                },
            ));
        }
        if !by_name.is_empty() {
            let mut extra: Vec<String> = by_name.into_keys().collect();
            extra.sort();
            return Err(CoreError::Format(format!(
                "model file has unexpected tensors: {}",
                extra.join(", ")
            )));
        }
        Ok(TrimmedModel {
            manifest,
            patch_w,
            patch_b,
            cls,
            pos,
            final_g,
            final_b,
            layers,
            heads,
        })
    }
}
