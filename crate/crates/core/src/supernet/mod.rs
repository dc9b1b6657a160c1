//! The elastic multi-task vision transformer and its trimmed deployments.
//!
//! One set of maximal weights hosts every sub-network in the search space:
//! narrower attention uses a contiguous prefix of the heads, thinner FFNs a
//! contiguous prefix of the hidden channels, and dropped layers fall back to
//! the residual identity. Each block owns one shared FFN plus one private FFN
//! per task; a learned two-way gate per (layer, task) mixes the two paths.
//!
//! Layout of the module:
//! - this file: configuration, the parameter store, gate logits, and the
//!   gumbel-softmax gate machinery;
//! - [`forward`]: tape-graph construction for training and evaluation;
//! - [`extract`]: discretizing gates and exporting a standalone trimmed model.

mod extract;
mod forward;
#[cfg(test)]
mod tests;

pub use extract::{extract_subnet, LayerMeta, PathKind, TrimmedLayer, TrimmedManifest, TrimmedModel};
pub use forward::{
    block_forward, forward_embeddings, forward_tokens, patchify, restage, run_embeddings, stage,
    BlockVars, FfnPath, GateCoeff, PathCoeff, StagedFfn, StagedHead, StagedLayer, StagedParams,
    StemVars,
};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, GateChoice, SearchSpace};
use crate::error::{CoreError, Result};
use crate::tensor::{io as tio, Tensor};

/// Gate-probability gap below which extraction keeps both FFN paths.
pub const DEFAULT_BOTH_DELTA: f64 = 0.2;
/// Epsilon under the square root in every layer normalization.
pub const DEFAULT_LN_EPS: f64 = 1e-5;

fn default_ln_eps() -> f64 {
    DEFAULT_LN_EPS
}

/// Static shape information for one supernet: the search space plus the
/// input geometry and the per-task output sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub space: SearchSpace,
    /// Square input images, `image_size` pixels on a side, one channel.
    pub image_size: usize,
    /// Square patches; must divide `image_size`.
    pub patch_size: usize,
    /// Output embedding width of every task head.
    pub feature_dim: usize,
    /// Number of identity classes per task (classifier rows).
    pub classes_per_task: Vec<usize>,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl SupernetConfig {
    pub fn new(
        space: SearchSpace,
        image_size: usize,
        patch_size: usize,
        feature_dim: usize,
        classes_per_task: Vec<usize>,
    ) -> Result<Self> {
        let cfg = SupernetConfig {
            space,
            image_size,
            patch_size,
            feature_dim,
            classes_per_task,
            ln_eps: DEFAULT_LN_EPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return bad("image_size and patch_size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            ));
        }
        let patches = self.patches_per_image();
        if patches + 1 != self.space.tokens() {
            return bad(format!(
                "{} patches plus the class token needs {} tokens, space declares {}",
                patches,
                patches + 1,
                self.space.tokens()
            ));
        }
        if self.patch_size * self.patch_size != self.space.patch_dim() {
            return bad(format!(
                "flattened patch has {} values, space declares patch_dim {}",
                self.patch_size * self.patch_size,
                self.space.patch_dim()
            ));
        }
        if self.feature_dim < 2 {
            return bad(format!(
                "feature_dim must be at least 2 for cosine losses, got {}",
                self.feature_dim
            ));
        }
        if self.classes_per_task.len() != self.space.num_tasks() {
            return bad(format!(
                "{} class counts for {} tasks",
                self.classes_per_task.len(),
                self.space.num_tasks()
            ));
        }
        if let Some(&c) = self.classes_per_task.iter().find(|&&c| c < 2) {
            return bad(format!("every task needs at least 2 classes, got {c}"));
        }
        if !self.ln_eps.is_finite() || self.ln_eps <= 0.0 {
            return bad(format!("ln_eps must be positive and finite, got {}", self.ln_eps));
        }
        Ok(())
    }

    /// Patches per side of the image grid.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patches_per_image(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Flattened pixels per image.
    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// One feed-forward path at maximal width. `b1` is stored as `[1, hidden]`
/// so its active prefix can be cut with a column slice; `b2` is plain `[D]`.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Ffn {
    fn init<R: Rng>(d: usize, hidden: usize, std: f64, rng: &mut R) -> Self {
        Ffn {
            w1: Tensor::randn(&[d, hidden], std, rng),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::randn(&[hidden, d], std, rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn numel(&self) -> u64 {
        (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()) as u64
    }
}

/// One transformer block's weights at maximal width.
///
/// Q/K/V projections are `[D, W]` with biases `[1, W]` (`W = max_heads *
/// head_dim`); head `i` lives in columns `i*head_dim..(i+1)*head_dim`, so a
/// sub-network with `h` heads uses the column prefix `0..h*head_dim`. The
/// output projection is `[W, D]` sliced by rows. FFNs slice hidden channels
/// the same way.
#[derive(Debug, Clone)]
pub struct LayerParams {
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
    pub shared: Ffn,
    pub private: Vec<Ffn>,
}

/// Per-task output head: an embedding projection and a classifier whose rows
/// act as class centers for the cosine-margin loss.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
    pub classifier: Tensor,
}

impl HeadParams {
    fn numel(&self) -> u64 {
        (self.w.len() + self.b.len() + self.classifier.len()) as u64
    }
}

/// Every learnable tensor of the supernet, always stored at maximal width.
#[derive(Debug, Clone)]
pub struct SupernetParams {
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub cls: Tensor,
    pub pos: Tensor,
    pub final_g: Tensor,
    pub final_b: Tensor,
    pub layers: Vec<LayerParams>,
    pub heads: Vec<HeadParams>,
}

const INIT_STD: f64 = 0.02;

impl SupernetParams {
    /// Fresh parameters: normal(0, 0.02) weights, zero biases, unit LN scales.
    /// The draw order is fixed, so one seed always yields the same model.
    pub fn init<R: Rng>(cfg: &SupernetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.space;
        let (d, w, hid) = (s.embed_dim(), s.max_heads() * s.head_dim(), s.max_hidden());
        let pd = s.patch_dim();
        let n = s.tokens();

        let patch_w = Tensor::randn(&[pd, d], INIT_STD, rng);
        let patch_b = Tensor::zeros(&[d]);
        let cls = Tensor::randn(&[1, d], INIT_STD, rng);
        let pos = Tensor::randn(&[n, d], INIT_STD, rng);

        let layers = (0..s.num_layers())
            .map(|_| LayerParams {
                wq: Tensor::randn(&[d, w], INIT_STD, rng),
                bq: Tensor::zeros(&[1, w]),
                wk: Tensor::randn(&[d, w], INIT_STD, rng),
                bk: Tensor::zeros(&[1, w]),
                wv: Tensor::randn(&[d, w], INIT_STD, rng),
                bv: Tensor::zeros(&[1, w]),
                wo: Tensor::randn(&[w, d], INIT_STD, rng),
                bo: Tensor::zeros(&[d]),
                ln1_g: Tensor::full(&[d], 1.0),
                ln1_b: Tensor::zeros(&[d]),
                ln2_g: Tensor::full(&[d], 1.0),
                ln2_b: Tensor::zeros(&[d]),
                shared: Ffn::init(d, hid, INIT_STD, rng),
                private: (0..s.num_tasks()).map(|_| Ffn::init(d, hid, INIT_STD, rng)).collect(),
            })
            .collect();

        let heads = cfg
            .classes_per_task
            .iter()
            .map(|&classes| HeadParams {
                w: Tensor::randn(&[d, cfg.feature_dim], INIT_STD, rng),
                b: Tensor::zeros(&[cfg.feature_dim]),
                classifier: Tensor::randn(&[classes, cfg.feature_dim], INIT_STD, rng),
            })
            .collect();

        Ok(SupernetParams {
            patch_w,
            patch_b,
            cls,
            pos,
            final_g: Tensor::full(&[d], 1.0),
            final_b: Tensor::zeros(&[d]),
            layers,
            heads,
        })
    }

    /// Visits every tensor with a stable slot name, in a fixed order shared
    /// by [`forward::stage`] and the optimizer.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        self.slot_refs().into_iter().for_each(|(n, t)| f(&n, t));
    }

    /// Mutable visit in the same order as [`SupernetParams::visit`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        let names: Vec<String> = self.slot_refs().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.into_iter().zip(self.slots_mut()) {
            f(&name, t);
        }
    }

    fn slot_refs(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("stem.patch_w".into(), &self.patch_w),
            ("stem.patch_b".into(), &self.patch_b),
            ("stem.cls".into(), &self.cls),
            ("stem.pos".into(), &self.pos),
            ("final.g".into(), &self.final_g),
            ("final.b".into(), &self.final_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let base = format!("layer{i}");
            out.push((format!("{base}.wq"), &l.wq));
            out.push((format!("{base}.bq"), &l.bq));
            out.push((format!("{base}.wk"), &l.wk));
            out.push((format!("{base}.bk"), &l.bk));
            out.push((format!("{base}.wv"), &l.wv));
            out.push((format!("{base}.bv"), &l.bv));
            out.push((format!("{base}.wo"), &l.wo));
            out.push((format!("{base}.bo"), &l.bo));
            out.push((format!("{base}.ln1.g"), &l.ln1_g));
            out.push((format!("{base}.ln1.b"), &l.ln1_b));
            out.push((format!("{base}.ln2.g"), &l.ln2_g));
            out.push((format!("{base}.ln2.b"), &l.ln2_b));
            for (label, ffn) in std::iter::once(("shared".to_string(), &l.shared))
                .chain(l.private.iter().enumerate().map(|(t, f)| (format!("task{t}"), f)))
            {
                out.push((format!("{base}.ffn.{label}.w1"), &ffn.w1));
                out.push((format!("{base}.ffn.{label}.b1"), &ffn.b1));
                out.push((format!("{base}.ffn.{label}.w2"), &ffn.w2));
                out.push((format!("{base}.ffn.{label}.b2"), &ffn.b2));
            }
        }
        for (t, h) in self.heads.iter().enumerate() {
            out.push((format!("head{t}.w"), &h.w));
            out.push((format!("head{t}.b"), &h.b));
            out.push((format!("head{t}.classifier"), &h.classifier));
        }
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.cls,
            &mut self.pos,
            &mut self.final_g,
            &mut self.final_b,
        ];
        for l in &mut self.layers {
            out.push(&mut l.wq);
            out.push(&mut l.bq);
            out.push(&mut l.wk);
            out.push(&mut l.bk);
            out.push(&mut l.wv);
            out.push(&mut l.bv);
            out.push(&mut l.wo);
            out.push(&mut l.bo);
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
            for ffn in std::iter::once(&mut l.shared).chain(l.private.iter_mut()) {
                out.push(&mut ffn.w1);
                out.push(&mut ffn.b1);
                out.push(&mut ffn.w2);
                out.push(&mut ffn.b2);
            }
        }
        for h in &mut self.heads {
            out.push(&mut h.w);
            out.push(&mut h.b);
            out.push(&mut h.classifier);
        }
        out
    }

    /// All-zero tensors of the right shapes, for loaders that overwrite
    /// every slot.
    fn skeleton(cfg: &SupernetConfig) -> Self {
        let s = &cfg.space;
        let (d, w, hid) = (s.embed_dim(), s.max_heads() * s.head_dim(), s.max_hidden());
        let zero_ffn = || Ffn {
            w1: Tensor::zeros(&[d, hid]),
            b1: Tensor::zeros(&[1, hid]),
            w2: Tensor::zeros(&[hid, d]),
            b2: Tensor::zeros(&[d]),
        };
        SupernetParams {
            patch_w: Tensor::zeros(&[s.patch_dim(), d]),
            patch_b: Tensor::zeros(&[d]),
            cls: Tensor::zeros(&[1, d]),
            pos: Tensor::zeros(&[s.tokens(), d]),
            final_g: Tensor::zeros(&[d]),
            final_b: Tensor::zeros(&[d]),
            layers: (0..s.num_layers())
                .map(|_| LayerParams {
                    wq: Tensor::zeros(&[d, w]),
                    bq: Tensor::zeros(&[1, w]),
                    wk: Tensor::zeros(&[d, w]),
                    bk: Tensor::zeros(&[1, w]),
                    wv: Tensor::zeros(&[d, w]),
                    bv: Tensor::zeros(&[1, w]),
                    wo: Tensor::zeros(&[w, d]),
                    bo: Tensor::zeros(&[d]),
                    ln1_g: Tensor::zeros(&[d]),
                    ln1_b: Tensor::zeros(&[d]),
                    ln2_g: Tensor::zeros(&[d]),
                    ln2_b: Tensor::zeros(&[d]),
                    shared: zero_ffn(),
                    private: (0..s.num_tasks()).map(|_| zero_ffn()).collect(),
                })
                .collect(),
            heads: cfg
                .classes_per_task
                .iter()
                .map(|&classes| HeadParams {
                    w: Tensor::zeros(&[d, cfg.feature_dim]),
                    b: Tensor::zeros(&[cfg.feature_dim]),
                    classifier: Tensor::zeros(&[classes, cfg.feature_dim]),
                })
                .collect(),
        }
    }

    /// Total stored scalar count.
    pub fn numel(&self) -> u64 {
        let mut n = 0u64;
        self.visit(|_, t| n += t.len() as u64);
        n
    }

    /// Stored scalars in task `t`'s private FFN paths across all layers.
    pub fn private_numel(&self, t: usize) -> u64 {
        self.layers.iter().map(|l| l.private[t].numel()).sum()
    }

    /// Stored scalars in task `t`'s head (projection, bias, classifier).
    pub fn head_numel(&self, t: usize) -> u64 {
        self.heads[t].numel()
    }
}

/// Whether a slot takes L2 weight decay: true for genuine weight matrices
/// (both dims at least 2), false for biases, norm scales, the class token,
/// and the position table.
pub fn weight_decay_eligible(name: &str, shape: &[usize]) -> bool {
    shape.len() == 2 && shape[0] >= 2 && shape[1] >= 2 && name != "stem.pos"
}

/// Learned gate logits, one `[shared, private]` pair per (layer, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    logits: Vec<Vec<[f64; 2]>>,
}

impl GateState {
    /// All-zero logits: an exact 50/50 mixture everywhere.
    pub fn new(num_layers: usize, num_tasks: usize) -> Self {
        GateState {
            logits: vec![vec![[0.0; 2]; num_tasks]; num_layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.logits.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }

    pub fn logits(&self, layer: usize, task: usize) -> [f64; 2] {
        self.logits[layer][task]
    }

    pub fn set_logits(&mut self, layer: usize, task: usize, v: [f64; 2]) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite {
                context: format!("gate logits for layer {layer}, task {task}"),
                step: None,
            });
        }
        self.logits[layer][task] = v;
        Ok(())
    }
}

/// How [`gumbel_gate_probs`] turns logits into mixture coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    /// Softmax of logits plus gumbel noise, sharpened by `1/tau`.
    Sample,
    /// Plain softmax of the logits; deterministic, ignores `tau`.
    Expectation,
    /// One-hot at the larger logit (ties go to the shared path).
    Hard,
}

fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let p0 = e0 / (e0 + e1);
    [p0, 1.0 - p0]
}

/// Mixture coefficients `[p_shared, p_private]` for one gate. The pair always
/// sums to one exactly; `Sample` draws two gumbel variates from `rng`.
pub fn gumbel_gate_probs<R: Rng>(
    logits: [f64; 2],
    tau: f64,
    rng: &mut R,
    mode: GateMode,
) -> Result<[f64; 2]> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite {
            context: format!("gate logits {logits:?}"),
            step: None,
        });
    }
    match mode {
        GateMode::Sample => {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(CoreError::Config(format!(
                    "gumbel sampling needs a positive temperature, got {tau}"
                )));
            }
            let mut draw = || {
                let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
                -(-u.ln()).ln()
            };
            let g = [draw(), draw()];
            Ok(softmax2([(logits[0] + g[0]) / tau, (logits[1] + g[1]) / tau]))
        }
        GateMode::Expectation => Ok(softmax2(logits)),
        GateMode::Hard => Ok(if logits[0] >= logits[1] { [1.0, 0.0] } else { [0.0, 1.0] }),
    }
}

/// Discretizes one gate: the argmax path, or both when the softmax
/// probabilities sit within `delta` of each other.
pub fn gate_decision(logits: [f64; 2], delta: f64) -> GateChoice {
    let p = softmax2(logits);
    if (p[0] - p[1]).abs() < delta {
        GateChoice::Both
    } else if p[0] >= p[1] {
        GateChoice::SharedOnly
    } else {
        GateChoice::PrivateOnly
    }
}

/// Fixed mixture coefficients realizing a discrete gate choice. Keeping both
/// paths splits the mixture evenly so the output scale matches training,
/// where the two coefficients always sum to one.
pub fn gate_coefficients(choice: GateChoice) -> [f64; 2] {
    match choice {
        GateChoice::SharedOnly => [1.0, 0.0],
        GateChoice::PrivateOnly => [0.0, 1.0],
        GateChoice::Both => [0.5, 0.5],
    }
}

/// Where a forward pass takes its per-layer gate coefficients from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GatePolicy {
    /// Learned logits with gumbel noise at temperature `tau`.
    Sample { tau: f64 },
    /// Learned logits, deterministic softmax mixture.
    Expectation,
    /// Learned logits discretized with the both-path threshold `delta`.
    Hard { delta: f64 },
    /// The architecture's own per-task gate symbols.
    FromArch,
}

/// Numeric gate coefficients for `task`, one pair per layer. Dropped layers
/// get a placeholder `[0, 0]` that the forward pass never reads.
pub fn resolve_gate_coeffs<R: Rng>(
    arch: &Architecture,
    task: usize,
    gates: &GateState,
    policy: GatePolicy,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>> {
    if gates.num_layers() != arch.layers.len() {
        return Err(CoreError::Config(format!(
            "gate state covers {} layers, architecture has {}",
            gates.num_layers(),
            arch.layers.len()
        )));
    }
    arch.layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if !layer.keep {
                return Ok([0.0, 0.0]);
            }
            match policy {
                GatePolicy::Sample { tau } => {
                    gumbel_gate_probs(gates.logits(l, task), tau, rng, GateMode::Sample)
                }
                GatePolicy::Expectation => {
                    gumbel_gate_probs(gates.logits(l, task), 0.0, rng, GateMode::Expectation)
                }
                GatePolicy::Hard { delta } => {
                    Ok(gate_coefficients(gate_decision(gates.logits(l, task), delta)))
                }
                GatePolicy::FromArch => Ok(gate_coefficients(layer.gates[task])),
            }
        })
        .collect()
}

/// Manifest of a saved supernet checkpoint: configuration and gate logits
/// ride along as JSON, tensors as binary records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: SupernetConfig,
    pub gates: GateState,
}

/// Writes config, gate logits, and every parameter tensor to one archive.
pub fn save_checkpoint(
    path: &Path,
    cfg: &SupernetConfig,
    params: &SupernetParams,
    gates: &GateState,
) -> Result<()> {
    let manifest = CheckpointManifest {
        config: cfg.clone(),
        gates: gates.clone(),
    };
    let named = params.slot_refs();
    let mut w = BufWriter::new(File::create(path)?);
    tio::write_archive(&mut w, &manifest, &named)
}

/// Reads an archive written by [`save_checkpoint`]. Tensor values come back
/// at `f32` precision.
pub fn load_checkpoint(path: &Path) -> Result<(SupernetConfig, SupernetParams, GateState)> {
    let mut r = BufReader::new(File::open(path)?);
    let (manifest, tensors): (CheckpointManifest, Vec<(String, Tensor)>) = tio::read_archive(&mut r)?;
    let cfg = manifest.config;
    cfg.validate()?;
    let mut params = SupernetParams::skeleton(&cfg);
    let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
    let mut missing = Vec::new();
    params.visit_mut(|name, slot| match by_name.remove(name) {
        Some(t) if t.shape() == slot.shape() => *slot = t,
        Some(t) => missing.push(format!("{name}: shape {:?} vs {:?}", t.shape(), slot.shape())),
        None => missing.push(format!("{name}: absent")),
    });
    if !missing.is_empty() {
        return Err(CoreError::Format(format!(
            "checkpoint does not match its configuration: {}",
            missing.join("; ")
        )));
    }
    if !by_name.is_empty() {
        let mut extra: Vec<String> = by_name.into_keys().collect();
        extra.sort();
        return Err(CoreError::Format(format!(
            "checkpoint has unexpected tensors: {}",
            extra.join(", ")
        )));
    }
    if manifest.gates.num_layers() != cfg.space.num_layers()
        || manifest.gates.num_tasks() != cfg.space.num_tasks()
    {
        return Err(CoreError::Format(format!(
            "gate state is {}x{}, space wants {}x{}",
            manifest.gates.num_layers(),
            manifest.gates.num_tasks(),
            cfg.space.num_layers(),
            cfg.space.num_tasks()
        )));
    }
    Ok((cfg, params, manifest.gates))
}
