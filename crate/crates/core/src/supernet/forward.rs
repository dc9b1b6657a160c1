//! Tape-graph construction for supernet forwards.
//!
//! Elasticity is realized with slice nodes on the maximal tensors: gradients
//! of a sub-network flow back into the prefix of each shared weight and leave
//! the rest untouched, which is exactly the weight entanglement the training
//! loop relies on. The same block builder also serves trimmed models, whose
//! stored tensors are already at the active width (the slices become
//! full-range and are skipped).

use rand::Rng;

use crate::arch::{ensure_valid, Architecture, LayerChoice, SearchSpace};
use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::{
    GatePolicy, GateState, SupernetConfig, SupernetParams,
};

/// Tape handles for one FFN path.
#[derive(Debug, Clone, Copy)]
pub struct StagedFfn {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for one block's attention and normalization tensors.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

/// Tape handles for one block plus its FFN paths.
#[derive(Debug, Clone)]
pub struct StagedLayer {
    pub block: BlockVars,
    pub shared: StagedFfn,
    pub private: Vec<StagedFfn>,
}

/// Tape handles for one task head.
#[derive(Debug, Clone, Copy)]
pub struct StagedHead {
    pub w: Var,
    pub b: Var,
    pub classifier: Var,
}

/// Tape handles for the stem and final normalization.
#[derive(Debug, Clone, Copy)]
pub struct StemVars {
    pub patch_w: Var,
    pub patch_b: Var,
    pub cls: Var,
    pub pos: Var,
    pub final_g: Var,
    pub final_b: Var,
}

/// Every parameter of the supernet, staged on one tape.
#[derive(Debug, Clone)]
pub struct StagedParams {
    pub stem: StemVars,
    pub layers: Vec<StagedLayer>,
    pub heads: Vec<StagedHead>,
}

impl StagedParams {
    /// Vars in the same order as [`SupernetParams::visit`], for optimizers
    /// that zip tape gradients with parameter slots.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![
            self.stem.patch_w,
            self.stem.patch_b,
            self.stem.cls,
            self.stem.pos,
            self.stem.final_g,
            self.stem.final_b,
        ];
        for l in &self.layers {
            let b = &l.block;
            out.extend([
                b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln1_g, b.ln1_b, b.ln2_g, b.ln2_b,
            ]);
            for f in std::iter::once(&l.shared).chain(l.private.iter()) {
                out.extend([f.w1, f.b1, f.w2, f.b2]);
            }
        }
        for h in &self.heads {
            out.extend([h.w, h.b, h.classifier]);
        }
        out
    }
}

/// Puts every parameter tensor on the tape, as gradient-taking inputs when
/// `trainable`, otherwise as constants. The insertion order matches
/// [`SupernetParams::visit`].
pub fn stage(tape: &mut Tape, params: &SupernetParams, trainable: bool) -> StagedParams {
    let mut put = |t: &Tensor| {
        if trainable {
            tape.input(t.clone())
        } else {
            tape.constant(t.clone())
        }
    };
    let stem = StemVars {
        patch_w: put(&params.patch_w),
        patch_b: put(&params.patch_b),
        cls: put(&params.cls),
        pos: put(&params.pos),
        final_g: put(&params.final_g),
        final_b: put(&params.final_b),
    };
    let layers = params
        .layers
        .iter()
        .map(|l| {
            let block = BlockVars {
                wq: put(&l.wq),
                bq: put(&l.bq),
                wk: put(&l.wk),
                bk: put(&l.bk),
                wv: put(&l.wv),
                bv: put(&l.bv),
                wo: put(&l.wo),
                bo: put(&l.bo),
                ln1_g: put(&l.ln1_g),
                ln1_b: put(&l.ln1_b),
                ln2_g: put(&l.ln2_g),
                ln2_b: put(&l.ln2_b),
            };
            let mut ffn = |f: &super::Ffn| StagedFfn {
                w1: put(&f.w1),
                b1: put(&f.b1),
                w2: put(&f.w2),
                b2: put(&f.b2),
            };
            StagedLayer {
                block,
                shared: ffn(&l.shared),
                private: l.private.iter().map(&mut ffn).collect(),
            }
        })
        .collect();
    let heads = params
        .heads
        .iter()
        .map(|h| StagedHead {
            w: put(&h.w),
            b: put(&h.b),
            classifier: put(&h.classifier),
        })
        .collect();
    StagedParams { stem, layers, heads }
}

/// Rebuilds a [`StagedParams`] from vars handed out in [`SupernetParams::visit`]
/// order, using `template` only for its structure. This lets external
/// harnesses (like the numeric gradient checker) own the tape inputs.
pub fn restage(template: &SupernetParams, vars: &[Var]) -> Result<StagedParams> {
    let mut expect = 0usize;
    template.visit(|_, _| expect += 1);
    if vars.len() != expect {
        return Err(CoreError::Config(format!(
            "{} vars for {expect} parameter slots",
            vars.len()
        )));
    }
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("count checked above");
    let stem = StemVars {
        patch_w: next(),
        patch_b: next(),
        cls: next(),
        pos: next(),
        final_g: next(),
        final_b: next(),
    };
    let layers = template
        .layers
        .iter()
        .map(|l| {
            let block = BlockVars {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_g: next(),
                ln1_b: next(),
                ln2_g: next(),
                ln2_b: next(),
            };
            let mut ffn = || StagedFfn {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            };
            let shared = ffn();
            let private = (0..l.private.len()).map(|_| ffn()).collect();
            StagedLayer { block, shared, private }
        })
        .collect();
    let heads = template
        .heads
        .iter()
        .map(|_| StagedHead {
            w: next(),
            b: next(),
            classifier: next(),
        })
        .collect();
    Ok(StagedParams { stem, layers, heads })
}

/// Flattens a batch of images `[B, image_size^2]` into patch rows
/// `[B * patches, patch_size^2]`, row-major over (image, patch-row,
/// patch-column), each patch scanned row by row.
pub fn patchify(cfg: &SupernetConfig, images: &Tensor) -> Result<Tensor> {
    let px = cfg.pixels();
    if images.shape().len() != 2 || images.cols() != px {
        return Err(CoreError::Shape {
            op: "patchify",
            detail: format!(
                "want [batch, {px}] images for size {}, got {:?}",
                cfg.image_size,
                images.shape()
            ),
        });
    }
    let (b, g, ps, w) = (images.rows(), cfg.grid(), cfg.patch_size, cfg.image_size);
    let mut data = Vec::with_capacity(b * cfg.patches_per_image() * ps * ps);
    for i in 0..b {
        for py in 0..g {
            for px_ in 0..g {
                for dy in 0..ps {
                    for dx in 0..ps {
                        data.push(images.at(i, (py * ps + dy) * w + px_ * ps + dx));
                    }
                }
            }
        }
    }
    Tensor::new(vec![b * cfg.patches_per_image(), ps * ps], data)
}

/// Mixture coefficient of one FFN path: a compile-time constant or a tape
/// var (a single-element tensor) that gradients flow through.
#[derive(Debug, Clone, Copy)]
pub enum PathCoeff {
    Fixed(f64),
    Var(Var),
}

/// One FFN path scheduled into a block: which weights, at what coefficient.
#[derive(Debug, Clone, Copy)]
pub struct FfnPath {
    pub vars: StagedFfn,
    pub coeff: PathCoeff,
}

/// Per-layer gate input for a supernet forward.
#[derive(Debug, Clone, Copy)]
pub enum GateCoeff {
    /// Numeric coefficients `[shared, private]`. Zero-coefficient paths are
    /// not built at all, so their weights cannot influence the output.
    Fixed([f64; 2]),
    /// Tape vars for both coefficients; both paths are always built.
    Vars { shared: Var, private: Var },
}

struct Geometry {
    tokens: usize,
    head_dim: usize,
    ln_eps: f64,
}

/// Input geometry for assembling a token stream.
pub(super) struct TokenGeometry {
    pub patches: usize,
    pub tokens: usize,
    pub head_dim: usize,
    pub ln_eps: f64,
}

/// One block ready to run: staged tensors, active sizes, FFN paths.
pub(super) struct BlockSpec {
    pub vars: BlockVars,
    pub heads: usize,
    pub hidden: usize,
    pub paths: Vec<FfnPath>,
}

/// Stem, the given blocks in order, and the final normalization. Returns
/// normalized token rows `[batch * tokens, D]`.
pub(super) fn assemble_tokens(
    tape: &mut Tape,
    stem: &StemVars,
    blocks: &[BlockSpec],
    geom: &TokenGeometry,
    patch_rows: &Tensor,
) -> Result<Var> {
    let p = geom.patches;
    let pd = tape.value(stem.patch_w).rows();
    if patch_rows.shape().len() != 2
        || patch_rows.cols() != pd
        || patch_rows.rows() == 0
        || !patch_rows.rows().is_multiple_of(p)
    {
        return Err(CoreError::Shape {
            op: "assemble_tokens",
            detail: format!(
                "want non-empty [batch * {p}, {pd}] patch rows, got {:?}",
                patch_rows.shape()
            ),
        });
    }
    let batch = patch_rows.rows() / p;

    let pr = tape.constant(patch_rows.clone());
    let projected = tape.matmul(pr, stem.patch_w, false, false)?;
    let projected = tape.add_bias(projected, stem.patch_b)?;
    let mut parts = Vec::with_capacity(2 * batch);
    for i in 0..batch {
        parts.push(stem.cls);
        parts.push(tape.slice_rows(projected, i * p..(i + 1) * p)?);
    }
    let tokens = tape.concat_rows(&parts)?;
    let pos = if batch == 1 {
        stem.pos
    } else {
        tape.concat_rows(&vec![stem.pos; batch])?
    };
    let mut x = tape.add(tokens, pos)?;

    let inner = Geometry {
        tokens: geom.tokens,
        head_dim: geom.head_dim,
        ln_eps: geom.ln_eps,
    };
    for b in blocks {
        x = block_impl(tape, x, &b.vars, b.heads, b.hidden, &b.paths, &inner)?;
    }
    tape.layernorm(x, stem.final_g, stem.final_b, geom.ln_eps)
}

/// Slices the first `w` columns unless the tensor is already that wide.
fn cols_prefix(tape: &mut Tape, x: Var, w: usize) -> Result<Var> {
    if tape.value(x).cols() == w {
        Ok(x)
    } else {
        tape.slice_cols(x, 0..w)
    }
}

fn rows_prefix(tape: &mut Tape, x: Var, r: usize) -> Result<Var> {
    if tape.value(x).rows() == r {
        Ok(x)
    } else {
        tape.slice_rows(x, 0..r)
    }
}

/// One transformer block on already-normalized geometry: pre-norm attention
/// over the first `heads` head slots, then a pre-norm mixture of FFN paths
/// over the first `hidden` channels, both on residual connections. The
/// second normalization is computed once and shared by every path.
fn block_impl(
    tape: &mut Tape,
    x: Var,
    vars: &BlockVars,
    heads: usize,
    hidden: usize,
    paths: &[FfnPath],
    geom: &Geometry,
) -> Result<Var> {
    let n = geom.tokens;
    let rows = tape.value(x).rows();
    if n == 0 || !rows.is_multiple_of(n) {
        return Err(CoreError::Shape {
            op: "block_forward",
            detail: format!("{rows} token rows do not tile into images of {n} tokens"),
        });
    }
    let batch = rows / n;
    let dh = geom.head_dim;
    let w = heads * dh;

    // Attention sublayer.
    let ln1 = tape.layernorm(x, vars.ln1_g, vars.ln1_b, geom.ln_eps)?;
    let wq = cols_prefix(tape, vars.wq, w)?;
    let bq = cols_prefix(tape, vars.bq, w)?;
    let wk = cols_prefix(tape, vars.wk, w)?;
    let bk = cols_prefix(tape, vars.bk, w)?;
    let wv = cols_prefix(tape, vars.wv, w)?;
    let bv = cols_prefix(tape, vars.bv, w)?;
    let q = tape.matmul(ln1, wq, false, false)?;
    let q = tape.add_bias(q, bq)?;
    let k = tape.matmul(ln1, wk, false, false)?;
    let k = tape.add_bias(k, bk)?;
    let v = tape.matmul(ln1, wv, false, false)?;
    let v = tape.add_bias(v, bv)?;

    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    let mut images = Vec::with_capacity(batch);
    for i in 0..batch {
        let r = i * n..(i + 1) * n;
        let qi = tape.slice_rows(q, r.clone())?;
        let ki = tape.slice_rows(k, r.clone())?;
        let vi = tape.slice_rows(v, r)?;
        let mut per_head = Vec::with_capacity(heads);
        for j in 0..heads {
            let c = j * dh..(j + 1) * dh;
            let qij = tape.slice_cols(qi, c.clone())?;
            let kij = tape.slice_cols(ki, c.clone())?;
            let vij = tape.slice_cols(vi, c)?;
            let scores = tape.matmul(qij, kij, false, true)?;
            let scores = tape.scale(scores, inv_sqrt_dh);
            let attn = tape.softmax_rows(scores);
            per_head.push(tape.matmul(attn, vij, false, false)?);
        }
        images.push(if per_head.len() == 1 {
            per_head[0]
        } else {
            tape.concat_cols(&per_head)?
        });
    }
    let att = if images.len() == 1 {
        images[0]
    } else {
        tape.concat_rows(&images)?
    };
    let wo = rows_prefix(tape, vars.wo, w)?;
    let proj = tape.matmul(att, wo, false, false)?;
    let proj = tape.add_bias(proj, vars.bo)?;
    let x_hat = tape.add(x, proj)?;

    // FFN mixture sublayer.
    if paths.is_empty() {
        return Ok(x_hat);
    }
    let ln2 = tape.layernorm(x_hat, vars.ln2_g, vars.ln2_b, geom.ln_eps)?;
    let mut mixed: Option<Var> = None;
    for path in paths {
        let w1 = cols_prefix(tape, path.vars.w1, hidden)?;
        let b1 = cols_prefix(tape, path.vars.b1, hidden)?;
        let w2 = rows_prefix(tape, path.vars.w2, hidden)?;
        let pre = tape.matmul(ln2, w1, false, false)?;
        let pre = tape.add_bias(pre, b1)?;
        let act = tape.gelu(pre);
        let out = tape.matmul(act, w2, false, false)?;
        let out = tape.add_bias(out, path.vars.b2)?;
        let weighted = match path.coeff {
            PathCoeff::Fixed(c) => {
                if c == 1.0 {
                    out
                } else {
                    tape.scale(out, c)
                }
            }
            PathCoeff::Var(s) => tape.mul_scalar_var(out, s)?,
        };
        mixed = Some(match mixed {
            None => weighted,
            Some(m) => tape.add(m, weighted)?,
        });
    }
    match mixed {
        None => Ok(x_hat),
        Some(m) => tape.add(x_hat, m),
    }
}

/// Builds the FFN path list for one layer under a gate. Fixed
/// zero-coefficient paths are omitted entirely.
fn gate_paths(layer: &StagedLayer, task: usize, gate: &GateCoeff) -> Vec<FfnPath> {
    match *gate {
        GateCoeff::Fixed([p_shared, p_private]) => {
            let mut paths = Vec::with_capacity(2);
            if p_shared != 0.0 {
                paths.push(FfnPath {
                    vars: layer.shared,
                    coeff: PathCoeff::Fixed(p_shared),
                });
            }
            if p_private != 0.0 {
                paths.push(FfnPath {
                    vars: layer.private[task],
                    coeff: PathCoeff::Fixed(p_private),
                });
            }
            paths
        }
        GateCoeff::Vars { shared, private } => vec![
            FfnPath {
                vars: layer.shared,
                coeff: PathCoeff::Var(shared),
            },
            FfnPath {
                vars: layer.private[task],
                coeff: PathCoeff::Var(private),
            },
        ],
    }
}

/// One elastic block for `task` under `choice`. A dropped layer returns `x`
/// itself: the same var, hence bit-exact identity. Head count and MLP ratio
/// must be members of the space.
#[allow(clippy::too_many_arguments)]
pub fn block_forward(
    tape: &mut Tape,
    x: Var,
    layer: &StagedLayer,
    space: &SearchSpace,
    choice: &LayerChoice,
    task: usize,
    gate: &GateCoeff,
    ln_eps: f64,
) -> Result<Var> {
    if !choice.keep {
        return Ok(x);
    }
    if task >= layer.private.len() {
        return Err(CoreError::Config(format!(
            "task {task} out of {} private paths",
            layer.private.len()
        )));
    }
    space
        .head_index(choice.heads)
        .ok_or_else(|| CoreError::Config(format!("head count {} not in the space", choice.heads)))?;
    space.mlp_index(choice.mlp_ratio).ok_or_else(|| {
        CoreError::Config(format!("mlp ratio {} not in the space", choice.mlp_ratio))
    })?;
    let geom = Geometry {
        tokens: space.tokens(),
        head_dim: space.head_dim(),
        ln_eps,
    };
    let paths = gate_paths(layer, task, gate);
    block_impl(
        tape,
        x,
        &layer.block,
        choice.heads,
        space.hidden_dim(choice.mlp_ratio),
        &paths,
        &geom,
    )
}

/// Stem plus every kept block plus the final normalization, producing
/// normalized token rows `[batch * tokens, D]` for `task`.
pub fn forward_tokens(
    tape: &mut Tape,
    sp: &StagedParams,
    cfg: &SupernetConfig,
    arch: &Architecture,
    task: usize,
    patch_rows: &Tensor,
    gates: &[GateCoeff],
) -> Result<Var> {
    ensure_valid(arch, &cfg.space)?;
    if task >= cfg.space.num_tasks() {
        return Err(CoreError::Config(format!(
            "task {task} out of {} tasks",
            cfg.space.num_tasks()
        )));
    }
    if gates.len() != arch.layers.len() {
        return Err(CoreError::Config(format!(
            "{} gate coefficients for {} layers",
            gates.len(),
            arch.layers.len()
        )));
    }
    let mut blocks = Vec::new();
    for (l, choice) in arch.layers.iter().enumerate() {
        if !choice.keep {
            continue;
        }
        blocks.push(BlockSpec {
            vars: sp.layers[l].block,
            heads: choice.heads,
            hidden: cfg.space.hidden_dim(choice.mlp_ratio),
            paths: gate_paths(&sp.layers[l], task, &gates[l]),
        });
    }
    let geom = TokenGeometry {
        patches: cfg.patches_per_image(),
        tokens: cfg.space.tokens(),
        head_dim: cfg.space.head_dim(),
        ln_eps: cfg.ln_eps,
    };
    assemble_tokens(tape, &sp.stem, &blocks, &geom, patch_rows)
}

/// Full forward to task embeddings `[batch, feature_dim]`: normalized class
/// tokens through the task's projection head.
pub fn forward_embeddings(
    tape: &mut Tape,
    sp: &StagedParams,
    cfg: &SupernetConfig,
    arch: &Architecture,
    task: usize,
    patch_rows: &Tensor,
    gates: &[GateCoeff],
) -> Result<Var> {
    let tokens = forward_tokens(tape, sp, cfg, arch, task, patch_rows, gates)?;
    let n = cfg.space.tokens();
    let batch = tape.value(tokens).rows() / n;
    let cls_rows: Vec<usize> = (0..batch).map(|i| i * n).collect();
    let cls = tape.lookup(tokens, &cls_rows)?;
    let head = &sp.heads[task];
    let emb = tape.matmul(cls, head.w, false, false)?;
    tape.add_bias(emb, head.b)
}

/// Convenience numeric forward: stages the parameters as constants, resolves
/// gates under `policy`, and returns the embedding tensor.
#[allow(clippy::too_many_arguments)]
pub fn run_embeddings<R: Rng>(
    cfg: &SupernetConfig,
    params: &SupernetParams,
    gates: &GateState,
    arch: &Architecture,
    task: usize,
    images: &Tensor,
    policy: GatePolicy,
    rng: &mut R,
) -> Result<Tensor> {
    let patch_rows = patchify(cfg, images)?;
    let coeffs = super::resolve_gate_coeffs(arch, task, gates, policy, rng)?;
    let gate_inputs: Vec<GateCoeff> = coeffs.into_iter().map(GateCoeff::Fixed).collect();
    let mut tape = Tape::new();
    let sp = stage(&mut tape, params, false);
    let emb = forward_embeddings(&mut tape, &sp, cfg, arch, task, &patch_rows, &gate_inputs)?;
    Ok(tape.value(emb).clone())
}
