//! Architecture search space: per-layer head counts, FFN width ratios, drop
//! bits, and per-task gate symbols, plus encoding, sampling, enumeration, and
//! cost accounting.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::util::fmt_f64;

/// Which FFN paths a task routes through in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateChoice {
    SharedOnly,
    PrivateOnly,
    Both,
}

impl GateChoice {
    pub const ALL: [GateChoice; 3] = [GateChoice::SharedOnly, GateChoice::PrivateOnly, GateChoice::Both];

    pub fn symbol(self) -> char {
        match self {
            GateChoice::SharedOnly => 'S',
            GateChoice::PrivateOnly => 'P',
            GateChoice::Both => 'B',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'S' => Some(GateChoice::SharedOnly),
            'P' => Some(GateChoice::PrivateOnly),
            'B' => Some(GateChoice::Both),
            _ => None,
        }
    }

    pub fn uses_shared(self) -> bool {
        matches!(self, GateChoice::SharedOnly | GateChoice::Both)
    }

    pub fn uses_private(self) -> bool {
        matches!(self, GateChoice::PrivateOnly | GateChoice::Both)
    }
}

/// Raw JSON shape of a search space.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceSpec {
    heads: Vec<usize>,
    mlp_ratios: Vec<f64>,
    num_layers: usize,
    num_tasks: usize,
    embed_dim: usize,
    head_dim: usize,
    tokens: usize,
    /// Zero-based indices of layers whose drop bit is pinned to keep.
    forced_keep_layers: Vec<usize>,
    /// Input width of the stem's patch projection, used only for cost
    /// accounting. Defaults to `embed_dim` when a file omits it.
    #[serde(default)]
    patch_dim: Option<usize>,
}

/// Validated search space. All sampling, enumeration, and cost accounting is
/// defined relative to one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceSpec", into = "SpaceSpec")]
pub struct SearchSpace {
    heads: Vec<usize>,
    mlp_ratios: Vec<f64>,
    num_layers: usize,
    num_tasks: usize,
    embed_dim: usize,
    head_dim: usize,
    tokens: usize,
    forced_keep: Vec<bool>,
    patch_dim: usize,
}

impl TryFrom<SpaceSpec> for SearchSpace {
    type Error = CoreError;

    fn try_from(s: SpaceSpec) -> Result<Self> {
        SearchSpace::new(
            s.heads,
            s.mlp_ratios,
            s.num_layers,
            s.num_tasks,
            s.embed_dim,
            s.head_dim,
            s.tokens,
            &s.forced_keep_layers,
            s.patch_dim,
        )
    }
}

impl From<SearchSpace> for SpaceSpec {
    fn from(s: SearchSpace) -> SpaceSpec {
        SpaceSpec {
            heads: s.heads.clone(),
            mlp_ratios: s.mlp_ratios.clone(),
            num_layers: s.num_layers,
            num_tasks: s.num_tasks,
            embed_dim: s.embed_dim,
            head_dim: s.head_dim,
            tokens: s.tokens,
            forced_keep_layers: s
                .forced_keep
                .iter()
                .enumerate()
                .filter_map(|(i, &f)| f.then_some(i))
                .collect(),
            patch_dim: Some(s.patch_dim),
        }
    }
}

impl SearchSpace {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        heads: Vec<usize>,
        mlp_ratios: Vec<f64>,
        num_layers: usize,
        num_tasks: usize,
        embed_dim: usize,
        head_dim: usize,
        tokens: usize,
        forced_keep_layers: &[usize],
        patch_dim: Option<usize>,
    ) -> Result<Self> {
        let bad = |m: String| Err(CoreError::Config(m));
        if heads.is_empty() || mlp_ratios.is_empty() {
            return bad("heads and mlp_ratios must be non-empty".into());
        }
        if !heads.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("heads must be strictly increasing, got {heads:?}"));
        }
        if !mlp_ratios.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("mlp_ratios must be strictly increasing, got {mlp_ratios:?}"));
        }
        if heads[0] == 0 {
            return bad("head counts must be positive".into());
        }
        if mlp_ratios.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return bad(format!("mlp_ratios must be finite and positive, got {mlp_ratios:?}"));
        }
        if num_layers == 0 || num_tasks == 0 {
            return bad("num_layers and num_tasks must be positive".into());
        }
        if embed_dim == 0 || head_dim == 0 {
            return bad("embed_dim and head_dim must be positive".into());
        }
        if tokens < 2 {
            return bad(format!("tokens must be at least 2 (class token plus one patch), got {tokens}"));
        }
        let max_heads = *heads.last().unwrap();
        if max_heads * head_dim != embed_dim {
            return bad(format!(
                "max heads ({max_heads}) x head_dim ({head_dim}) must equal embed_dim ({embed_dim})"
            ));
        }
        let mut forced_keep = vec![false; num_layers];
        for &i in forced_keep_layers {
            if i >= num_layers {
                return bad(format!("forced keep layer {i} out of {num_layers} layers"));
            }
            forced_keep[i] = true;
        }
        let space = SearchSpace {
            heads,
            mlp_ratios,
            num_layers,
            num_tasks,
            embed_dim,
            head_dim,
            tokens,
            forced_keep,
            patch_dim: patch_dim.unwrap_or(embed_dim),
        };
        for &m in &space.mlp_ratios {
            if space.hidden_dim(m) == 0 {
                return bad(format!("mlp ratio {m} rounds to an empty hidden layer"));
            }
        }
        Ok(space)
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn mlp_ratios(&self) -> &[f64] {
        &self.mlp_ratios
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn forced_keep(&self, layer: usize) -> bool {
        self.forced_keep[layer]
    }

    pub fn max_heads(&self) -> usize {
        *self.heads.last().unwrap()
    }

    pub fn max_mlp_ratio(&self) -> f64 {
        *self.mlp_ratios.last().unwrap()
    }

    /// FFN hidden width for a ratio: `round(m * embed_dim)`, ties away from
    /// zero, so odd embed dims with half-step ratios stay well-defined.
    pub fn hidden_dim(&self, m: f64) -> usize {
        (m * self.embed_dim as f64).round() as usize
    }

    pub fn max_hidden(&self) -> usize {
        self.hidden_dim(self.max_mlp_ratio())
    }

    pub fn head_index(&self, h: usize) -> Option<usize> {
        self.heads.iter().position(|&v| v == h)
    }

    pub fn mlp_index(&self, m: f64) -> Option<usize> {
        self.mlp_ratios.iter().position(|&v| v == m)
    }

    /// The largest architecture: every layer kept at maximum width, with the
    /// given gate choice for every task.
    pub fn max_arch(&self, gate: GateChoice) -> Architecture {
        Architecture {
            layers: (0..self.num_layers)
                .map(|_| LayerChoice {
                    heads: self.max_heads(),
                    mlp_ratio: self.max_mlp_ratio(),
                    keep: true,
                    gates: vec![gate; self.num_tasks],
                })
                .collect(),
        }
    }

    /// Number of FFN routings. Constrained counts one symbol from
    /// {shared, private, both} per task per layer: `T * 3^l`. Unconstrained
    /// lets each task pick any non-empty subset of the `T + 1` gates per
    /// layer: `T * (2^(T+1) - 1)^l`.
    pub fn count_gate_configs(&self, constrained: bool) -> Result<u128> {
        let l = self.num_layers as u32;
        let t = self.num_tasks as u128;
        let base: u128 = if constrained {
            3
        } else {
            let g = self.num_tasks as u32 + 1;
            2u128
                .checked_pow(g)
                .and_then(|v| v.checked_sub(1))
                .ok_or_else(|| CoreError::Overflow("count_gate_configs".into()))?
        };
        base.checked_pow(l)
            .and_then(|v| v.checked_mul(t))
            .ok_or_else(|| CoreError::Overflow("count_gate_configs".into()))
    }

    /// Total number of distinct architectures in the space.
    pub fn num_architectures(&self) -> Result<u128> {
        let gate_combos = 3u128
            .checked_pow(self.num_tasks as u32)
            .ok_or_else(|| CoreError::Overflow("num_architectures".into()))?;
        let mut total: u128 = 1;
        for layer in 0..self.num_layers {
            let d: u128 = if self.forced_keep[layer] { 1 } else { 2 };
            let per_layer = (self.heads.len() as u128)
                .checked_mul(self.mlp_ratios.len() as u128)
                .and_then(|v| v.checked_mul(d))
                .and_then(|v| v.checked_mul(gate_combos))
                .ok_or_else(|| CoreError::Overflow("num_architectures".into()))?;
            total = total
                .checked_mul(per_layer)
                .ok_or_else(|| CoreError::Overflow("num_architectures".into()))?;
        }
        Ok(total)
    }
}

/// One layer's knob settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub heads: usize,
    pub mlp_ratio: f64,
    /// `false` means the whole block is skipped (residual identity).
    pub keep: bool,
    /// One gate symbol per task.
    pub gates: Vec<GateChoice>,
}

/// A fully specified sub-network of the supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerChoice>,
}

/// Field of a layer that violated a space constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchField {
    Heads,
    MlpRatio,
    Drop,
    Gates,
}

/// A single validation failure, locating layer and field.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LayerCount { expected: usize, got: usize },
    Field { layer: usize, field: ArchField, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LayerCount { expected, got } => {
                write!(f, "expected {expected} layers, got {got}")
            }
            Violation::Field { layer, field, detail } => {
                write!(f, "layer {layer} {field:?}: {detail}")
            }
        }
    }
}

impl Architecture {
    /// Canonical string form: per layer `h{h}m{m}d{d}g{symbols}`, layers
    /// joined by `|`. Example with two tasks: `h10m3d1gSB`.
    pub fn encode(&self) -> String {
        self.layers
            .iter()
            .map(|l| {
                let gates: String = l.gates.iter().map(|g| g.symbol()).collect();
                format!(
                    "h{}m{}d{}g{}",
                    l.heads,
                    fmt_f64(l.mlp_ratio),
                    u8::from(l.keep),
                    gates
                )
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Parses and validates an encoded architecture. Errors carry the byte
    /// offset of the first malformed or out-of-space token.
    pub fn decode(s: &str, space: &SearchSpace) -> Result<Architecture> {
        let err = |position: usize, message: String| CoreError::Decode { position, message };
        let bytes = s.as_bytes();
        let mut pos = 0usize;
        let mut layers = Vec::new();

        let read_while = |pos: &mut usize, pred: &dyn Fn(u8) -> bool| -> (usize, String) {
            let start = *pos;
            while *pos < bytes.len() && pred(bytes[*pos]) {
                *pos += 1;
            }
            (start, s[start..*pos].to_string())
        };

        loop {
            let layer_idx = layers.len();
            // h<digits>
            if pos >= bytes.len() || bytes[pos] != b'h' {
                return Err(err(pos, format!("layer {layer_idx}: expected 'h'")));
            }
            pos += 1;
            let (hstart, htxt) = read_while(&mut pos, &|b| b.is_ascii_digit());
            let heads: usize = htxt
                .parse()
                .map_err(|_| err(hstart, format!("layer {layer_idx}: expected digits after 'h'")))?;
            if space.head_index(heads).is_none() {
                return Err(err(
                    hstart,
                    format!("layer {layer_idx}: h={heads} not in heads {:?}", space.heads),
                ));
            }
            // m<number>
            if pos >= bytes.len() || bytes[pos] != b'm' {
                return Err(err(pos, format!("layer {layer_idx}: expected 'm'")));
            }
            pos += 1;
            let (mstart, mtxt) = read_while(&mut pos, &|b| b.is_ascii_digit() || b == b'.');
            let mlp_ratio: f64 = mtxt
                .parse()
                .map_err(|_| err(mstart, format!("layer {layer_idx}: bad number after 'm'")))?;
            if space.mlp_index(mlp_ratio).is_none() {
                return Err(err(
                    mstart,
                    format!(
                        "layer {layer_idx}: m={} not in mlp_ratios {:?}",
                        fmt_f64(mlp_ratio),
                        space.mlp_ratios
                    ),
                ));
            }
            // d<0|1>
            if pos >= bytes.len() || bytes[pos] != b'd' {
                return Err(err(pos, format!("layer {layer_idx}: expected 'd'")));
            }
            pos += 1;
            let dstart = pos;
            let keep = match bytes.get(pos) {
                Some(b'0') => false,
                Some(b'1') => true,
                _ => return Err(err(dstart, format!("layer {layer_idx}: expected '0' or '1' after 'd'"))),
            };
            pos += 1;
            if layer_idx < space.num_layers && space.forced_keep[layer_idx] && !keep {
                return Err(err(
                    dstart,
                    format!("layer {layer_idx}: d=0 but layer is forced keep"),
                ));
            }
            // g<symbols>
            if pos >= bytes.len() || bytes[pos] != b'g' {
                return Err(err(pos, format!("layer {layer_idx}: expected 'g'")));
            }
            pos += 1;
            let mut gates = Vec::with_capacity(space.num_tasks);
            for t in 0..space.num_tasks {
                let gpos = pos;
                let c = s[pos..].chars().next().filter(|c| !matches!(c, '|'));
                let Some(c) = c else {
                    return Err(err(
                        gpos,
                        format!("layer {layer_idx}: expected {} gate symbols, got {t}", space.num_tasks),
                    ));
                };
                let Some(g) = GateChoice::from_symbol(c) else {
                    return Err(err(
                        gpos,
                        format!("layer {layer_idx}: gate symbol '{c}' not one of S, P, B"),
                    ));
                };
                gates.push(g);
                pos += c.len_utf8();
            }
            layers.push(LayerChoice {
                heads,
                mlp_ratio,
                keep,
                gates,
            });
            match bytes.get(pos) {
                None => break,
                Some(b'|') => {
                    pos += 1;
                    if layers.len() >= space.num_layers {
                        return Err(err(
                            pos,
                            format!("more than {} layers", space.num_layers),
                        ));
                    }
                }
                Some(&c) => {
                    return Err(err(
                        pos,
                        format!("unexpected character '{}'", c as char),
                    ))
                }
            }
        }
        if layers.len() != space.num_layers {
            return Err(err(
                pos,
                format!("expected {} layers, got {}", space.num_layers, layers.len()),
            ));
        }
        Ok(Architecture { layers })
    }
}

/// Checks every layer entry against its choice set. An empty result means
/// the architecture is valid.
pub fn validate(arch: &Architecture, space: &SearchSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    if arch.layers.len() != space.num_layers {
        out.push(Violation::LayerCount {
            expected: space.num_layers,
            got: arch.layers.len(),
        });
        return out;
    }
    for (i, layer) in arch.layers.iter().enumerate() {
        if space.head_index(layer.heads).is_none() {
            out.push(Violation::Field {
                layer: i,
                field: ArchField::Heads,
                detail: format!("h={} not in {:?}", layer.heads, space.heads),
            });
        }
        if space.mlp_index(layer.mlp_ratio).is_none() {
            out.push(Violation::Field {
                layer: i,
                field: ArchField::MlpRatio,
                detail: format!("m={} not in {:?}", fmt_f64(layer.mlp_ratio), space.mlp_ratios),
            });
        }
        if space.forced_keep[i] && !layer.keep {
            out.push(Violation::Field {
                layer: i,
                field: ArchField::Drop,
                detail: "d=0 on a forced-keep layer".into(),
            });
        }
        if layer.gates.len() != space.num_tasks {
            out.push(Violation::Field {
                layer: i,
                field: ArchField::Gates,
                detail: format!("{} gate symbols for {} tasks", layer.gates.len(), space.num_tasks),
            });
        }
    }
    out
}

/// [`validate`], but folded into a `Result` for call sites that require a
/// well-formed architecture.
pub fn ensure_valid(arch: &Architecture, space: &SearchSpace) -> Result<()> {
    let violations = validate(arch, space);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CoreError::InvalidArchitecture(violations))
    }
}

/// Cost accounting mode: the whole multi-task view, or trimmed to a task
/// subset as extraction would keep it.
#[derive(Debug, Clone, PartialEq)]
pub enum CostMode {
    SupernetView,
    Trimmed(BTreeSet<usize>),
}

/// Per-layer cost slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerCost {
    pub flops: u64,
    pub params: u64,
}

/// Cost of an architecture: one forward pass worth of matmul flops (one
/// multiply-accumulate counts as two flops; softmax, layernorm, and GELU are
/// excluded) and the retained parameter count. Task heads are excluded; the
/// stem (patch embedding, class/position tokens, final norm) is always
/// counted. Totals equal the stem plus the per-layer entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    pub stem: LayerCost,
    pub per_layer: Vec<LayerCost>,
}

/// Computes the cost report for a valid architecture.
///
/// Attention uses the active width `w = h * head_dim`. Per layer the FFN
/// counts each retained path once: the shared path if any task in the mode's
/// task set routes through it, plus one private path per such task that does.
/// For a single-task set this equals that task's inference cost. Dropped
/// layers contribute zero.
pub fn cost(arch: &Architecture, space: &SearchSpace, mode: &CostMode) -> Result<CostReport> {
    ensure_valid(arch, space)?;
    let tasks: Vec<usize> = match mode {
        CostMode::SupernetView => (0..space.num_tasks).collect(),
        CostMode::Trimmed(set) => {
            if set.is_empty() {
                return Err(CoreError::Config("trimmed cost needs a non-empty task set".into()));
            }
            if let Some(&bad) = set.iter().find(|&&t| t >= space.num_tasks) {
                return Err(CoreError::Config(format!(
                    "task {bad} out of {} tasks",
                    space.num_tasks
                )));
            }
            set.iter().copied().collect()
        }
    };

    let n = space.tokens as u64;
    let d = space.embed_dim as u64;
    let dh = space.head_dim as u64;
    let pp = space.patch_dim as u64;

    let stem = LayerCost {
        // Patch projection over the N-1 patch tokens.
        flops: 2 * (n - 1) * pp * d,
        // Patch projection + bias, class token, position table, final norm.
        params: pp * d + d + d + n * d + 2 * d,
    };

    let mut per_layer = Vec::with_capacity(arch.layers.len());
    for layer in &arch.layers {
        if !layer.keep {
            per_layer.push(LayerCost::default());
            continue;
        }
        let w = layer.heads as u64 * dh;
        let hid = space.hidden_dim(layer.mlp_ratio) as u64;

        let attn_flops = 2 * n * d * 3 * w + 4 * n * n * w + 2 * n * w * d;
        let attn_params = 3 * (d * w + w) + (w * d + d);
        let ln_params = 4 * d;

        let shared_used = tasks.iter().any(|&t| layer.gates[t].uses_shared());
        let private_paths = tasks.iter().filter(|&&t| layer.gates[t].uses_private()).count() as u64;
        let paths = u64::from(shared_used) + private_paths;

        let ffn_flops = paths * 4 * n * d * hid;
        let ffn_params = paths * (2 * d * hid + hid + d);

        per_layer.push(LayerCost {
            flops: attn_flops + ffn_flops,
            params: attn_params + ln_params + ffn_params,
        });
    }

    let flops = stem.flops + per_layer.iter().map(|l| l.flops).sum::<u64>();
    let params = stem.params + per_layer.iter().map(|l| l.params).sum::<u64>();
    Ok(CostReport {
        flops,
        params,
        stem,
        per_layer,
    })
}

/// Draws an architecture uniformly from the space.
pub fn sample_uniform<R: Rng>(space: &SearchSpace, rng: &mut R) -> Architecture {
    let layers = (0..space.num_layers)
        .map(|i| {
            let heads = space.heads[rng.gen_range(0..space.heads.len())];
            let mlp_ratio = space.mlp_ratios[rng.gen_range(0..space.mlp_ratios.len())];
            let keep = if space.forced_keep[i] { true } else { rng.gen_range(0..2) == 1 };
            let gates = (0..space.num_tasks)
                .map(|_| GateChoice::ALL[rng.gen_range(0..3)])
                .collect();
            LayerChoice {
                heads,
                mlp_ratio,
                keep,
                gates,
            }
        })
        .collect();
    Architecture { layers }
}

/// Lazy enumeration of the whole space in lexicographic order of the
/// encoded string. Refuses spaces larger than `cap`.
pub fn enumerate(space: &SearchSpace, cap: u128) -> Result<Enumerator> {
    let total = space.num_architectures()?;
    if total > cap {
        return Err(CoreError::EnumerationTooLarge { total, cap });
    }

    // Every layer draws from the same token alphabet except that forced-keep
    // layers lose their d=0 tokens. Sorting tokens as strings yields global
    // encoding order because no token is a prefix of another.
    let mut tokens: Vec<(String, LayerChoice)> = Vec::new();
    let mut gate_combo = vec![0usize; space.num_tasks];
    loop {
        let gates: Vec<GateChoice> = gate_combo.iter().map(|&i| GateChoice::ALL[i]).collect();
        for &h in &space.heads {
            for &m in &space.mlp_ratios {
                for keep in [false, true] {
                    let lc = LayerChoice {
                        heads: h,
                        mlp_ratio: m,
                        keep,
                        gates: gates.clone(),
                    };
                    let enc = Architecture { layers: vec![lc.clone()] }.encode();
                    tokens.push((enc, lc));
                }
            }
        }
        // Odometer over gate symbols.
        let mut i = 0;
        loop {
            if i == gate_combo.len() {
                break;
            }
            gate_combo[i] += 1;
            if gate_combo[i] < 3 {
                break;
            }
            gate_combo[i] = 0;
            i += 1;
        }
        if i == gate_combo.len() {
            break;
        }
    }
    tokens.sort_by(|a, b| a.0.cmp(&b.0));

    let free: Vec<LayerChoice> = tokens.iter().map(|(_, lc)| lc.clone()).collect();
    let forced: Vec<LayerChoice> = tokens
        .iter()
        .filter(|(_, lc)| lc.keep)
        .map(|(_, lc)| lc.clone())
        .collect();

    let per_layer: Vec<Vec<LayerChoice>> = (0..space.num_layers)
        .map(|i| if space.forced_keep[i] { forced.clone() } else { free.clone() })
        .collect();

    Ok(Enumerator {
        per_layer,
        indices: vec![0; space.num_layers],
        done: false,
    })
}

/// Iterator produced by [`enumerate`].
#[derive(Debug)]
pub struct Enumerator {
    per_layer: Vec<Vec<LayerChoice>>,
    indices: Vec<usize>,
    done: bool,
}

impl Iterator for Enumerator {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        if self.done {
            return None;
        }
        let arch = Architecture {
            layers: self
                .indices
                .iter()
                .zip(&self.per_layer)
                .map(|(&i, choices)| choices[i].clone())
                .collect(),
        };
        // Advance the odometer; the last layer varies fastest.
        let mut i = self.indices.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.indices[i] += 1;
            if self.indices[i] < self.per_layer[i].len() {
                break;
            }
            self.indices[i] = 0;
        }
        Some(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_space() -> SearchSpace {
        SearchSpace::new(
            vec![4, 5, 6],
            vec![2.0, 3.0, 4.0],
            2,
            3,
            48,
            8,
            17,
            &[],
            Some(16),
        )
        .unwrap()
    }

    fn full_scale_space() -> SearchSpace {
        SearchSpace::new(
            vec![10, 11, 12],
            vec![3.0, 3.5, 4.0],
            12,
            4,
            768,
            64,
            257,
            &(0..10).collect::<Vec<_>>(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn construction_rejects_inconsistent_dims() {
        assert!(SearchSpace::new(vec![4, 6], vec![2.0], 2, 1, 40, 8, 17, &[], None).is_err());
        assert!(SearchSpace::new(vec![6, 4], vec![2.0], 2, 1, 48, 8, 17, &[], None).is_err());
        assert!(SearchSpace::new(vec![4, 6], vec![2.0], 2, 1, 48, 8, 17, &[5], None).is_err());
        assert!(SearchSpace::new(vec![4, 6], vec![-1.0], 2, 1, 48, 8, 17, &[], None).is_err());
    }

    #[test]
    fn encode_produces_documented_shape() {
        let space = toy_space();
        let mut arch = space.max_arch(GateChoice::SharedOnly);
        arch.layers[1].gates = vec![GateChoice::SharedOnly, GateChoice::PrivateOnly, GateChoice::Both];
        arch.layers[1].mlp_ratio = 3.0;
        assert_eq!(arch.encode(), "h6m4d1gSSS|h6m3d1gSPB");
    }

    #[test]
    fn half_step_ratios_roundtrip() {
        let space = full_scale_space();
        let mut arch = space.max_arch(GateChoice::Both);
        arch.layers[3].mlp_ratio = 3.5;
        arch.layers[11].keep = false;
        let enc = arch.encode();
        assert!(enc.contains("h12m3.5d1gBBBB"));
        let back = Architecture::decode(&enc, &space).unwrap();
        assert_eq!(back, arch);
    }

    #[test]
    fn decode_rejects_out_of_space_heads_by_position() {
        let space = full_scale_space();
        let enc = "h13m3d1gSSSS|".to_string()
            + &["h10m3d1gSSSS"; 11].join("|");
        let err = Architecture::decode(&enc, &space).unwrap_err();
        match err {
            CoreError::Decode { position, message } => {
                assert_eq!(position, 1);
                assert!(message.contains("h=13"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_reports_first_malformed_token() {
        let space = toy_space();
        let err = Architecture::decode("h4m2d1gSPB|h4x2d1gSPB", &space).unwrap_err();
        match err {
            CoreError::Decode { position, .. } => assert_eq!(position, 13),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_enforces_layer_count_and_gate_arity() {
        let space = toy_space();
        assert!(Architecture::decode("h4m2d1gSPB", &space).is_err());
        assert!(Architecture::decode("h4m2d1gSP|h4m2d1gSPB", &space).is_err());
    }

    #[test]
    fn roundtrip_random_archs() {
        let space = toy_space();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let arch = sample_uniform(&space, &mut rng);
            assert!(validate(&arch, &space).is_empty());
            let back = Architecture::decode(&arch.encode(), &space).unwrap();
            assert_eq!(back, arch);
        }
    }

    #[test]
    fn validate_locates_violations() {
        let space = toy_space();
        let mut arch = space.max_arch(GateChoice::SharedOnly);
        arch.layers[1].heads = 7;
        arch.layers[1].mlp_ratio = 9.0;
        let v = validate(&arch, &space);
        assert_eq!(v.len(), 2);
        assert!(matches!(
            v[0],
            Violation::Field { layer: 1, field: ArchField::Heads, .. }
        ));
        assert!(matches!(
            v[1],
            Violation::Field { layer: 1, field: ArchField::MlpRatio, .. }
        ));
    }

    #[test]
    fn forced_keep_violation_detected() {
        let space = full_scale_space();
        let mut arch = space.max_arch(GateChoice::SharedOnly);
        arch.layers[0].keep = false;
        let v = validate(&arch, &space);
        assert!(matches!(
            v[0],
            Violation::Field { layer: 0, field: ArchField::Drop, .. }
        ));
    }

    #[test]
    fn gate_config_counts_match_closed_forms() {
        // Single layer, two tasks, constrained: 2 * 3 = 6.
        let s = SearchSpace::new(vec![2], vec![2.0], 1, 2, 16, 8, 5, &[], None).unwrap();
        assert_eq!(s.count_gate_configs(true).unwrap(), 6);

        // Full-scale: 4 * 3^12 = 2,125,764 constrained, and the unconstrained
        // count with five gates per layer is astronomically larger.
        let f = full_scale_space();
        assert_eq!(f.count_gate_configs(true).unwrap(), 2_125_764);
        assert_eq!(
            f.count_gate_configs(false).unwrap(),
            4u128 * 31u128.pow(12)
        );
    }

    #[test]
    fn gate_config_count_matches_enumeration_small() {
        // Enumerate per-task symbol sequences directly for l <= 4, T <= 3.
        for l in 1..=4usize {
            for t in 1..=3usize {
                let s = SearchSpace::new(vec![2], vec![2.0], l, t, 16, 8, 5, &[], None).unwrap();
                // Constrained: count (task, per-layer symbol) tuples.
                let mut constrained = 0u128;
                for _task in 0..t {
                    let mut seqs = 1u128;
                    for _ in 0..l {
                        seqs *= 3;
                    }
                    constrained += seqs;
                }
                assert_eq!(s.count_gate_configs(true).unwrap(), constrained);

                // Unconstrained: per layer any non-empty subset of t+1 gates.
                let subsets = (1u128 << (t + 1)) - 1;
                let mut unconstrained = 0u128;
                for _task in 0..t {
                    let mut seqs = 1u128;
                    for _ in 0..l {
                        seqs *= subsets;
                    }
                    unconstrained += seqs;
                }
                assert_eq!(s.count_gate_configs(false).unwrap(), unconstrained);
            }
        }
    }

    #[test]
    fn cost_matches_hand_computed_single_layer() {
        // One kept layer, h=4 (w=32), m=2 (hidden=96), one task on the
        // shared path only.
        let space = SearchSpace::new(vec![4, 5, 6], vec![2.0, 3.0, 4.0], 1, 1, 48, 8, 17, &[], Some(16))
            .unwrap();
        let arch = Architecture {
            layers: vec![LayerChoice {
                heads: 4,
                mlp_ratio: 2.0,
                keep: true,
                gates: vec![GateChoice::SharedOnly],
            }],
        };
        let report = cost(&arch, &space, &CostMode::SupernetView).unwrap();
        let (n, d, w, hid) = (17u64, 48u64, 32u64, 96u64);
        let attn = 2 * n * d * 3 * w + 4 * n * n * w + 2 * n * w * d;
        let ffn = 4 * n * d * hid;
        assert_eq!(report.per_layer[0].flops, attn + ffn);
        assert_eq!(report.stem.flops, 2 * 16 * 16 * 48);
        assert_eq!(report.flops, report.stem.flops + attn + ffn);
    }

    #[test]
    fn dropped_layers_cost_nothing() {
        let space = toy_space();
        let mut arch = space.max_arch(GateChoice::Both);
        arch.layers[0].keep = false;
        let report = cost(&arch, &space, &CostMode::SupernetView).unwrap();
        assert_eq!(report.per_layer[0], LayerCost::default());
        assert!(report.per_layer[1].flops > 0);
    }

    #[test]
    fn trimmed_mode_counts_shared_once_and_only_target_privates() {
        let space = toy_space();
        let mut arch = space.max_arch(GateChoice::Both);
        // Task gates: task0 Both, task1 PrivateOnly, task2 SharedOnly.
        for layer in &mut arch.layers {
            layer.gates = vec![GateChoice::Both, GateChoice::PrivateOnly, GateChoice::SharedOnly];
        }
        let full = cost(&arch, &space, &CostMode::SupernetView).unwrap();
        let solo = cost(
            &arch,
            &space,
            &CostMode::Trimmed(BTreeSet::from([0])),
        )
        .unwrap();
        // Supernet view: shared + task0 private + task1 private = 3 paths.
        // Task 0 alone: shared + its private = 2 paths.
        let n = space.tokens() as u64;
        let d = space.embed_dim() as u64;
        let hid = space.max_hidden() as u64;
        let path_flops = 4 * n * d * hid;
        assert_eq!(
            full.per_layer[0].flops - solo.per_layer[0].flops,
            path_flops
        );

        // A task on the shared path contributes no private cost.
        let shared_only = cost(&arch, &space, &CostMode::Trimmed(BTreeSet::from([2]))).unwrap();
        assert_eq!(
            shared_only.per_layer[0].flops,
            solo.per_layer[0].flops - path_flops
        );
    }

    #[test]
    fn cost_is_monotone_in_width_knobs() {
        let space = toy_space();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = sample_uniform(&space, &mut rng);
            let mut bigger = a.clone();
            let l = rng.gen_range(0..2);
            bigger.layers[l].heads = space.max_heads();
            bigger.layers[l].mlp_ratio = space.max_mlp_ratio();
            bigger.layers[l].keep = true;
            for g in &mut bigger.layers[l].gates {
                *g = GateChoice::Both;
            }
            let ca = cost(&a, &space, &CostMode::SupernetView).unwrap();
            let cb = cost(&bigger, &space, &CostMode::SupernetView).unwrap();
            assert!(cb.flops >= ca.flops && cb.params >= ca.params);
        }
    }

    #[test]
    fn cost_rejects_invalid_arch() {
        let space = toy_space();
        let mut arch = space.max_arch(GateChoice::Both);
        arch.layers[0].heads = 9;
        assert!(matches!(
            cost(&arch, &space, &CostMode::SupernetView),
            Err(CoreError::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn enumerate_small_space_in_encoding_order() {
        // 2 heads x 1 ratio x 2 drops x 3 gates = 12 archs.
        let space = SearchSpace::new(vec![10, 11], vec![3.0], 1, 1, 88, 8, 5, &[], None).unwrap();
        let archs: Vec<Architecture> = enumerate(&space, 1_000_000).unwrap().collect();
        assert_eq!(archs.len(), 12);
        let encs: Vec<String> = archs.iter().map(|a| a.encode()).collect();
        let mut sorted = encs.clone();
        sorted.sort();
        assert_eq!(encs, sorted, "enumeration must follow encoding order");
        let unique: std::collections::BTreeSet<&String> = encs.iter().collect();
        assert_eq!(unique.len(), 12);
    }

    #[test]
    fn enumerate_refuses_past_cap_with_exact_count() {
        let space = full_scale_space();
        let err = enumerate(&space, 1_000_000).unwrap_err();
        match err {
            CoreError::EnumerationTooLarge { total, cap } => {
                assert_eq!(total, space.num_architectures().unwrap());
                assert_eq!(cap, 1_000_000);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn enumerate_matches_sampling_support() {
        let space = SearchSpace::new(vec![2, 4], vec![1.0, 2.0], 2, 2, 32, 8, 5, &[0], None).unwrap();
        let all: BTreeSet<String> = enumerate(&space, 1_000_000)
            .unwrap()
            .map(|a| a.encode())
            .collect();
        assert_eq!(all.len() as u128, space.num_architectures().unwrap());
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..500 {
            let a = sample_uniform(&space, &mut rng);
            assert!(all.contains(&a.encode()));
        }
    }

    #[test]
    fn sampling_is_uniform_by_chi_square() {
        // 12-architecture space, 12,000 draws. The 0.99 quantile of a
        // chi-square with 11 degrees of freedom is 24.725; staying below it
        // means uniformity is not rejected at p = 0.01.
        let space = SearchSpace::new(vec![10, 11], vec![3.0], 1, 1, 88, 8, 5, &[], None).unwrap();
        let mut counts: std::collections::BTreeMap<String, u64> = BTreeMap::new();
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        for _ in 0..12_000 {
            *counts.entry(sample_uniform(&space, &mut rng).encode()).or_default() += 1;
        }
        assert_eq!(counts.len(), 12);
        let expected = 1000.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 24.725, "chi-square {chi2} rejects uniformity");
    }

    #[test]
    fn space_json_roundtrip_and_schema_keys() {
        let space = full_scale_space();
        let json = serde_json::to_value(&space).unwrap();
        for key in [
            "heads",
            "mlp_ratios",
            "num_layers",
            "num_tasks",
            "embed_dim",
            "head_dim",
            "tokens",
            "forced_keep_layers",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["forced_keep_layers"], serde_json::json!((0..10).collect::<Vec<usize>>()));
        let back: SearchSpace = serde_json::from_value(json).unwrap();
        assert_eq!(back, space);
    }

    use std::collections::BTreeMap;
}
