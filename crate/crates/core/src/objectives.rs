//! Task losses, retrieval metrics, and rank statistics.
//!
//! Losses are built on the autograd tape so they can be differentiated;
//! metrics and rank statistics are plain numeric functions.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_COSFACE_SCALE: f64 = 16.0;
pub const DEFAULT_COSFACE_MARGIN: f64 = 0.2;
pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

/// Loss recipe for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossRecipe {
    CosFace,
    CosFaceTriplet,
    CrossEntropy,
}

/// Per-task loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Cosine logit scale s.
    pub scale: f64,
    /// Cosine margin subtracted from the true-class similarity.
    pub cos_margin: f64,
    /// Euclidean margin of the triplet hinge.
    pub triplet_margin: f64,
    /// Weight of the triplet term when the recipe combines both losses.
    pub triplet_weight: f64,
    pub recipe: LossRecipe,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            scale: DEFAULT_COSFACE_SCALE,
            cos_margin: DEFAULT_COSFACE_MARGIN,
            triplet_margin: DEFAULT_TRIPLET_MARGIN,
            triplet_weight: 1.0,
            recipe: LossRecipe::CosFace,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(CoreError::Config(format!("loss scale must be positive, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.cos_margin) {
            return Err(CoreError::Config(format!(
                "cosine margin must lie in [0, 1), got {}",
                self.cos_margin
            )));
        }
        if !(self.triplet_margin.is_finite() && self.triplet_margin >= 0.0) {
            return Err(CoreError::Config(format!(
                "triplet margin must be non-negative, got {}",
                self.triplet_margin
            )));
        }
        if !(self.triplet_weight.is_finite() && self.triplet_weight >= 0.0) {
            return Err(CoreError::Config(format!(
                "triplet weight must be non-negative, got {}",
                self.triplet_weight
            )));
        }
        Ok(())
    }

    /// Builds this recipe's loss for one batch: embeddings against the
    /// task's class weights and labels.
    pub fn build(
        &self,
        tape: &mut Tape,
        emb: Var,
        class_weights: Var,
        labels: &[usize],
    ) -> Result<Var> {
        self.validate()?;
        match self.recipe {
            LossRecipe::CrossEntropy => {
                let logits = tape.matmul(emb, class_weights, false, true)?;
                cross_entropy(tape, logits, labels)
            }
            LossRecipe::CosFace => {
                cosface_loss(tape, emb, class_weights, labels, self.scale, self.cos_margin)
            }
            LossRecipe::CosFaceTriplet => {
                let cf = cosface_loss(tape, emb, class_weights, labels, self.scale, self.cos_margin)?;
                let tp = triplet_batch_hard(tape, emb, labels, self.triplet_margin)?;
                let tp = tape.scale(tp, self.triplet_weight);
                tape.add(cf, tp)
            }
        }
    }
}

/// Cosine logits between row-normalized embeddings and class weights:
/// `normalize(emb) @ normalize(weights)^T`, shape `[batch, classes]`.
pub fn cosine_logits(tape: &mut Tape, emb: Var, class_weights: Var) -> Result<Var> {
    let ne = tape.l2_normalize_rows(emb);
    let nw = tape.l2_normalize_rows(class_weights);
    tape.matmul(ne, nw, false, true)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(CoreError::InsufficientData(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CoreError::Config(format!(
            "label {bad} out of {classes} classes"
        )));
    }
    Ok(())
}

/// Mean negative log softmax probability of the true class.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = {
        let v = tape.value(logits);
        (v.rows(), v.cols())
    };
    check_labels(labels, rows, cols)?;
    let probs = tape.softmax_rows(logits);
    let picked = tape.gather_row_cols(probs, labels)?;
    let logp = tape.ln(picked);
    let total = tape.sum_all(logp);
    Ok(tape.scale(total, -1.0 / rows as f64))
}

/// Margin cosine loss over already-computed cosine similarities
/// `[batch, classes]`: the true-class entry is shifted by `-margin` and
/// everything is scaled by `scale` before cross-entropy.
pub fn cosface_from_cosines(
    tape: &mut Tape,
    cos: Var,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<Var> {
    let (rows, cols) = {
        let v = tape.value(cos);
        (v.rows(), v.cols())
    };
    check_labels(labels, rows, cols)?;
    if !(scale.is_finite() && margin.is_finite()) || scale <= 0.0 {
        return Err(CoreError::Config(format!(
            "cosface needs finite margin and positive scale, got scale={scale} margin={margin}"
        )));
    }
    let mut onehot = Tensor::zeros(&[rows, cols]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.set(i, l, margin);
    }
    let shift = tape.constant(onehot);
    let adjusted = tape.sub(cos, shift)?;
    let scaled = tape.scale(adjusted, scale);
    cross_entropy(tape, scaled, labels)
}

fn reject_zero_norm_rows(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let t = tape.value(v);
    for r in 0..t.rows() {
        let norm_sq: f64 = t.row(r).iter().map(|x| x * x).sum();
        if norm_sq == 0.0 {
            return Err(CoreError::NonFinite {
                context: format!("{what} row {r} has zero norm"),
                step: None,
            });
        }
    }
    Ok(())
}

/// Margin cosine loss from raw embeddings and class weights. Both are
/// l2-normalized row-wise; zero-norm rows are rejected.
pub fn cosface_loss(
    tape: &mut Tape,
    emb: Var,
    class_weights: Var,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<Var> {
    reject_zero_norm_rows(tape, emb, "embedding")?;
    reject_zero_norm_rows(tape, class_weights, "class weight")?;
    let cos = cosine_logits(tape, emb, class_weights)?;
    cosface_from_cosines(tape, cos, labels, scale, margin)
}

/// Batch-hard triplet loss on l2-normalized embeddings.
///
/// For each anchor the hardest (farthest) positive and hardest (closest)
/// negative by Euclidean distance are selected, and the mean of
/// `max(d_pos - d_neg + margin, 0)` over anchors that have both a positive
/// and a negative is returned. Anchors lacking either are skipped; a batch
/// with no usable anchor is an error.
pub fn triplet_batch_hard(tape: &mut Tape, emb: Var, labels: &[usize], margin: f64) -> Result<Var> {
    let rows = tape.value(emb).rows();
    if labels.len() != rows {
        return Err(CoreError::InsufficientData(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if !margin.is_finite() || margin < 0.0 {
        return Err(CoreError::Config(format!("triplet margin must be non-negative, got {margin}")));
    }
    let normed = tape.l2_normalize_rows(emb);
    let gram = tape.matmul(normed, normed, false, true)?;
    // Squared distance on the unit sphere: 2 - 2 cos. Clamp tiny negatives
    // from rounding and keep sqrt away from its infinite slope at zero.
    let neg2 = tape.scale(gram, -2.0);
    let sq = tape.add_const(neg2, 2.0);
    let sq = tape.relu(sq);
    let sq = tape.add_const(sq, 1e-12);
    let dist = tape.sqrt(sq);

    let d = tape.value(dist).clone();
    let mut pos_cols = Vec::new();
    let mut neg_cols = Vec::new();
    let mut anchor_rows = Vec::new();
    for i in 0..rows {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..rows {
            if j == i {
                continue;
            }
            let dij = d.at(i, j);
            if labels[j] == labels[i] {
                if hardest_pos.is_none_or(|(_, v)| dij > v) {
                    hardest_pos = Some((j, dij));
                }
            } else if hardest_neg.is_none_or(|(_, v)| dij < v) {
                hardest_neg = Some((j, dij));
            }
        }
        if let (Some((p, _)), Some((n, _))) = (hardest_pos, hardest_neg) {
            anchor_rows.push(i);
            pos_cols.push(p);
            neg_cols.push(n);
        }
    }
    if anchor_rows.is_empty() {
        return Err(CoreError::InsufficientData(
            "no anchor has both a positive and a negative in the batch".into(),
        ));
    }

    // Restrict to usable anchor rows, then gather the chosen pair per row.
    let full = if anchor_rows.len() == rows && anchor_rows.iter().enumerate().all(|(k, &r)| k == r) {
        dist
    } else {
        let parts: Vec<Var> = anchor_rows
            .iter()
            .map(|&r| tape.slice_rows(dist, r..r + 1))
            .collect::<Result<_>>()?;
        tape.concat_rows(&parts)?
    };
    let d_pos = tape.gather_row_cols(full, &pos_cols)?;
    let d_neg = tape.gather_row_cols(full, &neg_cols)?;
    let diff = tape.sub(d_pos, d_neg)?;
    let shifted = tape.add_const(diff, margin);
    let hinged = tape.relu(shifted);
    Ok(tape.mean_all(hinged))
}

/// Retrieval quality of queries against a gallery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// Fraction of queries whose nearest gallery item shares their label.
    pub rank1: f64,
    /// Mean average precision over queries.
    pub mean_ap: f64,
    /// Number of queries evaluated.
    pub num_queries: usize,
}

/// Ranks the gallery per query by cosine similarity (descending, index
/// ascending on ties) and reports rank-1 accuracy and mAP. Every query
/// label must appear in its gallery view. With `exclude_matching_index`
/// the gallery item at the query's own index is skipped, for the
/// self-retrieval setting where both sets coincide.
pub fn retrieval_metrics(
    queries: &Tensor,
    query_labels: &[usize],
    gallery: &Tensor,
    gallery_labels: &[usize],
    exclude_matching_index: bool,
) -> Result<RetrievalMetrics> {
    if queries.rows() != query_labels.len() || gallery.rows() != gallery_labels.len() {
        return Err(CoreError::InsufficientData(
            "label counts must match embedding rows".into(),
        ));
    }
    if queries.cols() != gallery.cols() {
        return Err(CoreError::Shape {
            op: "retrieval_metrics",
            detail: format!("query dim {} vs gallery dim {}", queries.cols(), gallery.cols()),
        });
    }
    let qn = normalize_rows(queries);
    let gn = normalize_rows(gallery);
    let mut rank1_hits = 0usize;
    let mut ap_sum = 0.0;
    let mut used = 0usize;
    for qi in 0..qn.rows() {
        let q = qn.row(qi);
        let mut order: Vec<(usize, f64)> = (0..gn.rows())
            .filter(|&gi| !(exclude_matching_index && gi == qi))
            .map(|gi| {
                let sim: f64 = q.iter().zip(gn.row(gi)).map(|(a, b)| a * b).sum();
                (gi, sim)
            })
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let total_relevant = order
            .iter()
            .filter(|(gi, _)| gallery_labels[*gi] == query_labels[qi])
            .count();
        if total_relevant == 0 {
            return Err(CoreError::InsufficientData(format!(
                "query {qi} (label {}) has no relevant gallery item",
                query_labels[qi]
            )));
        }
        used += 1;
        if gallery_labels[order[0].0] == query_labels[qi] {
            rank1_hits += 1;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, (gi, _)) in order.iter().enumerate() {
            if gallery_labels[*gi] == query_labels[qi] {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += ap / total_relevant as f64;
    }
    Ok(RetrievalMetrics {
        rank1: rank1_hits as f64 / used as f64,
        mean_ap: ap_sum / used as f64,
        num_queries: used,
    })
}

fn normalize_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = t.cols();
    for r in 0..t.rows() {
        let norm: f64 = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for c in 0..cols {
            let v = out.at(r, c) / norm;
            out.set(r, c, v);
        }
    }
    out
}

/// Integer pair counts underlying the tie-aware rank correlation:
/// concordant, discordant, pairs tied in the first sequence, and pairs tied
/// in the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_a: u64,
    pub ties_b: u64,
    pub n: usize,
}

impl PairCounts {
    /// The tie-aware correlation
    /// `(C - D) / sqrt((n0 - ties_a) * (n0 - ties_b))` with
    /// `n0 = n(n-1)/2`. This exact expression over the integer counts is
    /// the defined value, so any two count derivations agree bitwise.
    pub fn correlation(&self) -> Result<f64> {
        let n0 = (self.n as u64) * (self.n as u64 - 1) / 2;
        let da = n0 - self.ties_a;
        let db = n0 - self.ties_b;
        if da == 0 || db == 0 {
            return Err(CoreError::DegenerateRanks(
                "one sequence is entirely tied".into(),
            ));
        }
        let num = self.concordant as f64 - self.discordant as f64;
        Ok(num / ((da as f64) * (db as f64)).sqrt())
    }
}

fn check_pair_inputs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::InsufficientData(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "need at least 2 observations, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: "rank correlation input".into(),
            step: None,
        });
    }
    Ok(())
}

/// Pair counts by sort-and-merge in `O(n log n)`: sort by the first
/// sequence (ties broken by the second), read tie-group sizes, and count
/// discordant pairs as strict inversions of the second sequence via
/// merge sort.
pub fn pair_counts(a: &[f64], b: &[f64]) -> Result<PairCounts> {
    check_pair_inputs(a, b)?;
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&p, &q| {
        a[p].partial_cmp(&a[q])
            .unwrap()
            .then(b[p].partial_cmp(&b[q]).unwrap())
    });

    let tie_pairs = |key: &dyn Fn(usize) -> f64, order: &[usize]| -> (u64, u64) {
        // Returns (pairs tied on key, pairs tied on key and also on b) --
        // the second component is only meaningful for the a-sort.
        let mut tied = 0u64;
        let mut tied_both = 0u64;
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && key(order[j + 1]) == key(order[i]) {
                j += 1;
            }
            let g = (j - i + 1) as u64;
            tied += g * (g - 1) / 2;
            // Sub-groups tied on b as well.
            let mut p = i;
            while p <= j {
                let mut q = p;
                while q < j && b[order[q + 1]] == b[order[p]] {
                    q += 1;
                }
                let h = (q - p + 1) as u64;
                tied_both += h * (h - 1) / 2;
                p = q + 1;
            }
            i = j + 1;
        }
        (tied, tied_both)
    };

    let (ties_a, ties_ab) = tie_pairs(&|i| a[i], &idx);

    let mut b_sorted: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let discordant = count_strict_inversions(&mut b_sorted);

    let mut b_order: Vec<usize> = (0..n).collect();
    b_order.sort_by(|&p, &q| b[p].partial_cmp(&b[q]).unwrap());
    let (ties_b, _) = tie_pairs(&|i| b[i], &b_order);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let concordant = n0 - ties_a - ties_b + ties_ab - discordant;
    Ok(PairCounts {
        concordant,
        discordant,
        ties_a,
        ties_b,
        n,
    })
}

/// Counts pairs `i < j` with `v[i] > v[j]` (strictly) by merge sort.
fn count_strict_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (lo, hi) = v.split_at_mut(mid);
        count_strict_inversions(lo) + count_strict_inversions(hi)
    };
    let merged = {
        let (lo, hi) = v.split_at(mid);
        let mut out = Vec::with_capacity(n);
        let (mut i, mut j) = (0, 0);
        while i < lo.len() && j < hi.len() {
            if lo[i] <= hi[j] {
                out.push(lo[i]);
                i += 1;
            } else {
                inv += (lo.len() - i) as u64;
                out.push(hi[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&lo[i..]);
        out.extend_from_slice(&hi[j..]);
        out
    };
    v.copy_from_slice(&merged);
    inv
}

/// Tie-aware rank correlation between two sequences, in `[-1, 1]`.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    pair_counts(a, b)?.correlation()
}

/// 1-based ranks of `values`, best first. With `higher_is_better` the
/// largest value gets rank 1. Exactly equal values share the average of
/// the positions they span, the same tie treatment the correlation above
/// uses.
pub fn average_ranks(values: &[f64], higher_is_better: bool) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(CoreError::InsufficientData("no values to rank".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: "rank input".into(),
            step: None,
        });
    }
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&p, &q| {
        let ord = values[p].partial_cmp(&values[q]).unwrap();
        if higher_is_better {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Positions i+1 ..= j+1 average to (i + j)/2 + 1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}
