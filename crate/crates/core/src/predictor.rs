//! Per-task architecture-quality predictors: a fixed featurization of
//! (architecture, task) pairs and a Bayesian ridge regressor (a Gaussian
//! process with a linear kernel) that scores and ranks candidates.
//!
//! Featurization is a task's view of an architecture: per layer a one-hot
//! head choice, one-hot FFN-width choice, one-hot gate symbol for that task,
//! and the keep flag, plus the trimmed-for-task flops and parameter counts
//! normalized by the largest architecture's. Other tasks' gate symbols do
//! not appear, so two architectures differing only there featurize
//! identically.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::arch::{cost, ensure_valid, Architecture, CostMode, GateChoice, SearchSpace};
use crate::error::{CoreError, Result};
use crate::objectives::{average_ranks, kendall_tau};
use crate::tensor::io::{read_archive, write_archive};
use crate::tensor::Tensor;
use crate::util::{fmt_f64, fnv1a64};

pub const DEFAULT_ALPHA2: f64 = 1.0;
pub const DEFAULT_SIGMA2: f64 = 0.01;
/// Readiness threshold on the holdout rank correlation.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Feature-vector length: per layer one-hot(head choice) + one-hot(width
/// choice) + one-hot(gate symbol) + keep flag, plus two cost scalars.
pub fn feature_len(space: &SearchSpace) -> usize {
    space.num_layers() * (space.heads().len() + space.mlp_ratios().len() + 3 + 1) + 2
}

/// Stable fingerprint of everything the featurization depends on. Stored in
/// checkpoints so a predictor cannot be replayed against a different space.
pub fn feature_spec_hash(space: &SearchSpace) -> u64 {
    let mlp: Vec<String> = space.mlp_ratios().iter().map(|&m| fmt_f64(m)).collect();
    let desc = format!(
        "v1;heads={:?};mlp={:?};layers={};tasks={};embed={};head_dim={};tokens={};patch={}",
        space.heads(),
        mlp,
        space.num_layers(),
        space.num_tasks(),
        space.embed_dim(),
        space.head_dim(),
        space.tokens(),
        space.patch_dim(),
    );
    fnv1a64(desc.as_bytes())
}

/// Features of `arch` as seen by `task`. Length is [`feature_len`];
/// deterministic; independent of other tasks' gate symbols.
pub fn featurize(arch: &Architecture, task: usize, space: &SearchSpace) -> Result<Vec<f64>> {
    ensure_valid(arch, space)?;
    if task >= space.num_tasks() {
        return Err(CoreError::Config(format!(
            "task {task} out of {} tasks",
            space.num_tasks()
        )));
    }
    let mut out = Vec::with_capacity(feature_len(space));
    for choice in &arch.layers {
        for &h in space.heads() {
            out.push(f64::from(h == choice.heads));
        }
        for &m in space.mlp_ratios() {
            out.push(f64::from(m == choice.mlp_ratio));
        }
        for g in GateChoice::ALL {
            out.push(f64::from(g == choice.gates[task]));
        }
        out.push(f64::from(choice.keep));
    }
    let mode = CostMode::Trimmed([task].into_iter().collect());
    let own = cost(arch, space, &mode)?;
    let full = cost(&space.max_arch(GateChoice::Both), space, &mode)?;
    out.push(own.flops as f64 / full.flops as f64);
    out.push(own.params as f64 / full.params as f64);
    debug_assert_eq!(out.len(), feature_len(space));
    Ok(out)
}

/// Deterministic 20% holdout membership by encoding hash, shared by every
/// consumer so train and holdout sets never overlap.
pub fn is_holdout(encoding: &str) -> bool {
    fnv1a64(encoding.as_bytes()).is_multiple_of(5)
}

/// Holdout verdict for one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readiness {
    /// Rank correlation between predicted and measured holdout scores.
    pub kd: f64,
    pub ready: bool,
}

/// A fitted per-task regressor: posterior mean and covariance of the
/// feature weights, plus the record of what it was trained on.
#[derive(Debug, Clone)]
pub struct RankPredictor {
    pub task: usize,
    pub alpha2: f64,
    pub sigma2: f64,
    pub feature_hash: u64,
    /// Target mean, folded out before the ridge solve and back in at
    /// prediction time, so constant targets are reproduced exactly.
    pub y_mean: f64,
    /// Posterior weight mean, one per feature.
    pub mean: Vec<f64>,
    /// Posterior weight covariance, row-major `d x d`, symmetric PSD.
    pub cov: Vec<f64>,
    /// True when the normal equations were rank-deficient and the solve
    /// fell back to an eigendecomposition pseudo-inverse.
    pub pinv_fallback: bool,
    /// Encodings of the training architectures.
    pub trained_on: Vec<String>,
}

/// Fits the posterior `mean = (PhiT Phi + n (sigma2/alpha2) I)^-1 PhiT y`
/// on centered targets. The regularizer carries the row count `n` so the
/// fit is invariant under duplicating the whole training set.
///
/// `sigma2 = 0` requests the exact-interpolation limit; one-hot blocks make
/// the design collinear, so this always takes the pseudo-inverse path
/// (minimum-norm least squares) and sets [`RankPredictor::pinv_fallback`].
pub fn fit(
    space: &SearchSpace,
    task: usize,
    archs: &[Architecture],
    scores: &[f64],
    alpha2: f64,
    sigma2: f64,
) -> Result<RankPredictor> {
    if archs.len() != scores.len() {
        return Err(CoreError::InsufficientData(format!(
            "{} architectures with {} scores",
            archs.len(),
            scores.len()
        )));
    }
    if !(alpha2.is_finite() && alpha2 > 0.0) || !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(CoreError::Config(format!(
            "prior variance must be positive and noise non-negative, got {alpha2}, {sigma2}"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(CoreError::NonFinite {
            context: format!("training score {bad}"),
            step: None,
        });
    }
    let encodings: Vec<String> = archs.iter().map(Architecture::encode).collect();
    let mut distinct = encodings.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "need at least 2 distinct architectures, got {}",
            distinct.len()
        )));
    }

    let d = feature_len(space);
    let n = archs.len();
    let mut phi = Vec::with_capacity(n * d);
    for a in archs {
        phi.extend(featurize(a, task, space)?);
    }
    let y_mean = scores.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = scores.iter().map(|s| s - y_mean).collect();

    // Normal equations: A = PhiT Phi + n*(sigma2/alpha2) I, b = PhiT yc.
    let mut a = vec![0.0; d * d];
    for row in 0..n {
        let r = &phi[row * d..(row + 1) * d];
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in i..d {
                a[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[i * d + j] = a[j * d + i];
        }
    }
    let ridge = n as f64 * sigma2 / alpha2;
    for i in 0..d {
        a[i * d + i] += ridge;
    }
    let mut b = vec![0.0; d];
    for row in 0..n {
        let r = &phi[row * d..(row + 1) * d];
        for i in 0..d {
            b[i] += r[i] * yc[row];
        }
    }

    let (mean, inv, pinv_fallback) = match cholesky(&a, d) {
        Some(l) => (chol_solve(&l, d, &b), chol_inverse(&l, d), false),
        None => {
            let (vals, vecs) = jacobi_eigh(&a, d);
            let inv = pseudo_inverse(&vals, &vecs, d);
            (mat_vec(&inv, d, &b), inv, true)
        }
    };
    let mut cov: Vec<f64> = inv.iter().map(|v| v * sigma2).collect();
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = s;
            cov[j * d + i] = s;
        }
    }

    Ok(RankPredictor {
        task,
        alpha2,
        sigma2,
        feature_hash: feature_spec_hash(space),
        y_mean,
        mean,
        cov,
        pinv_fallback,
        trained_on: encodings,
    })
}

impl RankPredictor {
    pub fn predict(&self, space: &SearchSpace, arch: &Architecture) -> Result<f64> {
        self.check_space(space)?;
        let f = featurize(arch, self.task, space)?;
        Ok(self.y_mean + f.iter().zip(&self.mean).map(|(x, w)| x * w).sum::<f64>())
    }

    /// Predicted scores turned into 1-based best-first ranks with
    /// average-rank ties.
    pub fn predict_ranks(&self, space: &SearchSpace, archs: &[Architecture]) -> Result<Vec<f64>> {
        let scores: Vec<f64> = archs
            .iter()
            .map(|a| self.predict(space, a))
            .collect::<Result<_>>()?;
        average_ranks(&scores, true)
    }

    /// Holdout check: rank correlation between predictions and measured
    /// scores, gated by `threshold`. The holdout must be disjoint from the
    /// training set.
    pub fn readiness(
        &self,
        space: &SearchSpace,
        holdout: &[Architecture],
        measured: &[f64],
        threshold: f64,
    ) -> Result<Readiness> {
        if holdout.len() != measured.len() {
            return Err(CoreError::InsufficientData(format!(
                "{} holdout architectures with {} scores",
                holdout.len(),
                measured.len()
            )));
        }
        for h in holdout {
            let enc = h.encode();
            if self.trained_on.contains(&enc) {
                return Err(CoreError::Config(format!(
                    "holdout architecture {enc} was in the training set"
                )));
            }
        }
        let predicted: Vec<f64> = holdout
            .iter()
            .map(|a| self.predict(space, a))
            .collect::<Result<_>>()?;
        let kd = kendall_tau(&predicted, measured)?;
        Ok(Readiness {
            kd,
            ready: kd >= threshold,
        })
    }

    fn check_space(&self, space: &SearchSpace) -> Result<()> {
        if feature_spec_hash(space) != self.feature_hash {
            return Err(CoreError::Format(
                "predictor was fitted for a different search space".into(),
            ));
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.mean.len();
        let manifest = PredictorManifest {
            task: self.task,
            alpha2: self.alpha2,
            sigma2: self.sigma2,
            feature_hash: self.feature_hash,
            y_mean: self.y_mean,
            pinv_fallback: self.pinv_fallback,
            trained_on: self.trained_on.clone(),
        };
        let mean = Tensor::new(vec![d], self.mean.clone())?;
        let cov = Tensor::new(vec![d, d], self.cov.clone())?;
        write_archive(w, &manifest, &[("mean".into(), &mean), ("cov".into(), &cov)])
    }

    pub fn load<R: Read>(r: &mut R, space: &SearchSpace) -> Result<Self> {
        let (manifest, tensors): (PredictorManifest, _) = read_archive(r)?;
        if manifest.feature_hash != feature_spec_hash(space) {
            return Err(CoreError::Format(
                "predictor checkpoint does not match this search space".into(),
            ));
        }
        let d = feature_len(space);
        let mut mean = None;
        let mut cov = None;
        for (name, t) in tensors {
            match name.as_str() {
                "mean" if t.shape() == [d] => mean = Some(t.data().to_vec()),
                "cov" if t.shape() == [d, d] => cov = Some(t.data().to_vec()),
                other => {
                    return Err(CoreError::Format(format!(
                        "unexpected or misshapen tensor {other:?} in predictor checkpoint"
                    )))
                }
            }
        }
        let (Some(mean), Some(cov)) = (mean, cov) else {
            return Err(CoreError::Format("predictor checkpoint is missing tensors".into()));
        };
        Ok(RankPredictor {
            task: manifest.task,
            alpha2: manifest.alpha2,
            sigma2: manifest.sigma2,
            feature_hash: manifest.feature_hash,
            y_mean: manifest.y_mean,
            mean,
            cov,
            pinv_fallback: manifest.pinv_fallback,
            trained_on: manifest.trained_on,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PredictorManifest {
    task: usize,
    alpha2: f64,
    sigma2: f64,
    feature_hash: u64,
    y_mean: f64,
    pinv_fallback: bool,
    trained_on: Vec<String>,
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if a
/// pivot is not safely positive (rank-deficient or indefinite input).
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let scale = (0..d).map(|i| a[i * d + i]).fold(0.0f64, f64::max);
    let floor = scale.max(1.0) * 1e-12;
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= floor {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` by forward then backward substitution.
fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

/// Full inverse from the Cholesky factor, one unit vector at a time.
fn chol_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = chol_solve(l, d, &e);
        e[j] = 0.0;
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    inv
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (column `k` of the
/// returned matrix is the eigenvector of eigenvalue `k`).
fn jacobi_eigh(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += m[i * d + j] * m[i * d + j];
            }
        }
        let scale: f64 = (0..d).map(|i| m[i * d + i].abs()).fold(1e-300, f64::max);
        if off.sqrt() <= scale * 1e-14 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() <= scale * 1e-16 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    (vals, v)
}

/// `V diag(1/lambda where lambda > tol, else 0) V^T`.
fn pseudo_inverse(vals: &[f64], vecs: &[f64], d: usize) -> Vec<f64> {
    let lmax = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = lmax * d as f64 * 1e-12;
    let mut inv = vec![0.0; d * d];
    for k in 0..d {
        if vals[k] <= tol {
            continue;
        }
        let w = 1.0 / vals[k];
        for i in 0..d {
            let vik = vecs[i * d + k];
            if vik == 0.0 {
                continue;
            }
            for j in 0..d {
                inv[i * d + j] += w * vik * vecs[j * d + k];
            }
        }
    }
    inv
}

fn mat_vec(m: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| m[i * d + j] * x[j]).sum())
        .collect()
}
