//! Dense row-major tensors and a reverse-mode differentiation tape.
//!
//! Values are held in `f64`; serialized payloads are `f32` (see [`io`]).
//! All kernels are plain sequential loops, so identical inputs produce
//! bit-identical outputs on every run.

mod gradcheck;
pub mod io;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// Dense row-major tensor of `f64` values. Rank 1 and 2 cover everything the
/// supernet needs; images are flattened before they enter the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::Shape {
                op: "Tensor::new",
                detail: format!("shape {shape:?} wants {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count; a rank-1 tensor counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Column count; for rank-1 tensors this is the length.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product with optional transposes, accumulated in `f64`.
    /// Shapes are taken after transposition: the result is `(m, n)` where
    /// `m`/`k` come from `a` and `k`/`n` from `b`.
    pub fn matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
        let (ar, ac) = (a.rows(), a.cols());
        let (br, bc) = (b.rows(), b.cols());
        let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(CoreError::Shape {
                op: "matmul",
                detail: format!("inner dims {ka} vs {kb} (a {:?}, b {:?})", a.shape, b.shape),
            });
        }
        let k = ka;
        let mut out = vec![0.0f64; m * n];
        match (ta, tb) {
            (false, false) => {
                for i in 0..m {
                    let arow = &a.data[i * k..(i + 1) * k];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (kk, &aik) in arow.iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let brow = &b.data[kk * n..(kk + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
            }
            (false, true) => {
                for i in 0..m {
                    let arow = &a.data[i * k..(i + 1) * k];
                    for j in 0..n {
                        let brow = &b.data[j * k..(j + 1) * k];
                        let mut acc = 0.0f64;
                        for (&x, &y) in arow.iter().zip(brow) {
                            acc += x * y;
                        }
                        out[i * n + j] = acc;
                    }
                }
            }
            (true, false) => {
                for kk in 0..k {
                    let arow = &a.data[kk * m..(kk + 1) * m];
                    let brow = &b.data[kk * n..(kk + 1) * n];
                    for (i, &aik) in arow.iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
            }
            (true, true) => {
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0.0f64;
                        for kk in 0..k {
                            acc += a.data[kk * m + i] * b.data[j * k + kk];
                        }
                        out[i * n + j] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }
}
