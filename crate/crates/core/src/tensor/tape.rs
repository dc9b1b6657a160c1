//! Reverse-mode tape over [`Tensor`].
//!
//! Ops append nodes to an arena; [`Tape::backward`] walks the arena in
//! reverse, which is a valid topological order because every op only refers
//! to earlier nodes. A tape and its vars are confined to one thread; when
//! work is fanned out, each worker builds its own tape and the results are
//! merged in a fixed order.

use std::ops::Range;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_FLOOR: f64 = 1e-300;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    MulScalarVar { x: Var, s: Var },
    Hadamard { a: Var, b: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    SoftmaxRows { x: Var },
    Gelu { x: Var },
    Relu { x: Var },
    Sqrt { x: Var },
    Ln { x: Var },
    SliceRows { x: Var, range: Range<usize> },
    SliceCols { x: Var, range: Range<usize> },
    ConcatRows { xs: Vec<Var> },
    ConcatCols { xs: Vec<Var> },
    SumAll { x: Var },
    MeanAll { x: Var },
    Lookup { table: Var, indices: Vec<usize> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    GatherRowCols { x: Var, cols: Vec<usize> },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Records a computation so its gradients can be replayed backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    matmul_flops: u64,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, if any path reached it. Vars that never influenced
    /// the loss (or require no grad) have `None`, meaning exactly zero.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total floating-point operations of all matrix products so far,
    /// counting one multiply-accumulate as two operations.
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a differentiable leaf (a parameter).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// Registers a non-differentiable leaf (data, masks, noise).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = Tensor::matmul(self.value(a), ta, self.value(b), tb)?;
        let (m, n) = (out.rows(), out.cols());
        let k = if ta { self.value(a).rows() } else { self.value(a).cols() };
        self.matmul_flops += 2 * (m as u64) * (k as u64) * (n as u64);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Matmul { a, b, ta, tb }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(CoreError::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", x.shape(), y.shape()),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(u, v)| u + v).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Add { a, b }))
    }

    /// `x - y`, built from `add` and `scale`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Adds a bias vector (shape `[cols]` or `[1, cols]`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(CoreError::Shape {
                op: "add_bias",
                detail: format!("x {:?}, bias {:?}", xv.shape(), bv.shape()),
            });
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, ng, Op::AddBias { x, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v + c).collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::AddConst { x })
    }

    /// Multiplies every element of `x` by the single-element var `s`.
    /// Gradients flow to both operands, which is what lets gate logits learn
    /// through the mixture coefficients.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(CoreError::Shape {
                op: "mul_scalar_var",
                detail: format!("scalar operand has shape {:?}", self.value(s).shape()),
            });
        }
        let sv = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|v| v * sv).collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(out, ng, Op::MulScalarVar { x, s }))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(CoreError::Shape {
                op: "hadamard",
                detail: format!("{:?} vs {:?}", x.shape(), y.shape()),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(u, v)| u * v).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Hadamard { a, b }))
    }

    /// Row-wise layer normalization with learnable scale and shift.
    /// Uses the biased variance and adds `eps` under the square root.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.len() != c || bv.len() != c {
            return Err(CoreError::Shape {
                op: "layernorm",
                detail: format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            });
        }
        let mut xhat = Tensor::zeros(&[r, c]);
        let mut inv_std = vec![0.0f64; r];
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat.set(i, j, xh);
                out.set(i, j, gv.data()[j] * xh + bv.data()[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            ng,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row-wise softmax, stabilized by subtracting the row max.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = xv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out.set(i, j, e);
                sum += e;
            }
            for j in 0..c {
                let v = out.at(i, j) / sum;
                out.set(i, j, v);
            }
        }
        let ng = self.needs(x);
        self.push(out, ng, Op::SoftmaxRows { x })
    }

    /// GELU in its tanh form: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| {
                let u = GELU_C * (v + GELU_A * v * v * v);
                0.5 * v * (1.0 + u.tanh())
            })
            .collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::Gelu { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::Relu { x })
    }

    /// Element-wise square root; negative inputs clamp to zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(0.0).sqrt())
            .collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::Sqrt { x })
    }

    /// Element-wise natural log, floored far below any probability the
    /// losses can produce.
    pub fn ln(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(LN_FLOOR).ln())
            .collect::<Vec<_>>();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(out, ng, Op::Ln { x })
    }

    pub fn slice_rows(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if range.end > r || range.start > range.end {
            return Err(CoreError::Shape {
                op: "slice_rows",
                detail: format!("range {range:?} on {r} rows"),
            });
        }
        let data = xv.data()[range.start * c..range.end * c].to_vec();
        let out = Tensor::new(vec![range.end - range.start, c], data)?;
        let ng = self.needs(x);
        Ok(self.push(out, ng, Op::SliceRows { x, range }))
    }

    pub fn slice_cols(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if range.end > c || range.start > range.end {
            return Err(CoreError::Shape {
                op: "slice_cols",
                detail: format!("range {range:?} on {c} cols"),
            });
        }
        let w = range.end - range.start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[range.clone()]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        let ng = self.needs(x);
        Ok(self.push(out, ng, Op::SliceCols { x, range }))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::Shape {
                op: "concat_rows",
                detail: "no inputs".into(),
            });
        }
        let c = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in xs {
            let t = self.value(v);
            if t.cols() != c {
                return Err(CoreError::Shape {
                    op: "concat_rows",
                    detail: format!("cols {} vs {}", t.cols(), c),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        let ng = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, ng, Op::ConcatRows { xs: xs.to_vec() }))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::Shape {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let r = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &v in xs {
                let t = self.value(v);
                if t.rows() != r {
                    return Err(CoreError::Shape {
                        op: "concat_cols",
                        detail: format!("rows {} vs {}", t.rows(), r),
                    });
                }
                data.extend_from_slice(t.row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        let ng = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, ng, Op::ConcatCols { xs: xs.to_vec() }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), ng, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum();
        let n = t.len() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s / n), ng, Op::MeanAll { x })
    }

    /// Gathers rows of `table` at `indices`. Backward scatter-adds, so a row
    /// referenced twice accumulates both contributions.
    pub fn lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = (t.rows(), t.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(CoreError::Shape {
                op: "lookup",
                detail: format!("index {bad} out of {r} rows"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        let ng = self.needs(table);
        Ok(self.push(
            out,
            ng,
            Op::Lookup {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Scales each row to unit Euclidean norm. Norms below `1e-12` are
    /// clamped; callers that must reject zero rows check before building.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut norms = vec![0.0f64; r];
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = xv.row(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms[i] = n;
            for j in 0..c {
                out.set(i, j, row[j] / n);
            }
        }
        let ng = self.needs(x);
        self.push(out, ng, Op::L2NormalizeRows { x, norms })
    }

    /// Picks one column per row: `out[i] = x[i, cols[i]]`.
    pub fn gather_row_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if cols.len() != r {
            return Err(CoreError::Shape {
                op: "gather_row_cols",
                detail: format!("{} indices for {r} rows", cols.len()),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(CoreError::Shape {
                op: "gather_row_cols",
                detail: format!("column {bad} out of {c}"),
            });
        }
        let data = cols.iter().enumerate().map(|(i, &j)| xv.at(i, j)).collect();
        let out = Tensor::new(vec![r], data)?;
        let ng = self.needs(x);
        Ok(self.push(
            out,
            ng,
            Op::GatherRowCols {
                x,
                cols: cols.to_vec(),
            },
        ))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, add: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (gv, av) in g.data_mut().iter_mut().zip(add.data()) {
                    *gv += av;
                }
            }
            slot => *slot = Some(add),
        }
    }

    /// Runs reverse accumulation from a scalar loss. Returns one gradient
    /// per var that both requires grad and influences the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(CoreError::Shape {
                op: "backward",
                detail: format!("loss has shape {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let dy = grads[id].take().unwrap();
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(dy); // keep leaf grads for the caller
                }
                Op::Matmul { a, b, ta, tb } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.needs(*a) {
                        let da = match (ta, tb) {
                            (false, false) => Tensor::matmul(&dy, false, bv, true)?,
                            (false, true) => Tensor::matmul(&dy, false, bv, false)?,
                            (true, false) => Tensor::matmul(bv, false, &dy, true)?,
                            (true, true) => Tensor::matmul(bv, true, &dy, true)?,
                        };
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = match (ta, tb) {
                            (false, false) => Tensor::matmul(av, true, &dy, false)?,
                            (false, true) => Tensor::matmul(&dy, true, av, false)?,
                            (true, false) => Tensor::matmul(av, false, &dy, false)?,
                            (true, true) => Tensor::matmul(&dy, true, av, true)?,
                        };
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, dy.clone());
                    self.accumulate(&mut grads, *b, dy);
                }
                Op::AddBias { x, b } => {
                    if self.needs(*b) {
                        let c = self.value(*b).len();
                        let mut db = Tensor::zeros(self.value(*b).shape());
                        for (i, v) in dy.data().iter().enumerate() {
                            db.data_mut()[i % c] += v;
                        }
                        self.accumulate(&mut grads, *b, db);
                    }
                    self.accumulate(&mut grads, *x, dy);
                }
                Op::Scale { x, c } => {
                    let data = dy.data().iter().map(|v| v * c).collect();
                    let dx = Tensor::new(dy.shape().to_vec(), data)?;
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::AddConst { x } => {
                    self.accumulate(&mut grads, *x, dy);
                }
                Op::MulScalarVar { x, s } => {
                    let sv = self.value(*s).data()[0];
                    if self.needs(*s) {
                        let ds: f64 = self
                            .value(*x)
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(xv, dv)| xv * dv)
                            .sum();
                        self.accumulate(&mut grads, *s, Tensor::scalar(ds));
                    }
                    if self.needs(*x) {
                        let data = dy.data().iter().map(|v| v * sv).collect();
                        let dx = Tensor::new(dy.shape().to_vec(), data)?;
                        self.accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Hadamard { a, b } => {
                    if self.needs(*a) {
                        let data = self
                            .value(*b)
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(bv, dv)| bv * dv)
                            .collect();
                        self.accumulate(&mut grads, *a, Tensor::new(dy.shape().to_vec(), data)?);
                    }
                    if self.needs(*b) {
                        let data = self
                            .value(*a)
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(av, dv)| av * dv)
                            .collect();
                        self.accumulate(&mut grads, *b, Tensor::new(dy.shape().to_vec(), data)?);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (r, c) = (dy.rows(), dy.cols());
                    let gv = self.value(*gamma);
                    if self.needs(*beta) {
                        let mut db = Tensor::zeros(&[c]);
                        for i in 0..r {
                            for j in 0..c {
                                db.data_mut()[j] += dy.at(i, j);
                            }
                        }
                        self.accumulate(&mut grads, *beta, db);
                    }
                    if self.needs(*gamma) {
                        let mut dg = Tensor::zeros(&[c]);
                        for i in 0..r {
                            for j in 0..c {
                                dg.data_mut()[j] += dy.at(i, j) * xhat.at(i, j);
                            }
                        }
                        self.accumulate(&mut grads, *gamma, dg);
                    }
                    if self.needs(*x) {
                        let mut dx = Tensor::zeros(&[r, c]);
                        for i in 0..r {
                            // dxhat = dy * gamma, then center against its
                            // mean and its xhat-weighted mean.
                            let mut m1 = 0.0f64;
                            let mut m2 = 0.0f64;
                            for j in 0..c {
                                let dxh = dy.at(i, j) * gv.data()[j];
                                m1 += dxh;
                                m2 += dxh * xhat.at(i, j);
                            }
                            m1 /= c as f64;
                            m2 /= c as f64;
                            for j in 0..c {
                                let dxh = dy.at(i, j) * gv.data()[j];
                                dx.set(i, j, inv_std[i] * (dxh - m1 - xhat.at(i, j) * m2));
                            }
                        }
                        self.accumulate(&mut grads, *x, dx);
                    }
                }
                Op::SoftmaxRows { x } => {
                    let y = &self.nodes[id].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut dx = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| dy.at(i, j) * y.at(i, j)).sum();
                        for j in 0..c {
                            dx.set(i, j, y.at(i, j) * (dy.at(i, j) - dot));
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &dv)| {
                            let u = GELU_C * (v + GELU_A * v * v * v);
                            let t = u.tanh();
                            let sech2 = 1.0 - t * t;
                            let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            dv * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du)
                        })
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &dv)| if v > 0.0 { dv } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Sqrt { x } => {
                    let y = &self.nodes[id].value;
                    let data = y
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&yv, &dv)| dv * 0.5 / yv.max(1e-12))
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Ln { x } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &dv)| dv / v.max(LN_FLOOR))
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::SliceRows { x, range } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(&[xv.rows(), xv.cols()]);
                    let c = xv.cols();
                    dx.data_mut()[range.start * c..range.end * c].copy_from_slice(dy.data());
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, range } => {
                    let xv = self.value(*x);
                    let (r, c) = (xv.rows(), xv.cols());
                    let w = range.end - range.start;
                    let mut dx = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        for j in 0..w {
                            dx.set(i, range.start + j, dy.at(i, j));
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::ConcatRows { xs } => {
                    let mut offset = 0;
                    for &v in xs {
                        let r = self.value(v).rows();
                        let c = self.value(v).cols();
                        if self.needs(v) {
                            let data = dy.data()[offset * c..(offset + r) * c].to_vec();
                            self.accumulate(&mut grads, v, Tensor::new(vec![r, c], data)?);
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols { xs } => {
                    let mut offset = 0;
                    for &v in xs {
                        let t = self.value(v);
                        let (r, w) = (t.rows(), t.cols());
                        if self.needs(v) {
                            let mut dx = Tensor::zeros(&[r, w]);
                            for i in 0..r {
                                for j in 0..w {
                                    dx.set(i, j, dy.at(i, offset + j));
                                }
                            }
                            self.accumulate(&mut grads, v, dx);
                        }
                        offset += w;
                    }
                }
                Op::SumAll { x } => {
                    let g = dy.data()[0];
                    let xv = self.value(*x);
                    self.accumulate(&mut grads, *x, Tensor::full(xv.shape(), g));
                }
                Op::MeanAll { x } => {
                    let xv = self.value(*x);
                    let g = dy.data()[0] / xv.len() as f64;
                    self.accumulate(&mut grads, *x, Tensor::full(xv.shape(), g));
                }
                Op::Lookup { table, indices } => {
                    let tv = self.value(*table);
                    let c = tv.cols();
                    let mut dt = Tensor::zeros(&[tv.rows(), c]);
                    for (i, &row) in indices.iter().enumerate() {
                        for j in 0..c {
                            dt.data_mut()[row * c + j] += dy.at(i, j);
                        }
                    }
                    self.accumulate(&mut grads, *table, dt);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &self.nodes[id].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut dx = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| y.at(i, j) * dy.at(i, j)).sum();
                        for j in 0..c {
                            dx.set(i, j, (dy.at(i, j) - y.at(i, j) * dot) / norms[i]);
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::GatherRowCols { x, cols } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(&[xv.rows(), xv.cols()]);
                    for (i, &j) in cols.iter().enumerate() {
                        dx.set(i, j, dy.data()[i]);
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let y = tape.softmax_rows(x);
        for i in 0..2 {
            let s: f64 = tape.value(y).row(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn layernorm_rows_have_zero_mean_unit_var() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[4, 8], 2.0, &mut rng));
        let g = tape.input(Tensor::full(&[8], 1.0));
        let b = tape.input(Tensor::zeros(&[8]));
        let y = tape.layernorm(x, g, b, 1e-5).unwrap();
        for i in 0..4 {
            let row = tape.value(y).row(i);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn backward_of_sum_of_squares_matches_two_x() {
        let x0 = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for (gv, xv) in g.data().iter().zip(x0.data()) {
            assert_abs_diff_eq!(gv, &(2.0 * xv), epsilon = 1e-12);
        }
    }

    #[test]
    fn two_backwards_sum_to_one_backward_of_doubled_loss() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let w0 = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let x0 = Tensor::randn(&[2, 3], 1.0, &mut rng);

        let run = |scale: f64| -> Tensor {
            let mut tape = Tape::new();
            let w = tape.input(w0.clone());
            let x = tape.constant(x0.clone());
            let y = tape.matmul(x, w, false, false).unwrap();
            let sq = tape.hadamard(y, y).unwrap();
            let m = tape.mean_all(sq);
            let loss = tape.scale(m, scale);
            let grads = tape.backward(loss).unwrap();
            grads.get(w).unwrap().clone()
        };

        let once = run(1.0);
        let twice = run(2.0);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lookup_accumulates_repeated_rows() {
        let mut tape = Tape::new();
        let table = tape.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let picked = tape.lookup(table, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(picked);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(table).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_subgraphs_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full(&[2, 2], 3.0));
        let w = tape.input(Tensor::full(&[2, 2], 1.0));
        let y = tape.add(c, w).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn matmul_flop_counter_counts_two_per_mac() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 4]));
        let b = tape.constant(Tensor::zeros(&[4, 5]));
        tape.matmul(a, b, false, false).unwrap();
        assert_eq!(tape.matmul_flops(), 2 * 3 * 4 * 5);
    }
}
