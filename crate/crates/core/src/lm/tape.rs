//! Reverse-mode automatic differentiation over dense 2-d arrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for the parameters that were
//! read through [`Tape::param`]. Scalars are 1×1 arrays.

use std::collections::HashMap;
use std::ops::Range;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, Axis, Zip};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    Gather(Var, Rc<[usize]>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Attention {
        qkv: Var,
        heads: usize,
        segments: Rc<[Range<usize>]>,
        probs: Vec<Array2<f64>>,
    },
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    LogSoftmax(Var),
    MeanRows(Var),
    Abs(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize, f64)>,
        probs: Array2<f64>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    Cosine(Var, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Parameter gradients indexed by parameter id; `None` for parameters the
/// loss does not depend on.
pub type ParamGrads = Vec<Option<Array2<f64>>>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn row_log_softmax(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
    row.mapv(|v| v - lse)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads parameter `id`. Repeated reads of the same id share one node.
    pub fn param(&mut self, id: usize, value: &Array2<f64>) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Rows `ids` of `src`, in order.
    pub fn gather(&mut self, src: Var, ids: Rc<[usize]>) -> Var {
        let value = self.value(src).select(Axis(0), &ids);
        self.push(value, Op::Gather(src, ids))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds the 1×n `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned 1×n scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mean = xv.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = centered * inv_std.view().insert_axis(Axis(1));
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `qkv` is T×3d with query, key and value blocks side by side. Each
    /// range in `segments` is one sequence; positions attend only to earlier
    /// or equal positions of their own sequence. Output is T×d.
    pub fn attention(&mut self, qkv: Var, heads: usize, segments: Rc<[Range<usize>]>) -> Var {
        let input = self.value(qkv);
        let d = input.ncols() / 3;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Array2::zeros((input.nrows(), d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in segments.iter() {
            for h in 0..heads {
                let q = input.slice(s![seg.clone(), h * hd..(h + 1) * hd]);
                let k = input.slice(s![seg.clone(), d + h * hd..d + (h + 1) * hd]);
                let v = input.slice(s![seg.clone(), 2 * d + h * hd..2 * d + (h + 1) * hd]);
                let mut p = q.dot(&k.t()) * scale;
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let mut total = 0.0;
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if j <= i { (*x - max).exp() } else { 0.0 };
                        total += *x;
                    }
                    row /= total;
                }
                out.slice_mut(s![seg.clone(), h * hd..(h + 1) * hd]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                qkv,
                heads,
                segments,
                probs,
            },
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(0), &rows);
        self.push(value, Op::SelectRows(a, rows))
    }

    pub fn select_cols(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(1), &cols);
        self.push(value, Op::SelectCols(a, cols))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros(src.raw_dim());
        for (mut out, row) in value.rows_mut().into_iter().zip(src.rows()) {
            out.assign(&row_log_softmax(row));
        }
        self.push(value, Op::LogSoftmax(a))
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::abs);
        self.push(value, Op::Abs(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Weighted negative log-likelihood `Σ w · −log softmax(logits[row])[target]`
    /// over `(row, target, weight)` triples.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize, f64)>) -> Var {
        let src = self.value(logits);
        let mut probs = Array2::zeros(src.raw_dim());
        for (mut out, row) in probs.rows_mut().into_iter().zip(src.rows()) {
            out.assign(&row_log_softmax(row).mapv(f64::exp));
        }
        let loss: f64 = targets
            .iter()
            .map(|&(r, t, w)| -w * row_log_softmax(src.row(r))[t])
            .sum();
        self.push(scalar(loss), Op::CrossEntropy { logits, targets, probs })
    }

    /// Mean binary cross-entropy of an n×1 logit column against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<f64>) -> Var {
        let z = self.value(logits);
        let n = labels.len() as f64;
        let loss: f64 = z
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(scalar(loss), Op::BceWithLogits { logits, labels })
    }

    /// Cosine similarity of two 1×n rows; 0 if either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, nb) = (av.mapv(|v| v * v).sum().sqrt(), bv.mapv(|v| v * v).sum().sqrt());
        let c = if na < 1e-12 || nb < 1e-12 {
            0.0
        } else {
            (av * bv).sum() / (na * nb)
        };
        self.push(scalar(c), Op::Cosine(a, b))
    }

    /// Gradients of the scalar `loss` with respect to every parameter read
    /// on this tape; the vector has `n_params` slots.
    pub fn backward(&self, loss: Var, n_params: usize) -> ParamGrads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));
        let mut out: ParamGrads = vec![None; n_params];

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out[*id] {
                    Some(existing) => *existing += &g,
                    slot => *slot = Some(g),
                },
                Op::Gather(src, ids) => {
                    let mut d = Array2::zeros(self.value(*src).raw_dim());
                    for (row, &id) in g.rows().into_iter().zip(ids.iter()) {
                        let mut target = d.row_mut(id);
                        target += &row;
                    }
                    acc(&mut grads, *src, d);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Gelu(a) => {
                    let mut d = self.value(*a).mapv(gelu_grad);
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gamma);
                    let n = dxhat.ncols() as f64;
                    let m1 = dxhat.sum_axis(Axis(1)) / n;
                    let m2 = (&dxhat * xhat).sum_axis(Axis(1)) / n;
                    let mut dx = dxhat;
                    Zip::from(dx.rows_mut())
                        .and(xhat.rows())
                        .and(&m1)
                        .and(&m2)
                        .and(inv_std)
                        .for_each(|mut row, xh, &a, &b, &s| {
                            Zip::from(&mut row).and(&xh).for_each(|v, &x| {
                                *v = s * (*v - a - x * b);
                            });
                        });
                    acc(&mut grads, *x, dx);
                }
                Op::Attention {
                    qkv,
                    heads,
                    segments,
                    probs,
                } => {
                    let input = self.value(*qkv);
                    let d = input.ncols() / 3;
                    let hd = d / heads;
                    let scale = 1.0 / (hd as f64).sqrt();
                    let mut dqkv = Array2::zeros(input.raw_dim());
                    let mut k_iter = probs.iter();
                    for seg in segments.iter() {
                        for h in 0..*heads {
                            let p = k_iter.next().expect("one prob matrix per segment and head");
                            let (qc, kc, vc) = (h * hd, d + h * hd, 2 * d + h * hd);
                            let q = input.slice(s![seg.clone(), qc..qc + hd]);
                            let k = input.slice(s![seg.clone(), kc..kc + hd]);
                            let v = input.slice(s![seg.clone(), vc..vc + hd]);
                            let go = g.slice(s![seg.clone(), h * hd..(h + 1) * hd]);
                            let dp = go.dot(&v.t());
                            let dv = p.t().dot(&go);
                            let row_dot = (&dp * p).sum_axis(Axis(1));
                            let ds = (dp - &row_dot.insert_axis(Axis(1))) * p * scale;
                            let dq = ds.dot(&k);
                            let dk = ds.t().dot(&q);
                            let mut block = dqkv.slice_mut(s![seg.clone(), qc..qc + hd]);
                            block += &dq;
                            let mut block = dqkv.slice_mut(s![seg.clone(), kc..kc + hd]);
                            block += &dk;
                            let mut block = dqkv.slice_mut(s![seg.clone(), vc..vc + hd]);
                            block += &dv;
                        }
                    }
                    acc(&mut grads, *qkv, dqkv);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SelectRows(a, rows) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (row, &r) in g.rows().into_iter().zip(rows) {
                        let mut target = d.row_mut(r);
                        target += &row;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SelectCols(a, cols) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (col, &c) in g.columns().into_iter().zip(cols) {
                        let mut target = d.column_mut(c);
                        target += &col;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let soft = node.value.mapv(f64::exp);
                    let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = &g - &(soft * &total);
                    acc(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let d = Array2::from_shape_fn((n, g.ncols()), |(_, j)| g[[0, j]] / n as f64);
                    acc(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = &g * &self.value(*a).mapv(f64::signum);
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let g0 = g[[0, 0]];
                    let mut d = Array2::zeros(probs.raw_dim());
                    for &(r, t, w) in targets {
                        let mut row = d.row_mut(r);
                        row.scaled_add(w * g0, &probs.row(r));
                        row[t] -= w * g0;
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::BceWithLogits { logits, labels } => {
                    let g0 = g[[0, 0]] / labels.len() as f64;
                    let z = self.value(*logits);
                    let mut d = Array2::zeros(z.raw_dim());
                    for ((dv, &zv), &y) in d.iter_mut().zip(z.iter()).zip(labels) {
                        *dv = g0 * (1.0 / (1.0 + (-zv).exp()) - y);
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let na = av.mapv(|v| v * v).sum().sqrt();
                    let nb = bv.mapv(|v| v * v).sum().sqrt();
                    if na >= 1e-12 && nb >= 1e-12 {
                        let c = node.value[[0, 0]];
                        let g0 = g[[0, 0]];
                        let ga = (bv / (na * nb) - av * (c / (na * na))) * g0;
                        let gb = (av / (na * nb) - bv * (c / (nb * nb))) * g0;
                        acc(&mut grads, *a, ga);
                        acc(&mut grads, *b, gb);
                    }
                }
            }
        }
        out
    }
}
